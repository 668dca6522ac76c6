use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use twopass_core::data::{generate, write_corpus};

use crate::config::RunConfig;
use crate::error::{at_path, CliResult};

#[derive(Serialize)]
pub struct GenSummary {
    pub seed: u64,
    pub vocab_size: usize,
    pub phrases: usize,
    pub splits: BTreeMap<String, usize>,
}

pub fn run(cfg: &RunConfig, out: &Path) -> CliResult<GenSummary> {
    let corpus = generate(&cfg.corpus)?;
    at_path(out, write_corpus(out, &corpus))?;
    let splits = corpus.splits.iter().map(|(s, u)| (s.name().to_string(), u.len())).collect();
    for (s, u) in &corpus.splits {
        eprintln!("{:<10} {:>6} utterances", s.name(), u.len());
    }
    Ok(GenSummary {
        seed: cfg.corpus.seed,
        vocab_size: corpus.vocab.len(),
        phrases: corpus.phrases.len(),
        splits,
    })
}
