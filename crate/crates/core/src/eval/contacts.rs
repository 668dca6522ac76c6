use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{edit_distance, rate, words};
use crate::data::{Utterance, Vocab};
use crate::error::{Error, Result};
use crate::first_pass::{beam_search, BeamConfig, BiasingTrie};
use crate::model::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactsReport {
    pub utterances: usize,
    pub wer_unbiased: f64,
    pub wer_biased: f64,
    /// `(id, unbiased, biased)` top hypotheses.
    pub decodes: Vec<(String, String, String)>,
}

/// Trie over the tokenised phrases.
pub fn phrase_trie(vocab: &Vocab, phrases: &[String]) -> Result<BiasingTrie> {
    if phrases.is_empty() {
        return Err(Error::EmptyInput("biasing phrases"));
    }
    let tokens = phrases.iter().map(|p| vocab.tokenize(p)).collect::<Result<Vec<_>>>()?;
    Ok(BiasingTrie::new(tokens.iter().map(Vec::as_slice)))
}

/// Decodes every utterance with `cfg` minus biasing, then with biasing
/// towards `phrases` at `bias_weight`, and scores both against the text.
pub fn contacts_eval(
    model: &Model,
    utts: &[Utterance],
    vocab: &Vocab,
    cfg: &BeamConfig,
    phrases: &[String],
    bias_weight: f64,
) -> Result<ContactsReport> {
    let trie = Arc::new(phrase_trie(vocab, phrases)?);
    let plain = BeamConfig { biasing: None, ..cfg.clone() };
    let biased = BeamConfig { biasing: Some(trie), bias_weight, ..cfg.clone() };
    let (mut errs_plain, mut errs_biased, mut ref_words) = (0, 0, 0);
    let mut decodes = Vec::with_capacity(utts.len());
    for u in utts {
        let enc = model.encode(&u.features()?)?;
        let top = |c: &BeamConfig| -> Result<String> {
            let out = beam_search(model, &enc, c)?;
            vocab.detokenize(&out.hypotheses[0].tokens)
        };
        let (a, b) = (top(&plain)?, top(&biased)?);
        let r = words(&u.text);
        errs_plain += edit_distance(&r, &words(&a)).errors();
        errs_biased += edit_distance(&r, &words(&b)).errors();
        ref_words += r.len();
        decodes.push((u.id.clone(), a, b));
    }
    Ok(ContactsReport {
        utterances: utts.len(),
        wer_unbiased: rate(errs_plain, ref_words),
        wer_biased: rate(errs_biased, ref_words),
        decodes,
    })
}
