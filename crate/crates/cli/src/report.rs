use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use twopass_core::eval::{evaluate, sxs_compare, write_tsv, EvalReport, Scored, SxsReport};
use twopass_core::first_pass::Hypothesis;
use twopass_core::latency::{
    decoder_bytes, latency_report, Accounting, LatencyReport, UtteranceWork, DEFAULT_BANDWIDTH, DEFAULT_DECODER_BYTES,
};

use crate::config::RunConfig;
use crate::decode::NbestLine;
use crate::error::{CliError, CliResult};
use crate::io::{read_jsonl, write_file};
use crate::train::load_model;

/// Reference line: any JSON object with an id and a transcript, so corpus
/// splits and decode outputs both serve.
#[derive(Deserialize)]
struct RefLine {
    id: String,
    #[serde(alias = "reference")]
    text: String,
}

#[derive(Deserialize)]
struct HypLine {
    id: String,
    hypothesis: String,
    #[serde(default)]
    candidates: Option<Vec<String>>,
}

fn read_refs(path: &Path) -> CliResult<Vec<RefLine>> {
    read_jsonl(path)
}

/// Hypotheses reordered to follow `refs`; every reference needs exactly one.
fn aligned(refs: &[RefLine], path: &Path) -> CliResult<Vec<HypLine>> {
    let mut by_id: HashMap<String, HypLine> = HashMap::new();
    for h in read_jsonl::<HypLine>(path)? {
        let id = h.id.clone();
        if by_id.insert(id.clone(), h).is_some() {
            return Err(CliError::data(format!("{}: utterance {id} appears twice", path.display())));
        }
    }
    let out = refs
        .iter()
        .map(|r| {
            by_id
                .remove(&r.id)
                .ok_or_else(|| CliError::data(format!("{}: no hypothesis for utterance {}", path.display(), r.id)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    if let Some(extra) = by_id.keys().min() {
        return Err(CliError::data(format!("{}: utterance {extra} has no reference", path.display())));
    }
    Ok(out)
}

pub fn evaluate_cmd(refs: &Path, hyps: &Path, tsv: Option<&Path>) -> CliResult<EvalReport> {
    let refs = read_refs(refs)?;
    let hyps = aligned(&refs, hyps)?;
    let items: Vec<Scored<'_>> = refs
        .iter()
        .zip(&hyps)
        .map(|(r, h)| Scored {
            id: &r.id,
            reference: &r.text,
            hypothesis: &h.hypothesis,
            candidates: h.candidates.as_deref(),
        })
        .collect();
    let report = evaluate(&items)?;
    if let Some(p) = tsv {
        let mut buf = Vec::new();
        write_tsv(&mut buf, &report)?;
        write_file(p, &buf)?;
    }
    eprintln!("{:<8} {:>8.2}", "wer", report.wer);
    eprintln!("{:<8} {:>8}", "sub", report.substitutions);
    eprintln!("{:<8} {:>8}", "ins", report.insertions);
    eprintln!("{:<8} {:>8}", "del", report.deletions);
    eprintln!("{:<8} {:>8}", "words", report.ref_words);
    if let Some(o) = report.oracle_wer {
        eprintln!("{:<8} {:>8.2}", "oracle", o);
    }
    Ok(report)
}

pub fn sxs_cmd(refs: &Path, a: &Path, b: &Path) -> CliResult<SxsReport> {
    let refs = read_refs(refs)?;
    let ha: Vec<String> = aligned(&refs, a)?.into_iter().map(|h| h.hypothesis).collect();
    let hb: Vec<String> = aligned(&refs, b)?.into_iter().map(|h| h.hypothesis).collect();
    let texts: Vec<String> = refs.into_iter().map(|r| r.text).collect();
    let r = sxs_compare(&texts, &ha, &hb)?;
    eprintln!("{:<10} {:>6}", "utterances", r.utterances);
    eprintln!("{:<10} {:>6} ({:.1}%)", "changed", r.changed, r.changed_pct);
    eprintln!("{:<10} {:>6}", "wins", r.wins);
    eprintln!("{:<10} {:>6}", "losses", r.losses);
    eprintln!("{:<10} {:>6}", "neutral", r.neutral);
    Ok(r)
}

pub struct LatencyArgs {
    pub dump: PathBuf,
    pub mode: Accounting,
    pub tokens: Option<u64>,
    pub decoder_bytes: Option<u64>,
    pub weights: Option<PathBuf>,
    pub bandwidth: Option<u64>,
}

/// Prices an N-best dump. The decoder size comes from `--decoder-bytes`,
/// else from the weight file, else the production attention-decoder size.
pub fn latency_cmd(cfg: &RunConfig, a: &LatencyArgs) -> CliResult<LatencyReport> {
    let lines: Vec<NbestLine> = read_jsonl(&a.dump)?;
    if lines.is_empty() {
        return Err(CliError::data(format!("{}: empty dump", a.dump.display())));
    }
    let mut order = Vec::new();
    let mut groups: BTreeMap<String, Vec<NbestLine>> = BTreeMap::new();
    for l in lines {
        if !groups.contains_key(&l.id) {
            order.push(l.id.clone());
        }
        groups.entry(l.id.clone()).or_default().push(l);
    }
    let mut work = Vec::with_capacity(order.len());
    for id in order {
        let mut g = groups.remove(&id).expect("grouped above");
        g.sort_by_key(|l| l.rank);
        let hyps: Vec<Hypothesis> = g.into_iter().map(|l| Hypothesis::new(l.tokens, l.score)).collect();
        work.push(UtteranceWork::from_hypotheses(id, &hyps)?);
    }
    let bytes = match (a.decoder_bytes, &a.weights) {
        (Some(b), _) => b,
        (None, Some(w)) => decoder_bytes(load_model(cfg, w)?.weights()),
        (None, None) => DEFAULT_DECODER_BYTES,
    };
    let r = latency_report(&work, a.mode, a.tokens, bytes, a.bandwidth.unwrap_or(DEFAULT_BANDWIDTH))?;
    eprintln!("{:<12} {:>10} {:>10}", "id", "nbest_ms", "lattice_ms");
    for u in &r.per_utt {
        eprintln!("{:<12} {:>10.1} {:>10.1}", u.id, u.nbest_ms, u.lattice_ms);
    }
    eprintln!("{:<12} {:>10.1} {:>10.1}", "p90", r.p90_nbest_ms, r.p90_lattice_ms);
    eprintln!("budget {} ms: {}", r.budget_ms, if r.within_budget { "within" } else { "over" });
    Ok(r)
}
