use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use twopass_core::data::{read_phrases, read_utterance_file, read_vocab, Split, Utterance, Vocab};
use twopass_core::eval::{evaluate, phrase_trie, EvalReport, Scored};
use twopass_core::first_pass::{beam_search, count_arcs, BeamConfig, Hypothesis, Lattice};
use twopass_core::latency::{decoder_bytes, latency_report, Accounting, UtteranceWork, DEFAULT_BANDWIDTH};
use twopass_core::model::Model;
use twopass_core::second_pass::{las_beam_search, rescore_lattice, rescore_nbest, RescoreConfig};

use crate::config::RunConfig;
use crate::error::{at_path, CliError, CliResult};
use crate::io::{write_file, write_jsonl};
use crate::train::load_model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Rnnt,
    LasBeam,
    Rescore,
}

pub struct DecodeArgs {
    pub weights: PathBuf,
    pub data: PathBuf,
    pub split: Split,
    pub input: Option<PathBuf>,
    pub mode: Mode,
    pub beam: Option<usize>,
    pub adaptive_threshold: Option<f64>,
    pub rescore_k: Option<usize>,
    pub las_beam: Option<usize>,
    pub biasing: Option<PathBuf>,
    pub bias_weight: Option<f64>,
    pub out: Option<PathBuf>,
    pub nbest_dump: Option<PathBuf>,
    pub lattice_dump: Option<PathBuf>,
    pub latency_out: Option<PathBuf>,
    pub decoder_bytes: Option<u64>,
    pub jobs: usize,
}

/// One decoded utterance as written to the hypothesis file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub tokens: Vec<u32>,
    /// Every candidate the final pick was made from, best first.
    pub candidates: Vec<String>,
    /// Second-pass work; absent for modes without first-pass candidates.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub work: Option<UtteranceWork>,
}

/// One line of the N-best dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbestLine {
    pub id: String,
    pub rank: usize,
    pub tokens: Vec<u32>,
    pub score: f64,
}

/// Marker that precedes each lattice in the lattice dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeMarker {
    pub id: String,
    pub arcs: usize,
}

struct Decoded {
    record: DecodeRecord,
    first_pass: Vec<Hypothesis>,
    lattice: Option<Lattice>,
}

#[derive(Serialize)]
pub struct DecodeSummary {
    pub mode: Mode,
    pub utterances: usize,
    pub wer: f64,
    pub oracle_wer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_p90_ms: Option<f64>,
}

fn decode_one(model: &Model, u: &Utterance, vocab: &Vocab, mode: Mode, beam: &BeamConfig, rc: &RescoreConfig) -> CliResult<Decoded> {
    let enc = model.encode(&u.features()?)?;
    let text = |t: &[u32]| vocab.detokenize(t);
    let (tokens, candidates, first_pass, lattice, work) = match mode {
        Mode::LasBeam => {
            let hyps = las_beam_search(model, &enc, rc)?;
            let cands = hyps.iter().map(|h| text(&h.tokens)).collect::<Result<Vec<_>, _>>()?;
            (hyps[0].tokens.clone(), cands, Vec::new(), None, None)
        }
        Mode::Rnnt | Mode::Rescore => {
            let out = beam_search(model, &enc, beam)?;
            let hyps = out.hypotheses;
            if mode == Mode::Rnnt {
                let cands = hyps.iter().map(|h| text(&h.tokens)).collect::<Result<Vec<_>, _>>()?;
                let work = UtteranceWork::from_hypotheses(&u.id, &hyps)?;
                (hyps[0].tokens.clone(), cands, hyps, Some(out.lattice), Some(work))
            } else {
                let top = &hyps[..hyps.len().min(rc.rescore_k)];
                let (res, work) = if beam.adaptive_threshold.is_some() {
                    let res = rescore_lattice(model, &out.lattice, &enc, rc)?;
                    let sub = out.lattice.restrict_top_k(rc.rescore_k)?;
                    let w = UtteranceWork {
                        id: u.id.clone(),
                        hypotheses: res.hypotheses.len() as u64,
                        token_steps: res.hypotheses.iter().map(|h| h.tokens.len() as u64).sum(),
                        arcs: count_arcs(&sub) as u64,
                    };
                    (res, w)
                } else {
                    (rescore_nbest(model, top, &enc, rc)?, UtteranceWork::from_hypotheses(&u.id, top)?)
                };
                let cands = res.hypotheses.iter().map(|h| text(&h.tokens)).collect::<Result<Vec<_>, _>>()?;
                (res.best().tokens.clone(), cands, hyps, Some(out.lattice), Some(work))
            }
        }
    };
    Ok(Decoded {
        record: DecodeRecord {
            id: u.id.clone(),
            reference: u.text.clone(),
            hypothesis: text(&tokens)?,
            tokens,
            candidates,
            work,
        },
        first_pass,
        lattice,
    })
}

fn validate(a: &DecodeArgs) -> CliResult<()> {
    if a.mode == Mode::LasBeam && a.adaptive_threshold.is_some() {
        return Err(CliError::usage("--adaptive-threshold applies to the first pass and cannot be used with --mode las-beam"));
    }
    if a.mode == Mode::LasBeam && (a.biasing.is_some() || a.nbest_dump.is_some() || a.lattice_dump.is_some()) {
        return Err(CliError::usage("--mode las-beam runs no first pass, so biasing and first-pass dumps do not apply"));
    }
    if a.jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    Ok(())
}

pub fn run(cfg: &RunConfig, a: &DecodeArgs) -> CliResult<DecodeSummary> {
    validate(a)?;
    let model = load_model(cfg, &a.weights)?;
    let vocab = at_path(&a.data, read_vocab(&a.data))?;
    let input = a.input.clone().unwrap_or_else(|| a.data.join(a.split.file_name()));
    let utts = at_path(&input, read_utterance_file(&input))?;
    if utts.is_empty() {
        return Err(CliError::data(format!("{}: no utterances", input.display())));
    }
    let mut beam = cfg.decode.beam();
    if let Some(b) = a.beam {
        beam.beam_size = b;
    }
    if a.adaptive_threshold.is_some() {
        beam.adaptive_threshold = a.adaptive_threshold;
    }
    if let Some(w) = a.bias_weight {
        beam.bias_weight = w;
    }
    if let Some(p) = &a.biasing {
        let phrases = at_path(p, read_phrases(p))?;
        beam.biasing = Some(Arc::new(phrase_trie(&vocab, &phrases)?));
    }
    beam.validate()?;
    let mut rc = cfg.decode.rescore();
    if let Some(k) = a.rescore_k {
        rc.rescore_k = k;
    }
    if let Some(w) = a.las_beam {
        rc.las_beam_size = w;
    }
    rc.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    let decoded: Vec<Decoded> = pool.install(|| {
        utts.par_iter()
            .map(|u| decode_one(&model, u, &vocab, a.mode, &beam, &rc))
            .collect::<CliResult<Vec<_>>>()
    })?;
    let records: Vec<DecodeRecord> = decoded.iter().map(|d| d.record.clone()).collect();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &records)?;
    match &a.out {
        Some(p) => write_file(p, &buf)?,
        None => std::io::stdout().lock().write_all(&buf)?,
    }
    if let Some(p) = &a.nbest_dump {
        let lines: Vec<NbestLine> = decoded
            .iter()
            .flat_map(|d| {
                d.first_pass.iter().enumerate().map(|(rank, h)| NbestLine {
                    id: d.record.id.clone(),
                    rank,
                    tokens: h.tokens.clone(),
                    score: h.total_score,
                })
            })
            .collect();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &lines)?;
        write_file(p, &buf)?;
    }
    if let Some(p) = &a.lattice_dump {
        let mut buf = Vec::new();
        for d in &decoded {
            if let Some(l) = &d.lattice {
                write_jsonl(&mut buf, &[LatticeMarker { id: d.record.id.clone(), arcs: count_arcs(l) }])?;
                l.write_jsonl(&mut buf)?;
            }
        }
        write_file(p, &buf)?;
    }
    let report = score(&records)?;
    let latency_p90_ms = match &a.latency_out {
        Some(p) if a.mode != Mode::LasBeam => {
            let work: Vec<UtteranceWork> = records.iter().filter_map(|r| r.work.clone()).collect();
            let mode = if a.mode == Mode::Rescore && beam.adaptive_threshold.is_some() {
                Accounting::Lattice
            } else {
                Accounting::Nbest
            };
            let bytes = a.decoder_bytes.unwrap_or_else(|| decoder_bytes(model.weights()));
            let lr = latency_report(&work, mode, None, bytes, DEFAULT_BANDWIDTH)?;
            write_file(p, (serde_json::to_string_pretty(&lr)? + "\n").as_bytes())?;
            Some(lr.p90_ms)
        }
        Some(_) => return Err(CliError::usage("--latency-out needs a first pass; --mode las-beam has none")),
        None => None,
    };
    eprintln!("{:<10} {:>8.2}", "wer", report.wer);
    if let Some(o) = report.oracle_wer {
        eprintln!("{:<10} {:>8.2}", "oracle", o);
    }
    Ok(DecodeSummary {
        mode: a.mode,
        utterances: records.len(),
        wer: report.wer,
        oracle_wer: report.oracle_wer,
        latency_p90_ms,
    })
}

pub fn score(records: &[DecodeRecord]) -> CliResult<EvalReport> {
    let items: Vec<Scored<'_>> = records
        .iter()
        .map(|r| Scored {
            id: &r.id,
            reference: &r.reference,
            hypothesis: &r.hypothesis,
            candidates: Some(&r.candidates),
        })
        .collect();
    Ok(evaluate(&items)?)
}
