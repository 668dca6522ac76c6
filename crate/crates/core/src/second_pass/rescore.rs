use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{LasRunner, RescoreConfig, COVERAGE_FLOOR};
use crate::error::{Error, Result};
use crate::first_pass::{nbest_from_lattice, rank_order, Hypothesis, Lattice};
use crate::model::{check_token, EncoderOutput, LasState, Model, BLANK, EOS, SOS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescoredHypothesis {
    pub tokens: Vec<u32>,
    pub rnnt_score: f64,
    pub las_logprob: f64,
    pub coverage: f64,
    pub final_score: f64,
    pub rank_first_pass: usize,
    pub rank_final: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RescoreOutput {
    /// Sorted by `final_score`.
    pub hypotheses: Vec<RescoredHypothesis>,
    /// Decoder steps fed with a word piece (the step fed `sos` excluded).
    pub las_steps: usize,
}

impl RescoreOutput {
    pub fn best(&self) -> &RescoredHypothesis {
        &self.hypotheses[0]
    }
}

/// `Σ_t max(log(min(Σ_u α[u][t], τ)), floor)`.
pub fn coverage(alphas: &[Vec<f64>], clip: f64) -> f64 {
    let frames = alphas.first().map_or(0, |a| a.len());
    let mut mass = vec![0.0; frames];
    for row in alphas {
        for (m, a) in mass.iter_mut().zip(row) {
            *m += a;
        }
    }
    coverage_of_mass(&mass, clip)
}

fn coverage_of_mass(mass: &[f64], clip: f64) -> f64 {
    mass.iter().map(|&m| m.min(clip).ln().max(COVERAGE_FLOOR)).sum()
}

fn check_sequence(tokens: &[u32], vocab: usize) -> Result<()> {
    for &t in tokens {
        check_token(t, vocab)?;
        if t == BLANK || t == SOS || t == EOS {
            return Err(Error::InvalidArgument(format!("special token {t} inside a sequence")));
        }
    }
    Ok(())
}

/// Teacher-forced `log P(tokens, eos | e)` with the head-averaged attention
/// of every step (`|tokens| + 1` rows).
pub fn las_sequence_logprob(model: &Model, tokens: &[u32], enc: &EncoderOutput) -> Result<(f64, Vec<Vec<f64>>)> {
    check_sequence(tokens, model.config().vocab_size)?;
    let mut run = LasRunner::new(model, enc)?;
    let mut state = run.initial()?;
    let mut prev = SOS;
    let mut lp = 0.0;
    let mut alphas = Vec::with_capacity(tokens.len() + 1);
    for &next in tokens.iter().chain(std::iter::once(&EOS)) {
        let s = run.step(&state, prev)?;
        lp += s.log_probs[next as usize];
        alphas.push(s.alpha);
        state = s.state;
        prev = next;
    }
    Ok((lp, alphas))
}

fn final_score(cfg: &RescoreConfig, las: f64, cov: f64, rnnt: f64) -> f64 {
    let s = las + cfg.coverage_weight * cov;
    match cfg.rnnt_weight {
        Some(w) => s + w * rnnt,
        None => s,
    }
}

fn rank(mut hyps: Vec<RescoredHypothesis>) -> Vec<RescoredHypothesis> {
    hyps.sort_by(|a, b| rank_order(a.final_score, &a.tokens, b.final_score, &b.tokens));
    for (i, h) in hyps.iter_mut().enumerate() {
        h.rank_final = i;
    }
    hyps
}

/// Rescores the first `rescore_k` hypotheses (already in first-pass order).
pub fn rescore_nbest(model: &Model, hyps: &[Hypothesis], enc: &EncoderOutput, cfg: &RescoreConfig) -> Result<RescoreOutput> {
    cfg.validate()?;
    if hyps.is_empty() {
        return Err(Error::EmptyInput("rescore_nbest"));
    }
    let mut run = LasRunner::new(model, enc)?;
    let mut out = Vec::new();
    let mut steps = 0;
    for (rank_first_pass, h) in hyps.iter().take(cfg.rescore_k).enumerate() {
        check_sequence(&h.tokens, run.vocab())?;
        let mut state = run.initial()?;
        let mut prev = SOS;
        let mut lp = 0.0;
        let mut mass = vec![0.0; enc.frames()];
        for &next in h.tokens.iter().chain(std::iter::once(&EOS)) {
            let s = run.step(&state, prev)?;
            if prev != SOS {
                steps += 1;
            }
            lp += s.log_probs[next as usize];
            for (m, a) in mass.iter_mut().zip(&s.alpha) {
                *m += a;
            }
            state = s.state;
            prev = next;
        }
        let cov = coverage_of_mass(&mass, cfg.coverage_clip);
        out.push(RescoredHypothesis {
            tokens: h.tokens.clone(),
            rnnt_score: h.total_score,
            las_logprob: lp,
            coverage: cov,
            final_score: final_score(cfg, lp, cov, h.total_score),
            rank_first_pass,
            rank_final: 0,
        });
    }
    Ok(RescoreOutput {
        hypotheses: rank(out),
        las_steps: steps,
    })
}

struct NodeState {
    state: LasState,
    /// Distribution over the token after this prefix.
    next: Vec<f64>,
    logprob: f64,
    mass: Vec<f64>,
}

/// Rescores the top `rescore_k` lattice paths, running the decoder once per
/// prefix node.
pub fn rescore_lattice(model: &Model, lattice: &Lattice, enc: &EncoderOutput, cfg: &RescoreConfig) -> Result<RescoreOutput> {
    cfg.validate()?;
    if lattice.is_empty() {
        return Err(Error::EmptyInput("rescore_lattice"));
    }
    let sub = lattice.restrict_top_k(cfg.rescore_k)?;
    let ranked = nbest_from_lattice(&sub, cfg.rescore_k)?;
    let mut run = LasRunner::new(model, enc)?;
    let mut nodes: Vec<NodeState> = Vec::with_capacity(sub.num_nodes());
    let mut steps = 0;
    let init = run.initial()?;
    let root = run.step(&init, SOS)?;
    let mut mass = vec![0.0; enc.frames()];
    for (m, a) in mass.iter_mut().zip(&root.alpha) {
        *m += a;
    }
    nodes.push(NodeState {
        state: root.state,
        next: root.log_probs,
        logprob: 0.0,
        mass,
    });
    // Parents precede children, so one pass in id order suffices.
    for n in 1..sub.num_nodes() {
        let arc = *sub.incoming(n).expect("non-root node has an arc");
        check_sequence(&[arc.token], run.vocab())?;
        let parent = &nodes[arc.from];
        let logprob = parent.logprob + parent.next[arc.token as usize];
        let state = parent.state.clone();
        let mut mass = parent.mass.clone();
        let s = run.step(&state, arc.token)?;
        steps += 1;
        for (m, a) in mass.iter_mut().zip(&s.alpha) {
            *m += a;
        }
        nodes.push(NodeState {
            state: s.state,
            next: s.log_probs,
            logprob,
            mass,
        });
    }
    let mut out = Vec::with_capacity(ranked.len());
    for (rank_first_pass, h) in ranked.into_iter().enumerate() {
        let node = sub
            .finals()
            .iter()
            .find(|f| sub.tokens_to(f.node) == h.tokens)
            .expect("ranked path is final")
            .node;
        let ns = &nodes[node];
        let lp = ns.logprob + ns.next[EOS as usize];
        let cov = coverage_of_mass(&ns.mass, cfg.coverage_clip);
        out.push(RescoredHypothesis {
            tokens: h.tokens,
            rnnt_score: h.total_score,
            las_logprob: lp,
            coverage: cov,
            final_score: final_score(cfg, lp, cov, h.total_score),
            rank_first_pass,
            rank_final: 0,
        });
    }
    Ok(RescoreOutput {
        hypotheses: rank(out),
        las_steps: steps,
    })
}

/// One JSON object per line, in final-rank order.
pub fn write_rescore_report(out: &mut impl Write, hyps: &[RescoredHypothesis]) -> Result<()> {
    for h in hyps {
        serde_json::to_writer(&mut *out, h)?;
        writeln!(out)?;
    }
    Ok(())
}
