use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::eval::word_errors;
use crate::model::{
    encode_graph, stack_and_downsample, Joint, Las, Model, ModelConfig, Params, Prediction, BLANK, EOS, FIRST_SYMBOL,
    SOS,
};
use crate::numerics::{Graph, Tensor, Var};

/// Label budget per encoder frame; targets beyond `T' ×` this are rejected.
pub const MAX_SYMBOLS_PER_FRAME: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CombinedLossConfig {
    /// Weight of the transducer term.
    pub lambda: f64,
}

impl Default for CombinedLossConfig {
    fn default() -> Self {
        CombinedLossConfig { lambda: 0.5 }
    }
}

impl CombinedLossConfig {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.lambda) {
            Ok(())
        } else {
            Err(Error::Config(format!("combined loss weight {} outside [0, 1]", self.lambda)))
        }
    }
}

/// Decoder that proposes the hypothesis set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisSource {
    #[default]
    Rnnt,
    Las,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MwerConfig {
    pub lambda_mle: f64,
    pub source: HypothesisSource,
    pub beam_size: usize,
}

impl Default for MwerConfig {
    fn default() -> Self {
        MwerConfig { lambda_mle: 0.01, source: HypothesisSource::Rnnt, beam_size: 4 }
    }
}

impl MwerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_mle >= 0.0 && self.lambda_mle.is_finite()) {
            return Err(Error::Config(format!("lambda_mle {} must be non-negative", self.lambda_mle)));
        }
        if self.beam_size < 2 {
            return Err(Error::Config("MWER needs a beam of at least 2".into()));
        }
        Ok(())
    }
}

/// Candidate sequences with their word errors against the reference.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisSet {
    pub hypotheses: Vec<Vec<u32>>,
    pub word_errors: Vec<u32>,
}

impl HypothesisSet {
    pub fn new(hypotheses: Vec<Vec<u32>>, word_errors: Vec<u32>) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(Error::EmptyInput("hypothesis set"));
        }
        if hypotheses.len() != word_errors.len() {
            return Err(Error::InvalidArgument(format!(
                "{} hypotheses with {} error counts",
                hypotheses.len(),
                word_errors.len()
            )));
        }
        Ok(HypothesisSet { hypotheses, word_errors })
    }

    /// Counts word errors of each detokenised hypothesis against `reference`.
    pub fn score(reference: &str, hypotheses: Vec<Vec<u32>>, vocab: &Vocab) -> Result<Self> {
        let errs = hypotheses
            .iter()
            .map(|h| Ok(word_errors(reference, &vocab.detokenize(h)?) as u32))
            .collect::<Result<Vec<_>>>()?;
        Self::new(hypotheses, errs)
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    /// `W̄`, the mean error count.
    pub fn mean_errors(&self) -> f64 {
        self.word_errors.iter().map(|&w| f64::from(w)).sum::<f64>() / self.len() as f64
    }

    /// `Ŵ = W − W̄`.
    pub fn relative_errors(&self) -> Vec<f64> {
        let mean = self.mean_errors();
        self.word_errors.iter().map(|&w| f64::from(w) - mean).collect()
    }
}

fn check_target(tokens: &[u32], vocab: usize) -> Result<()> {
    for &t in tokens {
        if t < FIRST_SYMBOL || t as usize >= vocab {
            return Err(Error::OutOfVocab { token: t, vocab });
        }
    }
    Ok(())
}

/// Frontend plus encoder on raw features, as a graph value.
pub fn encoder_var(g: &mut Graph, p: &Params, cfg: &ModelConfig, frames: &Tensor) -> Result<Var> {
    let stacked = stack_and_downsample(frames, cfg)?;
    let x = g.constant(stacked)?;
    encode_graph(g, p, cfg, x)
}

/// Transducer negative log-likelihood summed over all alignments.
pub fn rnnt_loss_var(g: &mut Graph, p: &Params, cfg: &ModelConfig, enc: Var, target: &[u32]) -> Result<Var> {
    check_target(target, cfg.vocab_size)?;
    let frames = g.value(enc).rows();
    if target.len() > frames * MAX_SYMBOLS_PER_FRAME {
        return Err(Error::TargetTooLong {
            target: target.len(),
            frames,
            budget: MAX_SYMBOLS_PER_FRAME,
        });
    }
    let pred = Prediction::bind(g, p, cfg)?;
    let mut s = pred.start(g)?;
    let mut rows = vec![s.output];
    for &t in target {
        s = pred.step(g, &s, t)?;
        rows.push(s.output);
    }
    let q = g.concat_rows(&rows)?;
    let joint = Joint::bind(g, p, cfg)?;
    let e = joint.project_encoder(g, enc)?;
    let q = joint.project_prediction(g, q)?;
    let lp = joint.log_probs(g, e, q)?;
    let labels: Vec<usize> = target.iter().map(|&t| t as usize).collect();
    g.transducer_nll(lp, frames, &labels, BLANK as usize)
}

/// Teacher-forced `log P(target, eos | x)` under the attention decoder.
pub fn las_logprob_var(g: &mut Graph, p: &Params, cfg: &ModelConfig, enc: Var, target: &[u32]) -> Result<Var> {
    check_target(target, cfg.vocab_size)?;
    let las = Las::bind(g, p, cfg)?;
    let mem = las.memory(g, enc)?;
    let mut state = las.initial_state(g)?;
    let mut prev = SOS;
    let mut total: Option<Var> = None;
    for &next in target.iter().chain(std::iter::once(&EOS)) {
        let step = las.step(g, &mem, &state, prev)?;
        let lp = g.pick(step.log_probs, 0, next as usize)?;
        total = Some(match total {
            None => lp,
            Some(acc) => g.add(acc, lp)?,
        });
        state = step.state;
        prev = next;
    }
    Ok(total.expect("at least the eos step"))
}

pub fn las_ce_var(g: &mut Graph, p: &Params, cfg: &ModelConfig, enc: Var, target: &[u32]) -> Result<Var> {
    let lp = las_logprob_var(g, p, cfg, enc, target)?;
    g.scale(lp, -1.0)
}

/// `λ·L_rnnt + (1 − λ)·L_las`; a unit weight drops the other term entirely.
pub fn combined_var(
    g: &mut Graph,
    p: &Params,
    cfg: &ModelConfig,
    enc: Var,
    target: &[u32],
    c: &CombinedLossConfig,
) -> Result<Var> {
    c.validate()?;
    if c.lambda == 1.0 {
        return rnnt_loss_var(g, p, cfg, enc, target);
    }
    if c.lambda == 0.0 {
        return las_ce_var(g, p, cfg, enc, target);
    }
    let r = rnnt_loss_var(g, p, cfg, enc, target)?;
    let l = las_ce_var(g, p, cfg, enc, target)?;
    let r = g.scale(r, c.lambda)?;
    let l = g.scale(l, 1.0 - c.lambda)?;
    g.add(r, l)
}

/// Renormalised hypothesis posteriors as a `1 × b` row.
pub fn mwer_posteriors_var(g: &mut Graph, p: &Params, cfg: &ModelConfig, enc: Var, set: &HypothesisSet) -> Result<Var> {
    let lps = set
        .hypotheses
        .iter()
        .map(|h| las_logprob_var(g, p, cfg, enc, h))
        .collect::<Result<Vec<_>>>()?;
    let row = g.concat_cols(&lps)?;
    g.softmax(row)
}

/// `Σ_m P̂(y_m)·(W_m − W̄)`.
pub fn mwer_var(g: &mut Graph, p: &Params, cfg: &ModelConfig, enc: Var, set: &HypothesisSet) -> Result<Var> {
    let post = mwer_posteriors_var(g, p, cfg, enc, set)?;
    let w = g.constant(Tensor::row(set.relative_errors())?)?;
    let weighted = g.mul(post, w)?;
    g.sum(weighted)
}

/// MWER plus `λ_MLE` times the reference cross-entropy.
pub fn mwer_ce_var(
    g: &mut Graph,
    p: &Params,
    cfg: &ModelConfig,
    enc: Var,
    reference: &[u32],
    set: &HypothesisSet,
    lambda_mle: f64,
) -> Result<Var> {
    let m = mwer_var(g, p, cfg, enc, set)?;
    if lambda_mle == 0.0 {
        return Ok(m);
    }
    let ce = las_ce_var(g, p, cfg, enc, reference)?;
    let ce = g.scale(ce, lambda_mle)?;
    g.add(m, ce)
}

fn eval_scalar(model: &Model, frames: &Tensor, f: impl FnOnce(&mut Graph, &Params, Var) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::inference();
    let p = model.bind(&mut g, &[])?;
    let enc = encoder_var(&mut g, &p, model.config(), frames)?;
    let out = f(&mut g, &p, enc)?;
    g.scalar(out)
}

pub fn rnnt_loss(model: &Model, frames: &Tensor, target: &[u32]) -> Result<f64> {
    eval_scalar(model, frames, |g, p, e| rnnt_loss_var(g, p, model.config(), e, target))
}

/// `log P(target | x)` under the transducer.
pub fn rnnt_sequence_logprob(model: &Model, frames: &Tensor, target: &[u32]) -> Result<f64> {
    Ok(-rnnt_loss(model, frames, target)?)
}

pub fn las_ce_loss(model: &Model, frames: &Tensor, target: &[u32]) -> Result<f64> {
    eval_scalar(model, frames, |g, p, e| las_ce_var(g, p, model.config(), e, target))
}

pub fn combined_loss(model: &Model, frames: &Tensor, target: &[u32], c: &CombinedLossConfig) -> Result<f64> {
    eval_scalar(model, frames, |g, p, e| combined_var(g, p, model.config(), e, target, c))
}

pub fn mwer_loss(model: &Model, frames: &Tensor, set: &HypothesisSet) -> Result<f64> {
    eval_scalar(model, frames, |g, p, e| mwer_var(g, p, model.config(), e, set))
}

pub fn mwer_ce_loss(model: &Model, frames: &Tensor, reference: &[u32], set: &HypothesisSet, lambda_mle: f64) -> Result<f64> {
    eval_scalar(model, frames, |g, p, e| mwer_ce_var(g, p, model.config(), e, reference, set, lambda_mle))
}

pub fn mwer_posteriors(model: &Model, frames: &Tensor, set: &HypothesisSet) -> Result<Vec<f64>> {
    let mut g = Graph::inference();
    let p = model.bind(&mut g, &[])?;
    let enc = encoder_var(&mut g, &p, model.config(), frames)?;
    let post = mwer_posteriors_var(&mut g, &p, model.config(), enc, set)?;
    Ok(g.value(post).data().to_vec())
}

/// Expected relative word errors under given posteriors.
pub fn mwer_from_posteriors(posteriors: &[f64], set: &HypothesisSet) -> Result<f64> {
    if posteriors.len() != set.len() {
        return Err(Error::InvalidArgument(format!(
            "{} posteriors for {} hypotheses",
            posteriors.len(),
            set.len()
        )));
    }
    Ok(posteriors.iter().zip(set.relative_errors()).map(|(p, w)| p * w).sum())
}
