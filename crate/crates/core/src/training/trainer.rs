use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{
    combined_var, encoder_var, las_ce_var, mwer_var, rnnt_loss_var, CombinedLossConfig, HypothesisSet,
    HypothesisSource, MwerConfig,
};
use crate::data::{Utterance, Vocab};
use crate::error::{Error, Result};
use crate::eval::{edit_distance, rate, words};
use crate::first_pass::{beam_search, greedy_decode, BeamConfig};
use crate::model::{Component, Model, Params};
use crate::numerics::{Graph, Tensor, Var};
use crate::second_pass::{las_beam_search, rescore_nbest, RescoreConfig};

/// One training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub tokens: Vec<u32>,
    pub features: Tensor,
}

impl Example {
    pub fn from_utterance(u: &Utterance) -> Result<Self> {
        Ok(Example { id: u.id.clone(), text: u.text.clone(), tokens: u.tokens.clone(), features: u.features()? })
    }

    pub fn from_utterances(utts: &[Utterance]) -> Result<Vec<Self>> {
        utts.iter().map(Self::from_utterance).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub seed: u64,
    /// Examples averaged per update.
    pub batch_size: usize,
    /// Global gradient-norm clip, off when absent.
    pub clip_norm: Option<f64>,
    pub combined: CombinedLossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.05, seed: 1, batch_size: 1, clip_norm: Some(5.0), combined: CombinedLossConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        self.combined.validate()
    }
}

/// Phase of the recipe a curve row belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Transducer only.
    Stage1,
    /// Attention decoder on a frozen encoder.
    Stage2,
    /// Everything with the combined loss.
    Stage3,
    Mwer,
}

impl Phase {
    pub fn stage(n: u8) -> Result<Phase> {
        match n {
            1 => Ok(Phase::Stage1),
            2 => Ok(Phase::Stage2),
            3 => Ok(Phase::Stage3),
            _ => Err(Error::Config(format!("stage {n} is not one of 1, 2, 3"))),
        }
    }

    fn number(self) -> u64 {
        match self {
            Phase::Stage1 => 1,
            Phase::Stage2 => 2,
            Phase::Stage3 => 3,
            Phase::Mwer => 4,
        }
    }

    /// Components whose weights the phase updates.
    pub fn trained(self) -> &'static [Component] {
        match self {
            Phase::Stage1 => &[Component::Encoder, Component::Prediction, Component::Joint],
            Phase::Stage2 | Phase::Mwer => &[Component::Las],
            Phase::Stage3 => &[Component::Encoder, Component::Prediction, Component::Joint, Component::Las],
        }
    }

    /// Components bound into the graph; stage 2 still differentiates
    /// through the encoder but discards those adjoints.
    fn bound(self) -> &'static [Component] {
        match self {
            Phase::Stage1 => &[Component::Encoder, Component::Prediction, Component::Joint],
            Phase::Stage2 | Phase::Mwer => &[Component::Encoder, Component::Las],
            Phase::Stage3 => &[],
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Mwer => f.write_str("mwer"),
            p => write!(f, "{}", p.number()),
        }
    }
}

/// Fails unless every stage before `requested` has completed.
pub fn check_stage_order(requested: u8, completed: u8) -> Result<()> {
    Phase::stage(requested)?;
    if requested > completed + 1 {
        return Err(Error::StageOrder { requested, completed });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_loss: f64,
    pub wer_dev: Option<f64>,
}

/// `epoch,stage,mean_loss,wer_dev`; a missing dev WER is left empty.
pub fn write_curve_csv(out: &mut impl Write, records: &[EpochRecord]) -> Result<()> {
    writeln!(out, "epoch,stage,mean_loss,wer_dev")?;
    for r in records {
        let wer = r.wer_dev.map(|w| format!("{w}")).unwrap_or_default();
        writeln!(out, "{},{},{},{}", r.epoch, r.phase, r.mean_loss, wer)?;
    }
    Ok(())
}

/// Loss value and adjoints of every bound tensor.
pub fn loss_and_gradients(
    model: &Model,
    components: &[Component],
    build: impl FnOnce(&mut Graph, &Params) -> Result<Var>,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, components)?;
    let loss = build(&mut g, &p)?;
    let value = g.scalar(loss)?;
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "training loss" });
    }
    g.backward(loss)?;
    let grads = p.iter().map(|(n, &v)| (n.clone(), g.adjoint_or_zero(v))).collect();
    Ok((value, grads))
}

fn add_into(acc: &mut BTreeMap<String, Tensor>, grads: BTreeMap<String, Tensor>) {
    for (name, gr) in grads {
        match acc.get_mut(&name) {
            Some(a) => a.data_mut().iter_mut().zip(gr.data()).for_each(|(x, y)| *x += y),
            None => {
                acc.insert(name, gr);
            }
        }
    }
}

/// Plain SGD on the tensors of `trained`, after averaging over `count`
/// examples and optional global-norm clipping.
fn sgd_step(model: &mut Model, grads: &BTreeMap<String, Tensor>, trained: &[Component], count: usize, cfg: &TrainConfig) -> Result<()> {
    let applied: Vec<(&String, &Tensor)> =
        grads.iter().filter(|(n, _)| Component::of(n).is_some_and(|c| trained.contains(&c))).collect();
    let inv = 1.0 / count as f64;
    let norm = applied.iter().flat_map(|(_, t)| t.data()).map(|v| (v * inv) * (v * inv)).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite { op: "gradient" });
    }
    let clip = cfg.clip_norm.map_or(1.0, |c| if norm > c { c / norm } else { 1.0 });
    let step = cfg.learning_rate * inv * clip;
    for (name, gr) in applied {
        let w = model.weights_mut().get_mut(name)?;
        w.data_mut().iter_mut().zip(gr.data()).for_each(|(x, g)| *x -= step * g);
    }
    Ok(())
}

/// Deterministic visiting order for `(seed, phase, epoch)`.
pub fn epoch_order(n: usize, seed: u64, phase: Phase, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((phase.number() << 32) | epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Held-out data for the per-epoch WER column.
#[derive(Clone, Copy, Debug)]
pub struct DevSet<'a> {
    pub examples: &'a [Example],
    pub vocab: &'a Vocab,
}

/// Top-1 WER of the decoder a phase trains: greedy transducer for stages 1
/// and 3, greedy attention decoding for stage 2, and default-setting
/// N-best rescoring for MWER.
pub fn dev_wer(model: &Model, dev: &DevSet<'_>, phase: Phase) -> Result<f64> {
    let (mut errs, mut total) = (0, 0);
    for ex in dev.examples {
        let enc = model.encode(&ex.features)?;
        let tokens = match phase {
            Phase::Stage1 | Phase::Stage3 => greedy_decode(model, &enc, super::MAX_SYMBOLS_PER_FRAME)?.tokens,
            Phase::Stage2 => {
                let cfg = RescoreConfig { las_beam_size: 1, ..RescoreConfig::default() };
                las_beam_search(model, &enc, &cfg)?.swap_remove(0).tokens
            }
            Phase::Mwer => {
                let hyps = beam_search(model, &enc, &BeamConfig::default())?.hypotheses;
                rescore_nbest(model, &hyps, &enc, &RescoreConfig::default())?.best().tokens.clone()
            }
        };
        let r = words(&ex.text);
        errs += edit_distance(&r, &words(&dev.vocab.detokenize(&tokens)?)).errors();
        total += r.len();
    }
    Ok(rate(errs, total))
}

/// Runs recipe stages in order over a model.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: Model,
    completed: u8,
    cfg: TrainConfig,
}

impl Trainer {
    /// `completed` is the last stage already run on `model` (0 for none).
    pub fn new(model: Model, completed: u8, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if completed > 3 {
            return Err(Error::Config(format!("completed stage {completed} beyond 3")));
        }
        Ok(Trainer { model, completed, cfg })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn completed(&self) -> u8 {
        self.completed
    }

    /// Trains `stage` for the epochs in `epochs`; indices seed the shuffle,
    /// so resuming at epoch `k` repeats what a longer run would do.
    pub fn run_stage(&mut self, stage: u8, data: &[Example], dev: Option<DevSet<'_>>, epochs: Range<usize>) -> Result<Vec<EpochRecord>> {
        check_stage_order(stage, self.completed)?;
        if data.is_empty() {
            return Err(Error::EmptyInput("training examples"));
        }
        let phase = Phase::stage(stage)?;
        let mut curve = Vec::new();
        for epoch in epochs {
            let order = epoch_order(data.len(), self.cfg.seed, phase, epoch);
            let mut total = 0.0;
            for batch in order.chunks(self.cfg.batch_size) {
                let mut acc = BTreeMap::new();
                for &i in batch {
                    let ex = &data[i];
                    let cfg = self.model.config().clone();
                    let combined = self.cfg.combined;
                    let (loss, grads) = loss_and_gradients(&self.model, phase.bound(), |g, p| {
                        let enc = encoder_var(g, p, &cfg, &ex.features)?;
                        match phase {
                            Phase::Stage1 => rnnt_loss_var(g, p, &cfg, enc, &ex.tokens),
                            Phase::Stage2 => las_ce_var(g, p, &cfg, enc, &ex.tokens),
                            _ => combined_var(g, p, &cfg, enc, &ex.tokens, &combined),
                        }
                    })?;
                    total += loss;
                    add_into(&mut acc, grads);
                }
                sgd_step(&mut self.model, &acc, phase.trained(), batch.len(), &self.cfg)?;
            }
            let wer_dev = dev.as_ref().map(|d| dev_wer(&self.model, d, phase)).transpose()?;
            curve.push(EpochRecord { epoch, phase, mean_loss: total / data.len() as f64, wer_dev });
        }
        self.completed = self.completed.max(stage);
        Ok(curve)
    }
}

/// Candidate set for one example, or `None` when the decoder returns fewer
/// than two distinct hypotheses.
pub fn hypothesis_set(model: &Model, ex: &Example, vocab: &Vocab, cfg: &MwerConfig) -> Result<Option<HypothesisSet>> {
    let enc = model.encode(&ex.features)?;
    let hyps: Vec<Vec<u32>> = match cfg.source {
        HypothesisSource::Rnnt => {
            let bc = BeamConfig { beam_size: cfg.beam_size, ..BeamConfig::default() };
            beam_search(model, &enc, &bc)?.hypotheses.into_iter().map(|h| h.tokens).collect()
        }
        HypothesisSource::Las => {
            let rc = RescoreConfig { las_beam_size: cfg.beam_size, ..RescoreConfig::default() };
            las_beam_search(model, &enc, &rc)?.into_iter().map(|h| h.tokens).collect()
        }
    };
    if hyps.len() < 2 {
        return Ok(None);
    }
    HypothesisSet::score(&ex.text, hyps, vocab).map(Some)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MwerEpoch {
    pub epoch: usize,
    /// Mean of the full objective (expected relative errors plus weighted CE).
    pub mean_loss: f64,
    /// Mean expected relative word errors alone.
    pub mean_mwer: f64,
    pub skipped: usize,
    pub wer_dev: Option<f64>,
}

impl MwerEpoch {
    pub fn record(&self) -> EpochRecord {
        EpochRecord { epoch: self.epoch, phase: Phase::Mwer, mean_loss: self.mean_loss, wer_dev: self.wer_dev }
    }
}

/// Mean expected relative word errors over the examples with a usable set.
pub fn mean_mwer(model: &Model, sets: &[(usize, HypothesisSet)], data: &[Example]) -> Result<f64> {
    if sets.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, set) in sets {
        total += super::mwer_loss(model, &data[*i].features, set)?;
    }
    Ok(total / sets.len() as f64)
}

/// Sets for every example of `data`; indices of skipped examples are dropped.
pub fn hypothesis_sets(model: &Model, data: &[Example], vocab: &Vocab, cfg: &MwerConfig) -> Result<Vec<(usize, HypothesisSet)>> {
    let mut out = Vec::new();
    for (i, ex) in data.iter().enumerate() {
        if let Some(s) = hypothesis_set(model, ex, vocab, cfg)? {
            out.push((i, s));
        }
    }
    Ok(out)
}

/// Fine-tunes the attention decoder on the MWER objective. Transducer sets
/// are drawn once since those weights stay fixed; attention-beam sets are
/// redrawn every epoch.
pub fn mwer_finetune(
    model: &mut Model,
    data: &[Example],
    vocab: &Vocab,
    cfg: &MwerConfig,
    tc: &TrainConfig,
    dev: Option<DevSet<'_>>,
    epochs: Range<usize>,
) -> Result<Vec<MwerEpoch>> {
    cfg.validate()?;
    tc.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training examples"));
    }
    let mut fixed = None;
    let mut curve = Vec::new();
    for epoch in epochs {
        if fixed.is_none() || cfg.source == HypothesisSource::Las {
            fixed = Some(hypothesis_sets(model, data, vocab, cfg)?);
        }
        let sets = fixed.as_ref().expect("drawn above");
        let by_index: BTreeMap<usize, &HypothesisSet> = sets.iter().map(|(i, s)| (*i, s)).collect();
        let order = epoch_order(data.len(), tc.seed, Phase::Mwer, epoch);
        let (mut total, mut total_mwer, mut used) = (0.0, 0.0, 0usize);
        let usable: Vec<usize> = order.into_iter().filter(|i| by_index.contains_key(i)).collect();
        for batch in usable.chunks(tc.batch_size) {
            let mut acc = BTreeMap::new();
            for &i in batch {
                let (ex, set) = (&data[i], by_index[&i]);
                let mcfg = model.config().clone();
                let mut mwer_value = 0.0;
                let (loss, grads) = loss_and_gradients(model, Phase::Mwer.bound(), |g, p| {
                    let enc = encoder_var(g, p, &mcfg, &ex.features)?;
                    let m = mwer_var(g, p, &mcfg, enc, set)?;
                    mwer_value = g.scalar(m)?;
                    if cfg.lambda_mle == 0.0 {
                        return Ok(m);
                    }
                    let ce = las_ce_var(g, p, &mcfg, enc, &ex.tokens)?;
                    let ce = g.scale(ce, cfg.lambda_mle)?;
                    g.add(m, ce)
                })?;
                total += loss;
                total_mwer += mwer_value;
                used += 1;
                add_into(&mut acc, grads);
            }
            sgd_step(model, &acc, Phase::Mwer.trained(), batch.len(), tc)?;
        }
        let wer_dev = dev.as_ref().map(|d| dev_wer(model, d, Phase::Mwer)).transpose()?;
        let denom = used.max(1) as f64;
        curve.push(MwerEpoch {
            epoch,
            mean_loss: total / denom,
            mean_mwer: total_mwer / denom,
            skipped: data.len() - sets.len(),
            wer_dev,
        });
    }
    Ok(curve)
}
