//! Attention-decoder second pass: standalone beam search, and teacher-forced
//! rescoring of first-pass N-best lists or prefix lattices.

mod beam;
mod rescore;

pub use beam::las_beam_search;
pub use rescore::{
    coverage, las_sequence_logprob, rescore_lattice, rescore_nbest, write_rescore_report, RescoreOutput,
    RescoredHypothesis,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Component, EncoderOutput, Las, LasMemory, LasState, Model};
use crate::numerics::Graph;

/// Floor for the log of an unattended frame's mass.
pub const COVERAGE_FLOOR: f64 = -1e4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondPassMode {
    Beam,
    #[default]
    Rescore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RescoreConfig {
    pub mode: SecondPassMode,
    pub rescore_k: usize,
    /// Coverage weight η.
    pub coverage_weight: f64,
    /// Coverage clip τ.
    pub coverage_clip: f64,
    pub las_beam_size: usize,
    /// Token cap for the beam mode; `2·T' + 10` when absent.
    pub max_len: Option<usize>,
    /// Optional weight on the first-pass score in the final score.
    pub rnnt_weight: Option<f64>,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        RescoreConfig {
            mode: SecondPassMode::Rescore,
            rescore_k: 4,
            coverage_weight: 1.0,
            coverage_clip: 0.5,
            las_beam_size: 8,
            max_len: None,
            rnnt_weight: None,
        }
    }
}

impl RescoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rescore_k == 0 {
            return Err(Error::Config("rescore_k must be at least 1".into()));
        }
        if !(self.coverage_weight >= 0.0 && self.coverage_weight.is_finite()) {
            return Err(Error::Config("coverage weight must be non-negative".into()));
        }
        if !(self.coverage_clip > 0.0 && self.coverage_clip <= 1.0) {
            return Err(Error::Config("coverage clip must lie in (0, 1]".into()));
        }
        if self.las_beam_size == 0 {
            return Err(Error::Config("las_beam_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Inference-only attention decoder bound to one utterance.
pub(crate) struct LasRunner {
    g: Graph,
    las: Las,
    mem: LasMemory,
    vocab: usize,
}

pub(crate) struct StepResult {
    pub log_probs: Vec<f64>,
    pub state: LasState,
    pub alpha: Vec<f64>,
}

impl LasRunner {
    pub(crate) fn new(model: &Model, enc: &EncoderOutput) -> Result<Self> {
        if enc.frames() == 0 {
            return Err(Error::EmptyInput("encoder output"));
        }
        let mut g = Graph::inference();
        let p = model.bind(&mut g, &[Component::Las])?;
        let las = Las::bind(&g, &p, model.config())?;
        let e = g.constant(enc.0.clone())?;
        let mem = las.memory(&mut g, e)?;
        Ok(LasRunner {
            g,
            las,
            mem,
            vocab: model.config().vocab_size,
        })
    }

    pub(crate) fn initial(&mut self) -> Result<LasState> {
        self.las.initial_state(&mut self.g)
    }

    pub(crate) fn step(&mut self, state: &LasState, prev: u32) -> Result<StepResult> {
        let s = self.las.step(&mut self.g, &self.mem, state, prev)?;
        Ok(StepResult {
            log_probs: self.g.value(s.log_probs).data().to_vec(),
            alpha: s.mean_alpha(),
            state: s.state,
        })
    }

    pub(crate) fn vocab(&self) -> usize {
        self.vocab
    }
}
