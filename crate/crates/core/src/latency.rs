//! Analytic second-pass latency: every decoder step streams the decoder
//! weights through memory once, so latency = steps · M_decoder / K.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::first_pass::{Hypothesis, Lattice};
use crate::model::{Component, ModelWeights};

pub const DEFAULT_BANDWIDTH: u64 = 10_000_000_000;
pub const DEFAULT_TOKENS: u64 = 28;
pub const DEFAULT_DECODER_BYTES: u64 = 33_000_000;
pub const BUDGET_MS: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyParams {
    /// Bytes per second.
    pub bandwidth: u64,
    pub hypotheses: u64,
    pub tokens: u64,
    pub decoder_bytes: u64,
    /// Lattice mode: replaces `hypotheses · tokens`.
    pub arcs: Option<u64>,
}

impl Default for LatencyParams {
    fn default() -> Self {
        LatencyParams {
            bandwidth: DEFAULT_BANDWIDTH,
            hypotheses: 8,
            tokens: DEFAULT_TOKENS,
            decoder_bytes: DEFAULT_DECODER_BYTES,
            arcs: None,
        }
    }
}

impl LatencyParams {
    /// Decoder steps priced by the model.
    pub fn steps(&self) -> u64 {
        self.arcs.unwrap_or(self.hypotheses * self.tokens)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bandwidth == 0 || self.decoder_bytes == 0 {
            return Err(Error::InvalidArgument("bandwidth and decoder bytes must be positive".into()));
        }
        if self.arcs.is_none() && (self.hypotheses == 0 || self.tokens == 0) {
            return Err(Error::InvalidArgument("hypotheses and tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Exact latency in milliseconds.
pub fn latency_ms_exact(p: &LatencyParams) -> Result<Ratio<u128>> {
    p.validate()?;
    Ok(Ratio::new(
        u128::from(p.steps()) * u128::from(p.decoder_bytes) * 1000,
        u128::from(p.bandwidth),
    ))
}

/// Milliseconds rounded half-up to 0.1.
pub fn estimate_latency(p: &LatencyParams) -> Result<f64> {
    Ok(round_tenth(latency_ms_exact(p)?))
}

fn round_tenth(ms: Ratio<u128>) -> f64 {
    let tenths = (ms * 10u128 + Ratio::new(1, 2)).floor().to_integer();
    tenths as f64 / 10.0
}

/// Edges of the prefix lattice, one decoder step each.
pub fn count_arcs(l: &Lattice) -> u64 {
    crate::first_pass::count_arcs(l) as u64
}

/// Attention-decoder size at one byte per parameter.
pub fn decoder_bytes(w: &ModelWeights) -> u64 {
    w.parameter_count(Some(Component::Las))
}

/// Second-pass work recorded for one decoded utterance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceWork {
    pub id: String,
    /// Hypotheses handed to the second pass.
    pub hypotheses: u64,
    /// Sum of their token lengths.
    pub token_steps: u64,
    /// Arcs of the prefix lattice over the same hypotheses.
    pub arcs: u64,
}

impl UtteranceWork {
    /// Work of rescoring `hyps` as a list and as their prefix lattice.
    pub fn from_hypotheses(id: impl Into<String>, hyps: &[Hypothesis]) -> Result<Self> {
        let lattice = Lattice::from_hypotheses(hyps, None)?;
        Ok(UtteranceWork {
            id: id.into(),
            hypotheses: hyps.len() as u64,
            token_steps: hyps.iter().map(|h| h.tokens.len() as u64).sum(),
            arcs: count_arcs(&lattice),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accounting {
    #[default]
    Nbest,
    Lattice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceLatency {
    pub id: String,
    pub nbest_ms: f64,
    pub lattice_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub mode: Accounting,
    pub per_utt: Vec<UtteranceLatency>,
    pub p90_ms: f64,
    pub p90_nbest_ms: f64,
    pub p90_lattice_ms: f64,
    pub budget_ms: f64,
    pub within_budget: bool,
}

/// Nearest-rank percentile of `values`; `q` in (0, 1].
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile values"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q * v.len() as f64).ceil().max(1.0) as usize;
    Ok(v[rank.min(v.len()) - 1])
}

/// Prices every utterance under both accountings. N-best work is
/// `hypotheses · tokens` when `tokens` is given (the fixed-length
/// assumption), else the measured token steps.
pub fn latency_report(
    work: &[UtteranceWork],
    mode: Accounting,
    tokens: Option<u64>,
    decoder_bytes: u64,
    bandwidth: u64,
) -> Result<LatencyReport> {
    if work.is_empty() {
        return Err(Error::EmptyInput("latency report utterances"));
    }
    let price = |steps: u64| -> Result<f64> {
        let p = LatencyParams { bandwidth, decoder_bytes, arcs: Some(steps), ..LatencyParams::default() };
        estimate_latency(&p)
    };
    let mut per_utt = Vec::with_capacity(work.len());
    for w in work {
        let nbest = tokens.map_or(w.token_steps, |n| w.hypotheses * n);
        per_utt.push(UtteranceLatency { id: w.id.clone(), nbest_ms: price(nbest)?, lattice_ms: price(w.arcs)? });
    }
    let p90_nbest_ms = percentile(&per_utt.iter().map(|u| u.nbest_ms).collect::<Vec<_>>(), 0.9)?;
    let p90_lattice_ms = percentile(&per_utt.iter().map(|u| u.lattice_ms).collect::<Vec<_>>(), 0.9)?;
    let p90_ms = match mode {
        Accounting::Nbest => p90_nbest_ms,
        Accounting::Lattice => p90_lattice_ms,
    };
    Ok(LatencyReport {
        mode,
        per_utt,
        p90_ms,
        p90_nbest_ms,
        p90_lattice_ms,
        budget_ms: BUDGET_MS,
        within_budget: p90_ms <= BUDGET_MS,
    })
}
