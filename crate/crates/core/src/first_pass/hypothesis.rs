use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// One first-pass candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Word pieces, never blank, sos or eos.
    pub tokens: Vec<u32>,
    /// Transducer log-probability, summed over merged alignments.
    pub log_prob_rnnt: f64,
    /// Search score: `log_prob_rnnt` plus any biasing bonus.
    pub total_score: f64,
    pub las_score: Option<f64>,
    pub completed: bool,
}

impl Hypothesis {
    pub fn new(tokens: Vec<u32>, log_prob_rnnt: f64) -> Self {
        Hypothesis {
            tokens,
            log_prob_rnnt,
            total_score: log_prob_rnnt,
            las_score: None,
            completed: true,
        }
    }
}

/// Ranking order: higher score first, then shorter, then smaller token ids.
pub fn rank_order(a_score: f64, a_tokens: &[u32], b_score: f64, b_tokens: &[u32]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then_with(|| a_tokens.len().cmp(&b_tokens.len()))
        .then_with(|| a_tokens.cmp(b_tokens))
}

pub fn sort_hypotheses(hyps: &mut [Hypothesis]) {
    hyps.sort_by(|a, b| rank_order(a.total_score, &a.tokens, b.total_score, &b.tokens));
}
