use super::{LasRunner, RescoreConfig};
use crate::error::Result;
use crate::first_pass::{rank_order, Hypothesis};
use crate::model::{EncoderOutput, LasState, Model, EOS, FIRST_SYMBOL, SOS};

struct Partial {
    tokens: Vec<u32>,
    logprob: f64,
    state: LasState,
}

/// Label-synchronous beam search from `sos` to `eos`.
///
/// Each step keeps the best `las_beam_size` extensions, `eos` included;
/// those ending in `eos` leave the beam. A hypothesis that reaches the
/// token cap is closed with `eos` and flagged `completed = false`. The
/// returned `total_score` and `las_score` hold the log-probability;
/// `log_prob_rnnt` is unused and zero.
pub fn las_beam_search(model: &Model, enc: &EncoderOutput, cfg: &RescoreConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let width = cfg.las_beam_size;
    let max_len = cfg.max_len.unwrap_or(2 * enc.frames() + 10);
    let mut run = LasRunner::new(model, enc)?;
    let vocab = run.vocab() as u32;
    let mut beam = vec![Partial {
        tokens: Vec::new(),
        logprob: 0.0,
        state: run.initial()?,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();

    while !beam.is_empty() {
        let mut cands: Vec<(Vec<u32>, f64, usize)> = Vec::new();
        let mut next_states = Vec::with_capacity(beam.len());
        for (i, p) in beam.iter().enumerate() {
            let prev = p.tokens.last().copied().unwrap_or(SOS);
            let s = run.step(&p.state, prev)?;
            let mut closing = p.tokens.clone();
            closing.push(EOS);
            cands.push((closing, p.logprob + s.log_probs[EOS as usize], i));
            if p.tokens.len() < max_len {
                for k in FIRST_SYMBOL..vocab {
                    let mut t = p.tokens.clone();
                    t.push(k);
                    cands.push((t, p.logprob + s.log_probs[k as usize], i));
                }
            }
            next_states.push(s.state);
        }
        cands.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
        cands.truncate(width);
        let mut next = Vec::new();
        for (mut tokens, logprob, parent) in cands {
            if tokens.last() == Some(&EOS) {
                tokens.pop();
                let capped = tokens.len() == max_len && beam[parent].tokens.len() == max_len;
                done.push(Hypothesis {
                    tokens,
                    log_prob_rnnt: 0.0,
                    total_score: logprob,
                    las_score: Some(logprob),
                    completed: !capped,
                });
            } else {
                next.push(Partial {
                    tokens,
                    logprob,
                    state: next_states[parent].clone(),
                });
            }
        }
        beam = next;
        if done.len() >= width {
            done.sort_by(|a, b| rank_order(a.total_score, &a.tokens, b.total_score, &b.tokens));
            let worst = done[width - 1].total_score;
            // Scores only fall as hypotheses grow.
            if beam.iter().all(|p| p.logprob <= worst) {
                break;
            }
        }
    }
    done.sort_by(|a, b| rank_order(a.total_score, &a.tokens, b.total_score, &b.tokens));
    done.truncate(width);
    Ok(done)
}
