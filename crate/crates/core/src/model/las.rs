use super::config::ModelConfig;
use super::lstm::{Lstm, LstmState, LstmValues};
use super::params::Params;
use super::rnnt::check_token;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Attention decoder. The recurrent input is `[embedding(prev); context]`.
#[derive(Clone, Debug)]
pub struct Las {
    embedding: Var,
    layers: Vec<Lstm>,
    query: Var,
    key: Var,
    value: Var,
    attn_output: Var,
    output: Var,
    output_bias: Var,
    heads: usize,
    head_dim: usize,
    vocab: usize,
}

/// Per-utterance keys and values, computed once from the encoder output.
#[derive(Clone, Debug)]
pub struct LasMemory {
    keys_t: Vec<Var>,
    values: Vec<Var>,
    frames: usize,
}

#[derive(Clone, Debug)]
pub struct LasState {
    layers: Vec<LstmState>,
    context: Var,
}

/// Decoder state as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct LasDecoderState {
    pub layers: Vec<LstmValues>,
    pub context: Tensor,
}

pub struct LasStep {
    /// `1 × V` log-distribution over the next token.
    pub log_probs: Var,
    pub state: LasState,
    /// Attention weights per head over encoder frames.
    pub head_alphas: Vec<Vec<f64>>,
}

impl LasStep {
    /// Head-averaged attention weights.
    pub fn mean_alpha(&self) -> Vec<f64> {
        mean_rows(&self.head_alphas)
    }
}

pub(crate) fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut out = vec![0.0; rows.first().map_or(0, |r| r.len())];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    out
}

impl Las {
    pub fn bind(g: &Graph, p: &Params, cfg: &ModelConfig) -> Result<Self> {
        Ok(Las {
            embedding: p.get("las.embedding")?,
            layers: (0..cfg.las_layers)
                .map(|i| Lstm::bind(g, p, &format!("las.{i}")))
                .collect::<Result<_>>()?,
            query: p.get("las.attention.query")?,
            key: p.get("las.attention.key")?,
            value: p.get("las.attention.value")?,
            attn_output: p.get("las.attention.output")?,
            output: p.get("las.output")?,
            output_bias: p.get("las.output_bias")?,
            heads: cfg.las_heads,
            head_dim: cfg.head_dim(),
            vocab: cfg.vocab_size,
        })
    }

    pub fn memory(&self, g: &mut Graph, enc: Var) -> Result<LasMemory> {
        let frames = g.value(enc).rows();
        if frames == 0 {
            return Err(Error::EmptyInput("las encoder output"));
        }
        let k = g.matmul(enc, self.key)?;
        let v = g.matmul(enc, self.value)?;
        let mut keys_t = Vec::with_capacity(self.heads);
        let mut values = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let kh = g.slice_cols(k, h * self.head_dim, self.head_dim)?;
            keys_t.push(g.transpose(kh)?);
            values.push(g.slice_cols(v, h * self.head_dim, self.head_dim)?);
        }
        Ok(LasMemory { keys_t, values, frames })
    }

    pub fn initial_state(&self, g: &mut Graph) -> Result<LasState> {
        let layers = self.layers.iter().map(|l| l.zero_state(g)).collect::<Result<Vec<_>>>()?;
        let context = g.constant(Tensor::zeros(&[1, self.heads * self.head_dim])?)?;
        Ok(LasState { layers, context })
    }

    pub fn step(&self, g: &mut Graph, mem: &LasMemory, s: &LasState, prev: u32) -> Result<LasStep> {
        check_token(prev, self.vocab)?;
        let emb = g.row(self.embedding, prev as usize)?;
        let mut x = g.concat_cols(&[emb, s.context])?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (cell, ls) in self.layers.iter().zip(&s.layers) {
            let next = cell.step(g, x, ls)?;
            x = next.r;
            layers.push(next);
        }
        let q = g.matmul(x, self.query)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut head_alphas = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * self.head_dim, self.head_dim)?;
            let scores = g.matmul(qh, mem.keys_t[h])?;
            let scores = g.scale(scores, scale)?;
            let alpha = g.softmax(scores)?;
            head_alphas.push(g.value(alpha).data().to_vec());
            heads.push(g.matmul(alpha, mem.values[h])?);
        }
        let ctx = g.concat_cols(&heads)?;
        let context = g.matmul(ctx, self.attn_output)?;
        let out = g.concat_cols(&[x, context])?;
        let logits = g.matmul(out, self.output)?;
        let logits = g.add_row(logits, self.output_bias)?;
        let log_probs = g.log_softmax(logits)?;
        debug_assert_eq!(head_alphas[0].len(), mem.frames);
        Ok(LasStep {
            log_probs,
            state: LasState { layers, context },
            head_alphas,
        })
    }
}

impl LasState {
    pub fn values(&self, g: &Graph) -> LasDecoderState {
        LasDecoderState {
            layers: self.layers.iter().map(|s| s.values(g)).collect(),
            context: g.value(self.context).clone(),
        }
    }

    pub fn lift(g: &mut Graph, v: &LasDecoderState) -> Result<Self> {
        Ok(LasState {
            layers: v.layers.iter().map(|s| LstmState::lift(g, s)).collect::<Result<_>>()?,
            context: g.constant(v.context.clone())?,
        })
    }
}
