use super::config::{JointMode, ModelConfig, BLANK};
use super::lstm::{Lstm, LstmState, LstmValues};
use super::params::Params;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

pub(crate) fn check_token(token: u32, vocab: usize) -> Result<()> {
    if (token as usize) < vocab {
        Ok(())
    } else {
        Err(Error::OutOfVocab { token, vocab })
    }
}

/// Prediction network over the non-blank label history.
#[derive(Clone, Debug)]
pub struct Prediction {
    embedding: Var,
    layers: Vec<Lstm>,
    vocab: usize,
}

#[derive(Clone, Debug)]
pub struct PredState {
    layers: Vec<LstmState>,
    pub output: Var,
}

/// Prediction state as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionState {
    pub layers: Vec<LstmValues>,
    pub output: Vec<f64>,
}

impl Prediction {
    pub fn bind(g: &Graph, p: &Params, cfg: &ModelConfig) -> Result<Self> {
        Ok(Prediction {
            embedding: p.get("prediction.embedding")?,
            layers: (0..cfg.pred_layers)
                .map(|i| Lstm::bind(g, p, &format!("prediction.{i}")))
                .collect::<Result<_>>()?,
            vocab: cfg.vocab_size,
        })
    }

    /// State for the empty history: the blank embedding fed from zero state.
    pub fn start(&self, g: &mut Graph) -> Result<PredState> {
        let zero = self.layers.iter().map(|l| l.zero_state(g)).collect::<Result<Vec<_>>>()?;
        self.advance(g, &zero, BLANK)
    }

    pub fn step(&self, g: &mut Graph, s: &PredState, token: u32) -> Result<PredState> {
        if token == BLANK {
            return Err(Error::InvalidArgument("blank in prediction history".into()));
        }
        check_token(token, self.vocab)?;
        self.advance(g, &s.layers, token)
    }

    fn advance(&self, g: &mut Graph, prev: &[LstmState], token: u32) -> Result<PredState> {
        let mut x = g.row(self.embedding, token as usize)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (cell, s) in self.layers.iter().zip(prev) {
            let next = cell.step(g, x, s)?;
            x = next.r;
            layers.push(next);
        }
        Ok(PredState { layers, output: x })
    }
}

impl PredState {
    pub fn values(&self, g: &Graph) -> PredictionState {
        PredictionState {
            layers: self.layers.iter().map(|s| s.values(g)).collect(),
            output: g.value(self.output).data().to_vec(),
        }
    }

    pub fn lift(g: &mut Graph, v: &PredictionState) -> Result<Self> {
        let layers = v.layers.iter().map(|s| LstmState::lift(g, s)).collect::<Result<Vec<_>>>()?;
        let output = layers.last().map(|s| s.r).ok_or(Error::EmptyInput("prediction state"))?;
        Ok(PredState { layers, output })
    }
}

/// Joint network: `log_softmax(tanh(e·We + g·Wg + b)·Wo + bo)`.
#[derive(Clone, Copy, Debug)]
pub struct Joint {
    enc_kernel: Var,
    pred_kernel: Var,
    bias: Var,
    output: Var,
    output_bias: Var,
}

impl Joint {
    pub fn bind(g: &mut Graph, p: &Params, cfg: &ModelConfig) -> Result<Self> {
        let (enc_kernel, pred_kernel) = match cfg.joint_mode {
            JointMode::Concat => {
                let k = p.get("joint.kernel")?;
                (
                    g.slice_rows(k, 0, cfg.encoder_proj)?,
                    g.slice_rows(k, cfg.encoder_proj, cfg.pred_proj)?,
                )
            }
            JointMode::Sum => (p.get("joint.enc_kernel")?, p.get("joint.pred_kernel")?),
        };
        Ok(Joint {
            enc_kernel,
            pred_kernel,
            bias: p.get("joint.bias")?,
            output: p.get("joint.output")?,
            output_bias: p.get("joint.output_bias")?,
        })
    }

    /// Encoder rows projected into the joint space.
    pub fn project_encoder(&self, g: &mut Graph, e: Var) -> Result<Var> {
        g.matmul(e, self.enc_kernel)
    }

    pub fn project_prediction(&self, g: &mut Graph, pred: Var) -> Result<Var> {
        g.matmul(pred, self.pred_kernel)
    }

    /// Log-distributions for every pair; row `i·m + j` pairs encoder row `i`
    /// with prediction row `j`.
    pub fn log_probs(&self, g: &mut Graph, enc_proj: Var, pred_proj: Var) -> Result<Var> {
        let h = g.pair_sum(enc_proj, pred_proj)?;
        let h = g.add_row(h, self.bias)?;
        let h = g.tanh(h)?;
        let logits = g.matmul(h, self.output)?;
        let logits = g.add_row(logits, self.output_bias)?;
        g.log_softmax(logits)
    }
}
