use super::config::ModelConfig;
use super::lstm::Lstm;
use super::params::Params;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Encoder activations `T' × encoder_proj`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput(pub Tensor);

impl EncoderOutput {
    pub fn frames(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Runs the unidirectional encoder over stacked frontend rows `[T'' × F]`.
pub fn encode_graph(g: &mut Graph, p: &Params, cfg: &ModelConfig, stacked: Var) -> Result<Var> {
    let (t, f) = g.value(stacked).dims2()?;
    if f != cfg.stacked_dim() {
        return Err(Error::shape("encode", format!("input dim {f}, expected {}", cfg.stacked_dim())));
    }
    let mut seq: Vec<Var> = (0..t).map(|i| g.row(stacked, i)).collect::<Result<_>>()?;
    for layer in 0..cfg.encoder_layers {
        if layer == cfg.time_reduction_layer {
            seq = time_reduce(g, &seq, cfg.time_reduction_factor)?;
        }
        let cell = Lstm::bind(g, p, &format!("encoder.{layer}"))?;
        let mut state = cell.zero_state(g)?;
        for x in seq.iter_mut() {
            state = cell.step(g, *x, &state)?;
            *x = state.r;
        }
    }
    g.concat_rows(&seq)
}

/// Concatenates each run of `factor` consecutive rows; a short final run is
/// padded with zero rows.
fn time_reduce(g: &mut Graph, seq: &[Var], factor: usize) -> Result<Vec<Var>> {
    if factor == 1 {
        return Ok(seq.to_vec());
    }
    let width = g.value(seq[0]).cols();
    let mut out = Vec::with_capacity(seq.len().div_ceil(factor));
    for chunk in seq.chunks(factor) {
        let mut parts = chunk.to_vec();
        while parts.len() < factor {
            parts.push(g.constant(Tensor::zeros(&[1, width])?)?);
        }
        out.push(g.concat_cols(&parts)?);
    }
    Ok(out)
}
