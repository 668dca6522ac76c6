use super::params::Params;
use crate::error::Result;
use crate::numerics::{Graph, Tensor, Var};

/// LSTM cell with a recurrent projection; gates ordered i, f, g, o.
#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    kernel: Var,
    recurrent: Var,
    bias: Var,
    projection: Var,
    hidden: usize,
    proj: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub c: Var,
    /// Projected output, fed back as the recurrent input.
    pub r: Var,
}

/// Plain-value LSTM state, for carrying across graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmValues {
    pub c: Tensor,
    pub r: Tensor,
}

impl Lstm {
    pub fn bind(g: &Graph, p: &Params, prefix: &str) -> Result<Self> {
        let projection = p.get(&format!("{prefix}.projection"))?;
        let (hidden, proj) = g.value(projection).dims2()?;
        Ok(Lstm {
            kernel: p.get(&format!("{prefix}.kernel"))?,
            recurrent: p.get(&format!("{prefix}.recurrent"))?,
            bias: p.get(&format!("{prefix}.bias"))?,
            projection,
            hidden,
            proj,
        })
    }

    pub fn proj(&self) -> usize {
        self.proj
    }

    pub fn zero_state(&self, g: &mut Graph) -> Result<LstmState> {
        Ok(LstmState {
            c: g.constant(Tensor::zeros(&[1, self.hidden])?)?,
            r: g.constant(Tensor::zeros(&[1, self.proj])?)?,
        })
    }

    pub fn step(&self, g: &mut Graph, x: Var, s: &LstmState) -> Result<LstmState> {
        let h = self.hidden;
        let gx = g.matmul(x, self.kernel)?;
        let gr = g.matmul(s.r, self.recurrent)?;
        let gates = g.add(gx, gr)?;
        let gates = g.add_row(gates, self.bias)?;
        let i = g.slice_cols(gates, 0, h)?;
        let f = g.slice_cols(gates, h, h)?;
        let cand = g.slice_cols(gates, 2 * h, h)?;
        let o = g.slice_cols(gates, 3 * h, h)?;
        let i = g.sigmoid(i)?;
        let f = g.sigmoid(f)?;
        let cand = g.tanh(cand)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, s.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        let out = g.mul(o, tc)?;
        let r = g.matmul(out, self.projection)?;
        Ok(LstmState { c, r })
    }
}

impl LstmState {
    pub fn values(&self, g: &Graph) -> LstmValues {
        LstmValues {
            c: g.value(self.c).clone(),
            r: g.value(self.r).clone(),
        }
    }

    pub fn lift(g: &mut Graph, v: &LstmValues) -> Result<Self> {
        Ok(LstmState {
            c: g.constant(v.c.clone())?,
            r: g.constant(v.r.clone())?,
        })
    }
}
