use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares the adjoint of `f` at `x` against central differences.
///
/// Returns the maximum over coordinates of
/// `|numeric - analytic| / (|analytic| + 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!("eps {eps} outside (0, 1e-2]")));
    }
    let mut g = Graph::new();
    let xv = g.param(x.clone())?;
    let out = f(&mut g, xv)?;
    let out_shape = g.value(out).shape().to_vec();
    if g.value(out).len() != 1 {
        return Err(Error::NotScalar(out_shape));
    }
    g.backward(out)?;
    let analytic = g.adjoint_or_zero(xv);

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::inference();
        let v = g.constant(t)?;
        let out = f(&mut g, v)?;
        g.scalar(out)
    };

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((numeric - a).abs() / (a.abs() + 1e-8));
    }
    Ok(worst)
}
