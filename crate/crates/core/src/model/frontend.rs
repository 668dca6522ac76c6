use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Stacks `frontend_stack` left-context frames onto each frame and keeps
/// every `frontend_downsample`-th row, starting at 0. Frames before the
/// start repeat frame 0.
pub fn stack_and_downsample(frames: &Tensor, cfg: &ModelConfig) -> Result<Tensor> {
    let (t, d) = frames.dims2()?;
    if d != cfg.feature_dim {
        return Err(Error::shape(
            "stack_and_downsample",
            format!("frames have dim {d}, config expects {}", cfg.feature_dim),
        ));
    }
    let ctx = cfg.frontend_stack;
    let mut rows = Vec::with_capacity(t.div_ceil(cfg.frontend_downsample));
    for i in (0..t).step_by(cfg.frontend_downsample) {
        let mut row = Vec::with_capacity((ctx + 1) * d);
        for back in (0..=ctx).rev() {
            row.extend_from_slice(frames.row_slice(i.saturating_sub(back)));
        }
        rows.push(row);
    }
    Tensor::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d: usize) -> ModelConfig {
        ModelConfig { feature_dim: d, ..ModelConfig::toy() }
    }

    #[test]
    fn single_frame_is_tripled() {
        let f = Tensor::row(vec![1.5, -2.0]).unwrap();
        let out = stack_and_downsample(&f, &cfg(2)).unwrap();
        assert_eq!(out.shape(), &[1, 6]);
        assert_eq!(out.data(), &[1.5, -2.0, 1.5, -2.0, 1.5, -2.0]);
    }

    #[test]
    fn hand_traced_padding_and_stride() {
        let f = Tensor::matrix(6, 1, (0..6).map(f64::from).collect()).unwrap();
        let out = stack_and_downsample(&f, &cfg(1)).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn output_length_is_ceil_third() {
        for t in 1usize..20 {
            let f = Tensor::zeros(&[t, 1]).unwrap();
            assert_eq!(stack_and_downsample(&f, &cfg(1)).unwrap().rows(), t.div_ceil(3));
        }
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let f = Tensor::zeros(&[4, 3]).unwrap();
        assert!(stack_and_downsample(&f, &cfg(2)).is_err());
    }
}
