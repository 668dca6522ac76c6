use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BLANK: u32 = 0;
pub const SOS: u32 = 1;
pub const EOS: u32 = 2;
/// First ordinary word-piece id.
pub const FIRST_SYMBOL: u32 = 3;

/// How the joint network combines encoder and prediction outputs.
///
/// Both layouts compute `tanh(e·We + g·Wg + b)`; `Concat` stores the two
/// projections as one kernel over `[e; g]`, `Sum` as two kernels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointMode {
    #[default]
    Concat,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    /// Frames stacked to the left of the current one.
    pub frontend_stack: usize,
    pub frontend_downsample: usize,
    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub encoder_proj: usize,
    pub time_reduction_factor: usize,
    /// Number of encoder layers that run before the time-reduction layer.
    pub time_reduction_layer: usize,
    pub pred_layers: usize,
    pub pred_hidden: usize,
    pub pred_proj: usize,
    pub pred_embed: usize,
    pub joint_dim: usize,
    pub joint_mode: JointMode,
    pub las_heads: usize,
    pub las_layers: usize,
    pub las_hidden: usize,
    pub las_proj: usize,
    pub las_embed: usize,
    /// Word pieces including blank, sos and eos.
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    pub fn toy() -> Self {
        ModelConfig {
            feature_dim: 8,
            frontend_stack: 2,
            frontend_downsample: 3,
            encoder_layers: 2,
            encoder_hidden: 16,
            encoder_proj: 8,
            time_reduction_factor: 2,
            time_reduction_layer: 1,
            pred_layers: 1,
            pred_hidden: 16,
            pred_proj: 16,
            pred_embed: 8,
            joint_dim: 16,
            joint_mode: JointMode::Concat,
            las_heads: 2,
            las_layers: 1,
            las_hidden: 16,
            las_proj: 16,
            las_embed: 8,
            vocab_size: 36,
        }
    }

    /// Toy layout at twice the width; the end-to-end recipe trains this one.
    pub fn desk() -> Self {
        ModelConfig {
            encoder_hidden: 32,
            encoder_proj: 16,
            pred_hidden: 32,
            pred_proj: 32,
            joint_dim: 32,
            las_hidden: 32,
            las_proj: 32,
            ..Self::toy()
        }
    }

    /// Full-size shapes of the production system; used for counting only.
    pub fn paper_shape() -> Self {
        ModelConfig {
            feature_dim: 80,
            frontend_stack: 2,
            frontend_downsample: 3,
            encoder_layers: 8,
            encoder_hidden: 2048,
            encoder_proj: 640,
            time_reduction_factor: 2,
            time_reduction_layer: 2,
            pred_layers: 2,
            pred_hidden: 2048,
            pred_proj: 640,
            pred_embed: 128,
            joint_dim: 640,
            joint_mode: JointMode::Concat,
            las_heads: 4,
            las_layers: 2,
            las_hidden: 2048,
            las_proj: 640,
            las_embed: 96,
            vocab_size: 4096,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("frontend_downsample", self.frontend_downsample),
            ("encoder_layers", self.encoder_layers),
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_proj", self.encoder_proj),
            ("time_reduction_factor", self.time_reduction_factor),
            ("pred_layers", self.pred_layers),
            ("pred_hidden", self.pred_hidden),
            ("pred_proj", self.pred_proj),
            ("pred_embed", self.pred_embed),
            ("joint_dim", self.joint_dim),
            ("las_heads", self.las_heads),
            ("las_layers", self.las_layers),
            ("las_hidden", self.las_hidden),
            ("las_proj", self.las_proj),
            ("las_embed", self.las_embed),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.time_reduction_layer >= self.encoder_layers {
            return Err(Error::Config(format!(
                "time_reduction_layer {} must be below encoder_layers {}",
                self.time_reduction_layer, self.encoder_layers
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config("vocab_size must be at least 4".into()));
        }
        if self.encoder_proj % self.las_heads != 0 {
            return Err(Error::Config(format!(
                "encoder_proj {} not divisible by las_heads {}",
                self.encoder_proj, self.las_heads
            )));
        }
        Ok(())
    }

    /// Width of one stacked frontend frame.
    pub fn stacked_dim(&self) -> usize {
        (self.frontend_stack + 1) * self.feature_dim
    }

    /// Attention context width; split evenly over heads.
    pub fn context_dim(&self) -> usize {
        self.encoder_proj
    }

    pub fn head_dim(&self) -> usize {
        self.encoder_proj / self.las_heads
    }

    /// Encoder output length for `raw_frames` input frames.
    pub fn encoder_frames(&self, raw_frames: usize) -> usize {
        let stacked = raw_frames.div_ceil(self.frontend_downsample);
        stacked.div_ceil(self.time_reduction_factor)
    }

    fn encoder_input_dim(&self, layer: usize) -> usize {
        let base = if layer == 0 {
            self.stacked_dim()
        } else {
            self.encoder_proj
        };
        if layer == self.time_reduction_layer {
            base * self.time_reduction_factor
        } else {
            base
        }
    }

    /// Every tensor name with its shape, in canonical (sorted) order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let lstm = |out: &mut Vec<(String, Vec<usize>)>, prefix: String, input: usize, hidden: usize, proj: usize| {
            out.push((format!("{prefix}.bias"), vec![1, 4 * hidden]));
            out.push((format!("{prefix}.kernel"), vec![input, 4 * hidden]));
            out.push((format!("{prefix}.projection"), vec![hidden, proj]));
            out.push((format!("{prefix}.recurrent"), vec![proj, 4 * hidden]));
        };
        for i in 0..self.encoder_layers {
            lstm(
                &mut out,
                format!("encoder.{i}"),
                self.encoder_input_dim(i),
                self.encoder_hidden,
                self.encoder_proj,
            );
        }
        out.push(("prediction.embedding".into(), vec![self.vocab_size, self.pred_embed]));
        for i in 0..self.pred_layers {
            let input = if i == 0 { self.pred_embed } else { self.pred_proj };
            lstm(&mut out, format!("prediction.{i}"), input, self.pred_hidden, self.pred_proj);
        }
        out.push(("joint.bias".into(), vec![1, self.joint_dim]));
        match self.joint_mode {
            JointMode::Concat => out.push((
                "joint.kernel".into(),
                vec![self.encoder_proj + self.pred_proj, self.joint_dim],
            )),
            JointMode::Sum => {
                out.push(("joint.enc_kernel".into(), vec![self.encoder_proj, self.joint_dim]));
                out.push(("joint.pred_kernel".into(), vec![self.pred_proj, self.joint_dim]));
            }
        }
        out.push(("joint.output".into(), vec![self.joint_dim, self.vocab_size]));
        out.push(("joint.output_bias".into(), vec![1, self.vocab_size]));
        let a = self.context_dim();
        out.push(("las.attention.key".into(), vec![self.encoder_proj, a]));
        out.push(("las.attention.output".into(), vec![a, a]));
        out.push(("las.attention.query".into(), vec![self.las_proj, a]));
        out.push(("las.attention.value".into(), vec![self.encoder_proj, a]));
        out.push(("las.embedding".into(), vec![self.vocab_size, self.las_embed]));
        for i in 0..self.las_layers {
            let input = if i == 0 { self.las_embed + a } else { self.las_proj };
            lstm(&mut out, format!("las.{i}"), input, self.las_hidden, self.las_proj);
        }
        out.push(("las.output".into(), vec![self.las_proj + a, self.vocab_size]));
        out.push(("las.output_bias".into(), vec![1, self.vocab_size]));
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Parameter counts per component, from shapes alone.
    pub fn parameter_counts(&self) -> ParameterCounts {
        let mut c = ParameterCounts::default();
        for (name, shape) in self.tensor_shapes() {
            let n: u64 = shape.iter().map(|&d| d as u64).product();
            match Component::of(&name) {
                Some(Component::Encoder) => c.encoder += n,
                Some(Component::Prediction) => c.prediction += n,
                Some(Component::Joint) => c.joint += n,
                Some(Component::Las) => c.las += n,
                None => {}
            }
        }
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Encoder,
    Prediction,
    Joint,
    Las,
}

impl Component {
    pub fn of(name: &str) -> Option<Component> {
        match name.split('.').next()? {
            "encoder" => Some(Component::Encoder),
            "prediction" => Some(Component::Prediction),
            "joint" => Some(Component::Joint),
            "las" => Some(Component::Las),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParameterCounts {
    pub encoder: u64,
    pub prediction: u64,
    pub joint: u64,
    pub las: u64,
}

impl ParameterCounts {
    /// Encoder plus transducer decoder (prediction and joint networks).
    pub fn first_pass_total(&self) -> u64 {
        self.encoder + self.prediction + self.joint
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_and_paper_presets_validate() {
        ModelConfig::toy().validate().unwrap();
        ModelConfig::paper_shape().validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ModelConfig::toy();
        c.time_reduction_layer = 2;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.vocab_size = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.joint_dim = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn encoder_frame_arithmetic() {
        let c = ModelConfig::toy();
        for t in 1usize..40 {
            let stacked = t.div_ceil(3);
            assert_eq!(c.encoder_frames(t), stacked.div_ceil(2));
        }
    }

    #[test]
    fn json_round_trip_uses_field_names() {
        let c = ModelConfig::toy();
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"time_reduction_factor\":2"));
        assert_eq!(serde_json::from_str::<ModelConfig>(&s).unwrap(), c);
        let partial: ModelConfig = serde_json::from_str(r#"{"vocab_size": 12}"#).unwrap();
        assert_eq!(partial.vocab_size, 12);
        assert_eq!(partial.feature_dim, 8);
    }

    #[test]
    fn reduced_layer_input_is_widened() {
        let shapes = ModelConfig::toy().tensor_shapes();
        let kernel = |n: &str| shapes.iter().find(|(k, _)| k == n).unwrap().1.clone();
        assert_eq!(kernel("encoder.0.kernel"), vec![24, 64]);
        assert_eq!(kernel("encoder.1.kernel"), vec![16, 64]);
        assert_eq!(kernel("las.0.kernel"), vec![16, 64]);
    }
}
