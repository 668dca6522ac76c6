//! Shared encoder, transducer decoder and attention decoder.
//!
//! Every component is built on [`Graph`] so the same code serves training
//! and inference. [`Model`] wraps the per-call graph plumbing for callers
//! that only need values.

mod config;
mod encoder;
mod frontend;
mod las;
mod lstm;
mod params;
mod rnnt;
mod weights;

pub use config::{Component, JointMode, ModelConfig, ParameterCounts, BLANK, EOS, FIRST_SYMBOL, SOS};
pub use encoder::{encode_graph, EncoderOutput};
pub use frontend::stack_and_downsample;
pub use las::{Las, LasDecoderState, LasMemory, LasState, LasStep};
pub use lstm::{Lstm, LstmState, LstmValues};
pub use params::Params;
pub use rnnt::{Joint, PredState, Prediction, PredictionState};
pub use weights::{load_weights, load_weights_for, save_weights, ModelWeights};

pub(crate) use rnnt::check_token;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor};

/// A validated configuration with matching weights.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    weights: ModelWeights,
}

/// Output of one attention-decoder step.
#[derive(Clone, Debug)]
pub struct LasStepOutput {
    pub log_probs: Vec<f64>,
    pub state: LasDecoderState,
    pub head_alphas: Vec<Vec<f64>>,
}

impl Model {
    pub fn new(config: ModelConfig, weights: ModelWeights) -> Result<Self> {
        weights.validate(&config)?;
        Ok(Model { config, weights })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let weights = ModelWeights::init(&config, seed)?;
        Ok(Model { config, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    /// Mutable access for optimisers; shapes must be preserved.
    pub fn weights_mut(&mut self) -> &mut ModelWeights {
        &mut self.weights
    }

    pub fn into_weights(self) -> ModelWeights {
        self.weights
    }

    pub fn bind(&self, g: &mut Graph, components: &[Component]) -> Result<Params> {
        Params::bind(g, &self.weights, components)
    }

    /// Frontend followed by the encoder, on raw `T × d` features.
    pub fn encode(&self, frames: &Tensor) -> Result<EncoderOutput> {
        let stacked = stack_and_downsample(frames, &self.config)?;
        self.encode_stacked(&stacked)
    }

    pub fn encode_stacked(&self, stacked: &Tensor) -> Result<EncoderOutput> {
        let mut g = Graph::inference();
        let p = self.bind(&mut g, &[Component::Encoder])?;
        let x = g.constant(stacked.clone())?;
        let e = encode_graph(&mut g, &p, &self.config, x)?;
        Ok(EncoderOutput(g.value(e).clone()))
    }

    /// Prediction-network state after consuming `tokens` (no blanks).
    pub fn rnnt_predict(&self, tokens: &[u32]) -> Result<PredictionState> {
        let mut g = Graph::inference();
        let p = self.bind(&mut g, &[Component::Prediction])?;
        let net = Prediction::bind(&g, &p, &self.config)?;
        let mut s = net.start(&mut g)?;
        for &t in tokens {
            s = net.step(&mut g, &s, t)?;
        }
        Ok(s.values(&g))
    }

    /// Extends a prediction state by one token.
    pub fn rnnt_predict_next(&self, state: &PredictionState, token: u32) -> Result<PredictionState> {
        let mut g = Graph::inference();
        let p = self.bind(&mut g, &[Component::Prediction])?;
        let net = Prediction::bind(&g, &p, &self.config)?;
        let s = PredState::lift(&mut g, state)?;
        Ok(net.step(&mut g, &s, token)?.values(&g))
    }

    pub fn rnnt_joint(&self, e_t: &[f64], pred: &[f64]) -> Result<Vec<f64>> {
        if e_t.len() != self.config.encoder_proj || pred.len() != self.config.pred_proj {
            return Err(Error::shape(
                "rnnt_joint",
                format!("got ({}, {}), expected ({}, {})", e_t.len(), pred.len(), self.config.encoder_proj, self.config.pred_proj),
            ));
        }
        let mut g = Graph::inference();
        let p = self.bind(&mut g, &[Component::Joint])?;
        let joint = Joint::bind(&mut g, &p, &self.config)?;
        let e = g.constant(Tensor::row(e_t.to_vec())?)?;
        let q = g.constant(Tensor::row(pred.to_vec())?)?;
        let e = joint.project_encoder(&mut g, e)?;
        let q = joint.project_prediction(&mut g, q)?;
        let lp = joint.log_probs(&mut g, e, q)?;
        Ok(g.value(lp).data().to_vec())
    }

    pub fn las_initial_state(&self) -> Result<LasDecoderState> {
        let mut g = Graph::inference();
        let p = self.bind(&mut g, &[Component::Las])?;
        let las = Las::bind(&g, &p, &self.config)?;
        Ok(las.initial_state(&mut g)?.values(&g))
    }

    pub fn las_step(&self, prev: u32, state: &LasDecoderState, e: &EncoderOutput) -> Result<LasStepOutput> {
        let mut g = Graph::inference();
        let p = self.bind(&mut g, &[Component::Las])?;
        let las = Las::bind(&g, &p, &self.config)?;
        let enc = g.constant(e.0.clone())?;
        let mem = las.memory(&mut g, enc)?;
        let s = LasState::lift(&mut g, state)?;
        let step = las.step(&mut g, &mem, &s, prev)?;
        Ok(LasStepOutput {
            log_probs: g.value(step.log_probs).data().to_vec(),
            state: step.state.values(&g),
            head_alphas: step.head_alphas,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, logsumexp};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> Model {
        Model::init(ModelConfig::toy(), seed).unwrap()
    }

    fn frames(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Tensor {
        Tensor::matrix(t, d, (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_encoding() {
        let cfg = ModelConfig::toy();
        let m = Model::new(cfg.clone(), ModelWeights::zeros(&cfg).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = m.encode(&frames(&mut rng, 10, 8)).unwrap();
        assert!(e.0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_length_follows_downsampling_and_reduction() {
        let m = model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 1usize..16 {
            let e = m.encode(&frames(&mut rng, t, 8)).unwrap();
            assert_eq!(e.frames(), t.div_ceil(3).div_ceil(2));
            assert_eq!(e.dim(), 8);
        }
    }

    #[test]
    fn encoder_is_causal() {
        let m = model(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = frames(&mut rng, 24, 8);
        let base = m.encode(&x).unwrap();
        for t in [6usize, 13, 20] {
            let mut y = x.clone();
            y.data_mut()[t * 8 + 3] += 0.5;
            let moved = m.encode(&y).unwrap();
            // Raw frame t reaches stacked row ceil(t/3) at the earliest, then
            // output row ceil(t/3)/2.
            let first = t.div_ceil(3) / 2;
            for r in 0..first {
                let same = base.0.row_slice(r).iter().zip(moved.0.row_slice(r)).all(|(a, b)| a.to_bits() == b.to_bits());
                assert!(same, "row {r} changed by frame {t}");
            }
            assert_ne!(base.0.row_slice(first), moved.0.row_slice(first));
        }
    }

    #[test]
    fn prediction_is_incremental() {
        let m = model(3);
        let tokens = [5, 9, 3, 30];
        let batch = m.rnnt_predict(&tokens).unwrap();
        let mut s = m.rnnt_predict(&[]).unwrap();
        assert_eq!(s, m.rnnt_predict(&[]).unwrap());
        for &t in &tokens {
            s = m.rnnt_predict_next(&s, t).unwrap();
        }
        assert_eq!(s, batch);
        let other = m.rnnt_predict(&[6, 9, 3, 30]).unwrap();
        assert_ne!(other.output, batch.output);
        assert!(matches!(m.rnnt_predict(&[36]), Err(Error::OutOfVocab { .. })));
        assert!(m.rnnt_predict(&[BLANK]).is_err());
    }

    #[test]
    fn joint_is_normalized() {
        let m = model(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let e: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let q: Vec<f64> = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let lp = m.rnnt_joint(&e, &q).unwrap();
            assert_eq!(lp.len(), 36);
            assert!(logsumexp(&lp).unwrap().abs() < 1e-10);
        }
        assert!(m.rnnt_joint(&[0.0; 7], &[0.0; 16]).is_err());
    }

    #[test]
    fn zero_joint_is_uniform() {
        let cfg = ModelConfig::toy();
        let m = Model::new(cfg.clone(), ModelWeights::zeros(&cfg).unwrap()).unwrap();
        let lp = m.rnnt_joint(&[0.0; 8], &[0.0; 16]).unwrap();
        assert!(lp.iter().all(|&v| (v + 36f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn single_frame_attention_is_one() {
        let m = model(5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = m.encode(&frames(&mut rng, 2, 8)).unwrap();
        assert_eq!(e.frames(), 1);
        let out = m.las_step(SOS, &m.las_initial_state().unwrap(), &e).unwrap();
        assert_eq!(out.head_alphas.len(), 2);
        assert!(out.head_alphas.iter().all(|a| a == &vec![1.0]));
    }

    #[test]
    fn las_step_is_deterministic_and_chains() {
        let m = model(6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let e = m.encode(&frames(&mut rng, 30, 8)).unwrap();
        let s0 = m.las_initial_state().unwrap();
        let a = m.las_step(SOS, &s0, &e).unwrap();
        let b = m.las_step(SOS, &s0, &e).unwrap();
        assert_eq!(a.log_probs, b.log_probs);
        let c = m.las_step(7, &a.state, &e).unwrap();
        assert_ne!(c.log_probs, a.log_probs);
        assert!(m.las_step(99, &s0, &e).is_err());
    }

    #[test]
    fn paper_shape_counts() {
        let c = ModelConfig::paper_shape().parameter_counts();
        assert_eq!(c.las, 31_674_368);
        assert_eq!(c.first_pass_total(), 119_788_160);
        let toy = ModelConfig::toy();
        let w = ModelWeights::init(&toy, 0).unwrap();
        let counts = toy.parameter_counts();
        assert_eq!(w.parameter_count(Some(Component::Las)), counts.las);
        assert_eq!(w.parameter_count(None), counts.first_pass_total() + counts.las);
    }

    /// A scalar that touches the encoder, both decoders and the joint.
    fn toy_objective(m: &Model, g: &mut Graph, p: &Params, x: &Tensor) -> Result<crate::numerics::Var> {
        let cfg = m.config();
        let xv = g.constant(x.clone())?;
        let e = encode_graph(g, p, cfg, xv)?;
        let pred = Prediction::bind(g, p, cfg)?;
        let joint = Joint::bind(g, p, cfg)?;
        let s0 = pred.start(g)?;
        let s1 = pred.step(g, &s0, 4)?;
        let rows = g.concat_rows(&[s0.output, s1.output])?;
        let ep = joint.project_encoder(g, e)?;
        let pp = joint.project_prediction(g, rows)?;
        let lp = joint.log_probs(g, ep, pp)?;
        let a = g.pick(lp, 1, 4)?;
        let las = Las::bind(g, p, cfg)?;
        let mem = las.memory(g, e)?;
        let st = las.initial_state(g)?;
        let s1 = las.step(g, &mem, &st, SOS)?;
        let s2 = las.step(g, &mem, &s1.state, 4)?;
        let b = g.pick(s1.log_probs, 0, 4)?;
        let c = g.pick(s2.log_probs, 0, 5)?;
        let ab = g.add(a, b)?;
        let abc = g.add(ab, c)?;
        g.scale(abc, -1.0)
    }

    #[test]
    fn every_component_passes_grad_check() {
        // Wider init and a coarser step keep every coordinate above
        // finite-difference roundoff.
        let cfg = ModelConfig::toy();
        let m = Model::new(cfg.clone(), ModelWeights::init_uniform(&cfg, 8, 0.5).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = frames(&mut rng, 8, 24);
        for name in [
            "encoder.0.kernel",
            "encoder.1.recurrent",
            "prediction.embedding",
            "prediction.0.bias",
            "joint.kernel",
            "joint.output",
            "las.attention.key",
            "las.attention.query",
            "las.0.kernel",
            "las.output",
        ] {
            let w0 = m.weights().get(name).unwrap().clone();
            let err = grad_check(
                |g, v| {
                    let mut p = m.bind(g, &[])?;
                    p.set(name, v);
                    toy_objective(&m, g, &p, &x)
                },
                &w0,
                1e-3,
            )
            .unwrap();
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn attention_and_output_are_normalized(seed in 0u64..1000, t in 1usize..20, prev in 0u32..36) {
            let m = model(seed % 4);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = m.encode(&frames(&mut rng, t, 8)).unwrap();
            let out = m.las_step(prev, &m.las_initial_state().unwrap(), &e).unwrap();
            for a in &out.head_alphas {
                prop_assert_eq!(a.len(), e.frames());
                prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
            prop_assert!(logsumexp(&out.log_probs).unwrap().abs() < 1e-10);
        }
    }
}
