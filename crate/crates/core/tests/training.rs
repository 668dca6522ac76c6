use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twopass_core::data::{generate, CorpusSpec, Split};
use twopass_core::error::Error;
use twopass_core::model::{Component, Model, ModelConfig, ModelWeights, BLANK};
use twopass_core::numerics::{grad_check, log_add_exp, Graph, Tensor};
use twopass_core::second_pass::las_sequence_logprob;
use twopass_core::training::*;

fn model(vocab: usize, seed: u64, range: f64) -> Model {
    let cfg = ModelConfig { vocab_size: vocab, ..ModelConfig::toy() };
    Model::new(cfg.clone(), ModelWeights::init_uniform(&cfg, seed, range).unwrap()).unwrap()
}

fn features(seed: u64, t: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(t, 8, (0..t * 8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Raw frame count whose encoding has `t` rows.
fn raw_for(t: usize) -> usize {
    6 * t - 5
}

/// Every blank/label interleaving that ends each frame with blank.
fn alignments(frames: usize, labels: usize) -> Vec<Vec<Option<usize>>> {
    fn go(t: usize, u: usize, frames: usize, labels: usize, cur: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if t == frames {
            if u == labels {
                out.push(cur.clone());
            }
            return;
        }
        if u < labels {
            cur.push(Some(u));
            go(t, u + 1, frames, labels, cur, out);
            cur.pop();
        }
        cur.push(None);
        go(t + 1, u, frames, labels, cur, out);
        cur.pop();
    }
    let mut out = Vec::new();
    go(0, 0, frames, labels, &mut Vec::new(), &mut out);
    out
}

/// `−log Σ_paths Π p` from the model's own per-node distributions.
fn brute_force_nll(m: &Model, frames: &Tensor, target: &[u32]) -> f64 {
    let enc = m.encode(frames).unwrap();
    let preds: Vec<Vec<f64>> = (0..=target.len()).map(|u| m.rnnt_predict(&target[..u]).unwrap().output).collect();
    let dists: Vec<Vec<Vec<f64>>> = (0..enc.frames())
        .map(|t| preds.iter().map(|q| m.rnnt_joint(enc.0.row_slice(t), q).unwrap()).collect())
        .collect();
    let mut total = f64::NEG_INFINITY;
    for path in alignments(enc.frames(), target.len()) {
        let (mut t, mut u, mut lp) = (0, 0, 0.0);
        for step in path {
            match step {
                Some(i) => {
                    lp += dists[t][u][target[i] as usize];
                    u += 1;
                }
                None => {
                    lp += dists[t][u][BLANK as usize];
                    t += 1;
                }
            }
        }
        total = log_add_exp(total, lp);
    }
    -total
}

#[test]
fn rnnt_loss_matches_alignment_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = 0;
    for labels in 1..=3usize {
        let m = model(3 + labels, labels as u64, 0.5);
        for frames in 1..=4 {
            for u in 0..=3 {
                let x = features(rng.gen(), raw_for(frames));
                let target: Vec<u32> = (0..u).map(|_| rng.gen_range(3..3 + labels as u32)).collect();
                let loss = rnnt_loss(&m, &x, &target).unwrap();
                let oracle = brute_force_nll(&m, &x, &target);
                assert!((loss - oracle).abs() < 1e-9, "T'={frames} U={u}: {loss} vs {oracle}");
                assert!(loss >= 0.0);
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 48);
}

#[test]
fn transducer_op_matches_enumeration_on_raw_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for vocab in 2..=3usize {
        for frames in 1..=4 {
            for u in 0..=3 {
                let labels: Vec<usize> = (0..u).map(|_| rng.gen_range(1..vocab)).collect();
                let rows = frames * (u + 1);
                let logits: Vec<f64> = (0..rows * vocab).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let mut g = Graph::new();
                let x = g.param(Tensor::matrix(rows, vocab, logits).unwrap()).unwrap();
                let lp = g.log_softmax(x).unwrap();
                let nll = g.transducer_nll(lp, frames, &labels, 0).unwrap();
                let grid = g.value(lp).clone();
                let at = |t: usize, j: usize, k: usize| grid.get(t * (u + 1) + j, k);
                let mut total = f64::NEG_INFINITY;
                for path in alignments(frames, u) {
                    let (mut t, mut j, mut s) = (0, 0, 0.0);
                    for step in path {
                        match step {
                            Some(i) => {
                                s += at(t, j, labels[i]);
                                j += 1;
                            }
                            None => {
                                s += at(t, j, 0);
                                t += 1;
                            }
                        }
                    }
                    total = log_add_exp(total, s);
                }
                assert!((g.scalar(nll).unwrap() + total).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn rnnt_single_frame_empty_target_is_blank_nll() {
    let m = model(36, 1, 0.3);
    let x = features(1, 1);
    let enc = m.encode(&x).unwrap();
    assert_eq!(enc.frames(), 1);
    let dist = m.rnnt_joint(enc.0.row_slice(0), &m.rnnt_predict(&[]).unwrap().output).unwrap();
    assert!((rnnt_loss(&m, &x, &[]).unwrap() + dist[BLANK as usize]).abs() < 1e-12);
    assert!((rnnt_sequence_logprob(&m, &x, &[]).unwrap() - dist[BLANK as usize]).abs() < 1e-12);
    let long = vec![3u32; 11];
    assert!(matches!(rnnt_loss(&m, &x, &long), Err(Error::TargetTooLong { target: 11, frames: 1, budget: 10 })));
    assert!(matches!(rnnt_loss(&m, &x, &[40]), Err(Error::OutOfVocab { .. })));
    assert!(rnnt_loss(&m, &x, &[1]).is_err());
}

#[test]
fn las_ce_and_combined_identities() {
    let m = model(36, 2, 0.3);
    let x = features(2, 25);
    let target = [5u32, 17, 9];
    let ce = las_ce_loss(&m, &x, &target).unwrap();
    let (lp, _) = las_sequence_logprob(&m, &target, &m.encode(&x).unwrap()).unwrap();
    assert_eq!(ce.to_bits(), (-lp).to_bits());
    assert!(ce >= 0.0);
    let r = rnnt_loss(&m, &x, &target).unwrap();
    let at = |lambda: f64| combined_loss(&m, &x, &target, &CombinedLossConfig { lambda }).unwrap();
    assert_eq!(at(1.0).to_bits(), r.to_bits());
    assert_eq!(at(0.0).to_bits(), ce.to_bits());
    assert_eq!(at(0.5), 0.5 * r + 0.5 * ce);
    assert!(CombinedLossConfig { lambda: 1.5 }.validate().is_err());
    assert_eq!(CombinedLossConfig::default().lambda, 0.5);
}

#[test]
fn mwer_algebra() {
    let set = HypothesisSet::new(vec![vec![3], vec![4]], vec![2, 0]).unwrap();
    assert_eq!(mwer_from_posteriors(&[0.25, 0.75], &set).unwrap(), -0.5);
    assert_eq!(set.relative_errors(), vec![1.0, -1.0]);

    let m = model(36, 3, 0.3);
    let x = features(3, 19);
    let hyps = vec![vec![3u32, 4], vec![5], vec![6, 7, 8]];
    let flat = HypothesisSet::new(hyps.clone(), vec![2, 2, 2]).unwrap();
    assert_eq!(mwer_loss(&m, &x, &flat).unwrap(), 0.0);
    let base = HypothesisSet::new(hyps.clone(), vec![0, 3, 1]).unwrap();
    let shifted = HypothesisSet::new(hyps.clone(), vec![5, 8, 6]).unwrap();
    let a = mwer_loss(&m, &x, &base).unwrap();
    assert!((a - mwer_loss(&m, &x, &shifted).unwrap()).abs() < 1e-15);
    let post = mwer_posteriors(&m, &x, &base).unwrap();
    assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((a - mwer_from_posteriors(&post, &base).unwrap()).abs() < 1e-15);

    assert_eq!(mwer_ce_loss(&m, &x, &[3, 4], &base, 0.0).unwrap().to_bits(), a.to_bits());
    let ce = las_ce_loss(&m, &x, &[3, 4]).unwrap();
    let full = mwer_ce_loss(&m, &x, &[3, 4], &base, 0.01).unwrap();
    assert!((full - (a + 0.01 * ce)).abs() < 1e-12);
    assert_eq!(MwerConfig::default().lambda_mle, 0.01);
    assert!(MwerConfig { beam_size: 1, ..MwerConfig::default() }.validate().is_err());
    assert!(HypothesisSet::new(vec![], vec![]).is_err());
}

const PROBES: &[&str] = &[
    "encoder.0.bias",
    "encoder.1.projection",
    "prediction.0.bias",
    "joint.bias",
    "joint.output_bias",
    "las.0.bias",
    "las.attention.query",
    "las.output_bias",
];

fn check_loss(m: &Model, name: &str, loss: &dyn Fn(&mut Graph, &twopass_core::model::Params) -> twopass_core::Result<twopass_core::numerics::Var>) -> f64 {
    let t = m.weights().get(name).unwrap().clone();
    grad_check(
        |g, v| {
            let mut p = m.bind(g, &[])?;
            p.set(name, v);
            loss(g, &p)
        },
        &t,
        3e-4,
    )
    .unwrap()
}

#[test]
fn loss_gradients_pass_finite_differences() {
    for seed in 0..5u64 {
        let m = model(12, seed, 0.5);
        let cfg = m.config().clone();
        let x = features(100 + seed, 19);
        let target = [3u32, 7, 4];
        let set = HypothesisSet::new(vec![vec![3, 7, 4], vec![3, 7], vec![5, 9]], vec![0, 1, 2]).unwrap();
        let losses: Vec<(&str, Box<dyn Fn(&mut Graph, &twopass_core::model::Params) -> _>)> = vec![
            ("rnnt", Box::new(|g: &mut Graph, p: &_| {
                let e = encoder_var(g, p, &cfg, &x)?;
                rnnt_loss_var(g, p, &cfg, e, &target)
            })),
            ("las", Box::new(|g: &mut Graph, p: &_| {
                let e = encoder_var(g, p, &cfg, &x)?;
                las_ce_var(g, p, &cfg, e, &target)
            })),
            ("combined", Box::new(|g: &mut Graph, p: &_| {
                let e = encoder_var(g, p, &cfg, &x)?;
                combined_var(g, p, &cfg, e, &target, &CombinedLossConfig { lambda: 0.5 })
            })),
            ("mwer_ce", Box::new(|g: &mut Graph, p: &_| {
                let e = encoder_var(g, p, &cfg, &x)?;
                mwer_ce_var(g, p, &cfg, e, &target, &set, 0.01)
            })),
        ];
        for (label, f) in &losses {
            for name in PROBES {
                let relevant = match *label {
                    "rnnt" => !name.starts_with("las"),
                    "las" | "mwer_ce" => !name.starts_with("prediction") && !name.starts_with("joint"),
                    _ => true,
                };
                if !relevant {
                    continue;
                }
                let err = check_loss(&m, name, f.as_ref());
                assert!(err < 1e-4, "seed {seed} {label} {name}: {err}");
            }
        }
    }
}

#[test]
fn ce_decreases_under_gradient_descent() {
    let mut m = model(36, 4, 0.1);
    let x = features(4, 25);
    let target = vec![5u32, 17, 9, 9];
    let cfg = m.config().clone();
    let mut curve = Vec::new();
    for _ in 0..50 {
        let (loss, grads) = loss_and_gradients(&m, &[], |g, p| {
            let e = encoder_var(g, p, &cfg, &x)?;
            las_ce_var(g, p, &cfg, e, &target)
        })
        .unwrap();
        curve.push(loss);
        for (name, gr) in grads {
            let w = m.weights_mut().get_mut(&name).unwrap();
            w.data_mut().iter_mut().zip(gr.data()).for_each(|(a, b)| *a -= 0.1 * b);
        }
    }
    assert!(curve[49] < 0.5 * curve[0], "{curve:?}");
    let decreasing = curve.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(decreasing >= 45);
}

fn small_corpus() -> (twopass_core::data::Corpus, Vec<Example>) {
    let spec = CorpusSpec { num_utterances: 30, long_utterances: 0, contacts_utterances: 0, ..CorpusSpec::default() };
    let c = generate(&spec).unwrap();
    let ex = Example::from_utterances(c.split(Split::Train)).unwrap();
    (c, ex)
}

fn snapshot(m: &Model, comp: Component) -> Vec<(String, Vec<u64>)> {
    m.weights()
        .iter()
        .filter(|(n, _)| Component::of(n) == Some(comp))
        .map(|(n, t)| (n.clone(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn recipe_freeze_order_and_resume() {
    let (c, ex) = small_corpus();
    let ex = &ex[..8];
    let cfg = TrainConfig::default();
    let fresh = Model::init(ModelConfig::toy(), 1).unwrap();

    let mut t = Trainer::new(fresh.clone(), 0, cfg.clone()).unwrap();
    assert!(matches!(t.run_stage(2, ex, None, 0..1), Err(Error::StageOrder { requested: 2, completed: 0 })));
    assert!(t.run_stage(4, ex, None, 0..1).is_err());
    let c1 = t.run_stage(1, ex, None, 0..1).unwrap();
    assert_eq!(c1.len(), 1);
    assert_eq!(snapshot(t.model(), Component::Las), snapshot(&fresh, Component::Las));

    let before = t.model().clone();
    let dev = DevSet { examples: &ex[..2], vocab: &c.vocab };
    let c2 = t.run_stage(2, ex, Some(dev), 0..1).unwrap();
    assert!(c2[0].wer_dev.is_some());
    for comp in [Component::Encoder, Component::Prediction, Component::Joint] {
        assert_eq!(snapshot(t.model(), comp), snapshot(&before, comp));
    }
    assert_ne!(snapshot(t.model(), Component::Las), snapshot(&before, Component::Las));

    let before = t.model().clone();
    t.run_stage(3, ex, None, 0..1).unwrap();
    for comp in [Component::Encoder, Component::Prediction, Component::Joint, Component::Las] {
        assert_ne!(snapshot(t.model(), comp), snapshot(&before, comp));
    }

    let mut long = Trainer::new(fresh.clone(), 0, cfg.clone()).unwrap();
    let whole = long.run_stage(1, ex, None, 0..3).unwrap();
    let mut split = Trainer::new(fresh.clone(), 0, cfg.clone()).unwrap();
    let mut parts = split.run_stage(1, ex, None, 0..2).unwrap();
    let resumed = Trainer::new(split.into_model(), 1, cfg).unwrap().run_stage(1, ex, None, 2..3).unwrap();
    parts.extend(resumed);
    assert_eq!(whole, parts);

    let mut buf = Vec::new();
    write_curve_csv(&mut buf, &whole).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "epoch,stage,mean_loss,wer_dev");
    assert!(text.lines().nth(1).unwrap().starts_with("0,1,"));
}

#[test]
fn all_correct_sets_give_no_mwer_gradient() {
    let m = model(36, 6, 0.3);
    let cfg = m.config().clone();
    let x = features(6, 13);
    let set = HypothesisSet::new(vec![vec![3], vec![4, 5]], vec![0, 0]).unwrap();
    let (loss, grads) = loss_and_gradients(&m, &[Component::Encoder, Component::Las], |g, p| {
        let e = encoder_var(g, p, &cfg, &x)?;
        mwer_var(g, p, &cfg, e, &set)
    })
    .unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.values().all(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn mwer_finetune_lowers_expected_errors_and_touches_only_las() {
    let (c, ex) = small_corpus();
    let ex = &ex[..12];
    let mut m = Model::init(ModelConfig::toy(), 2).unwrap();
    let mut t = Trainer::new(m.clone(), 0, TrainConfig::default()).unwrap();
    t.run_stage(1, ex, None, 0..2).unwrap();
    m = t.into_model();
    let before = m.clone();
    let cfg = MwerConfig { beam_size: 4, ..MwerConfig::default() };
    let tc = TrainConfig { learning_rate: 0.2, ..TrainConfig::default() };
    let curve = mwer_finetune(&mut m, ex, &c.vocab, &cfg, &tc, None, 0..10).unwrap();
    assert_eq!(curve.len(), 10);
    assert!(curve[9].mean_mwer < curve[0].mean_mwer, "{:?}", curve.iter().map(|r| r.mean_mwer).collect::<Vec<_>>());
    for comp in [Component::Encoder, Component::Prediction, Component::Joint] {
        assert_eq!(snapshot(&m, comp), snapshot(&before, comp));
    }
    let las_cfg = MwerConfig { source: HypothesisSource::Las, ..cfg };
    let set = hypothesis_set(&m, &ex[0], &c.vocab, &las_cfg).unwrap();
    if let Some(s) = set {
        let enc = m.encode(&ex[0].features).unwrap();
        let rc = twopass_core::second_pass::RescoreConfig { las_beam_size: 4, ..Default::default() };
        let beam: Vec<Vec<u32>> =
            twopass_core::second_pass::las_beam_search(&m, &enc, &rc).unwrap().into_iter().map(|h| h.tokens).collect();
        assert_eq!(s.hypotheses, beam);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn mwer_value_is_bounded_and_shift_invariant(
        logits in proptest::collection::vec(-5.0f64..5.0, 2..6),
        errs in proptest::collection::vec(0u32..6, 6),
        shift in 0u32..10,
    ) {
        let b = logits.len();
        let hyps: Vec<Vec<u32>> = (0..b).map(|i| vec![3 + i as u32]).collect();
        let set = HypothesisSet::new(hyps.clone(), errs[..b].to_vec()).unwrap();
        let post = twopass_core::numerics::softmax(&logits).unwrap();
        prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let v = mwer_from_posteriors(&post, &set).unwrap();
        let rel = set.relative_errors();
        let lo = rel.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = rel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        let shifted = HypothesisSet::new(hyps, errs[..b].iter().map(|w| w + shift).collect()).unwrap();
        prop_assert!((mwer_from_posteriors(&post, &shifted).unwrap() - v).abs() < 1e-12);
    }
}
