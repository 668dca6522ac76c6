use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twopass_core::first_pass::*;
use twopass_core::model::{EncoderOutput, Model, ModelConfig, ModelWeights, BLANK, FIRST_SYMBOL};
use twopass_core::numerics::{log_add_exp, Tensor};

fn model(vocab: usize, seed: u64, range: f64) -> Model {
    let cfg = ModelConfig { vocab_size: vocab, ..ModelConfig::toy() };
    Model::new(cfg.clone(), ModelWeights::init_uniform(&cfg, seed, range).unwrap()).unwrap()
}

fn frames(seed: u64, t: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(t, 8, (0..t * 8).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

fn cfg(h: usize, cap: usize) -> BeamConfig {
    BeamConfig { beam_size: h, max_symbols_per_frame: cap, ..BeamConfig::default() }
}

/// Sums path probabilities over every alignment with at most `cap`
/// emissions per frame, grouped by label sequence.
fn exhaustive(m: &Model, enc: &EncoderOutput, cap: usize) -> BTreeMap<Vec<u32>, f64> {
    let vocab = m.config().vocab_size as u32;
    let mut states: BTreeMap<Vec<u32>, f64> = BTreeMap::from([(vec![], 0.0)]);
    for t in 0..enc.frames() {
        let e = enc.0.row_slice(t);
        let mut next: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        let mut frontier: Vec<(Vec<u32>, f64)> = states.into_iter().collect();
        for level in 0..=cap {
            let mut grown = Vec::new();
            for (seq, lp) in frontier {
                let pred = m.rnnt_predict(&seq).unwrap();
                let dist = m.rnnt_joint(e, &pred.output).unwrap();
                let ended = lp + dist[BLANK as usize];
                next.entry(seq.clone()).and_modify(|v| *v = log_add_exp(*v, ended)).or_insert(ended);
                if level < cap {
                    for k in FIRST_SYMBOL..vocab {
                        let mut s = seq.clone();
                        s.push(k);
                        grown.push((s, lp + dist[k as usize]));
                    }
                }
            }
            frontier = grown;
        }
        states = next;
    }
    states
}

#[test]
fn certain_blank_gives_single_empty_hypothesis() {
    let c = ModelConfig::toy();
    let mut w = ModelWeights::zeros(&c).unwrap();
    w.get_mut("joint.output_bias").unwrap().data_mut()[BLANK as usize] = 40.0;
    let m = Model::new(c, w).unwrap();
    let x = frames(0, 1);
    let hyps = decode_fixed_beam(&m, &x, &cfg(1, 10)).unwrap();
    assert_eq!(hyps.len(), 1);
    assert!(hyps[0].tokens.is_empty());
    let p_blank = -(1.0 + 35.0 * (-40f64).exp()).ln();
    assert!((hyps[0].log_prob_rnnt - p_blank).abs() < 1e-12);
    let wide = decode_fixed_beam(&m, &x, &cfg(4, 10)).unwrap();
    assert!(wide[0].tokens.is_empty());
}

#[test]
fn exhaustive_optimality_with_one_symbol_per_frame() {
    // Two symbols, three frames, one emission per frame: 15 sequences.
    for seed in 0..4 {
        let m = model(5, seed, 0.8);
        let enc = m.encode(&frames(seed, 16)).unwrap();
        assert_eq!(enc.frames(), 3);
        let oracle = exhaustive(&m, &enc, 1);
        assert_eq!(oracle.len(), 15);
        let out = beam_search(&m, &enc, &cfg(15, 1)).unwrap();
        assert_eq!(out.hypotheses.len(), 15);
        for h in &out.hypotheses {
            assert!((oracle[&h.tokens] - h.log_prob_rnnt).abs() < 1e-12);
        }
        let best = oracle.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert_eq!(&out.hypotheses[0].tokens, best.0);
    }
}

#[test]
fn exhaustive_optimality_with_two_symbols_per_frame() {
    // One symbol, two frames, up to two emissions each: 5 sequences.
    for seed in 0..4 {
        let m = model(4, 10 + seed, 0.8);
        let enc = m.encode(&frames(seed, 10)).unwrap();
        assert_eq!(enc.frames(), 2);
        let oracle = exhaustive(&m, &enc, 2);
        assert_eq!(oracle.len(), 5);
        let out = beam_search(&m, &enc, &cfg(5, 2)).unwrap();
        for h in &out.hypotheses {
            assert!((oracle[&h.tokens] - h.log_prob_rnnt).abs() < 1e-12);
        }
    }
}

#[test]
fn beam_one_is_greedy() {
    let mut emitted = 0;
    for seed in 0..6 {
        let m = model(36, seed, 0.5);
        let enc = m.encode(&frames(seed, 30)).unwrap();
        let g = greedy_decode(&m, &enc, 3).unwrap();
        let b = beam_search(&m, &enc, &cfg(1, 3)).unwrap();
        assert_eq!(b.hypotheses.len(), 1);
        assert_eq!(b.hypotheses[0].tokens, g.tokens);
        assert_eq!(b.hypotheses[0].log_prob_rnnt.to_bits(), g.log_prob_rnnt.to_bits());
        emitted += g.tokens.len();
    }
    assert!(emitted > 0);
}

#[test]
fn infinite_threshold_is_fixed_beam_and_tiny_threshold_is_greedy() {
    for seed in 0..4 {
        let m = model(36, seed, 0.5);
        let x = frames(seed + 5, 27);
        let fixed = decode_fixed_beam(&m, &x, &cfg(6, 4)).unwrap();
        let inf = BeamConfig { adaptive_threshold: Some(f64::INFINITY), ..cfg(6, 4) };
        let (adaptive, lattice) = decode_adaptive_beam(&m, &x, &inf).unwrap();
        assert_eq!(fixed.len(), adaptive.len());
        for (a, b) in fixed.iter().zip(&adaptive) {
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(a.total_score.to_bits(), b.total_score.to_bits());
        }
        assert_eq!(nbest_from_lattice(&lattice, 6).unwrap(), adaptive);

        let tiny = BeamConfig { adaptive_threshold: Some(1e-12), ..cfg(6, 4) };
        let (narrow, _) = decode_adaptive_beam(&m, &x, &tiny).unwrap();
        let g = greedy_decode(&m, &m.encode(&x).unwrap(), 4).unwrap();
        assert_eq!(narrow.len(), 1);
        assert_eq!(narrow[0].tokens, g.tokens);
    }
}

#[test]
fn mode_preconditions() {
    let m = model(36, 1, 0.1);
    let x = frames(1, 6);
    let adaptive = BeamConfig { adaptive_threshold: Some(2.0), ..cfg(4, 2) };
    assert!(decode_fixed_beam(&m, &x, &adaptive).is_err());
    assert!(decode_adaptive_beam(&m, &x, &cfg(4, 2)).is_err());
    assert!(decode_fixed_beam(&m, &x, &cfg(0, 2)).is_err());
    let zero = BeamConfig { adaptive_threshold: Some(0.0), ..cfg(4, 2) };
    assert!(decode_adaptive_beam(&m, &x, &zero).is_err());
}

#[test]
fn zero_bias_weight_is_bitwise_neutral() {
    let m = model(36, 3, 0.5);
    let enc = m.encode(&frames(3, 24)).unwrap();
    let plain = beam_search(&m, &enc, &cfg(4, 3)).unwrap();
    let trie = Arc::new(BiasingTrie::new([vec![5u32, 6], vec![7, 8, 9], plain.hypotheses[1].tokens.clone()]));
    let biased = BeamConfig { biasing: Some(trie.clone()), bias_weight: 0.0, ..cfg(4, 3) };
    let b = beam_search(&m, &enc, &biased).unwrap();
    assert_eq!(plain.hypotheses, b.hypotheses);

    // A large weight on the runner-up pulls it to the top.
    let strong = BeamConfig { biasing: Some(trie), bias_weight: 5.0, ..cfg(4, 3) };
    let s = beam_search(&m, &enc, &strong).unwrap();
    assert_eq!(s.hypotheses[0].tokens, plain.hypotheses[1].tokens);
    assert!(s.hypotheses[0].total_score > s.hypotheses[0].log_prob_rnnt);
}

fn enumerate_paths(l: &Lattice) -> Vec<Hypothesis> {
    fn walk(l: &Lattice, node: usize, prefix: &mut Vec<u32>, out: &mut Vec<Hypothesis>) {
        if let Some(f) = l.finals().iter().find(|f| f.node == node) {
            out.push(Hypothesis { total_score: f.score, ..Hypothesis::new(prefix.clone(), f.logp_rnnt) });
        }
        for a in l.arcs().iter().filter(|a| a.from == node) {
            prefix.push(a.token);
            walk(l, a.to, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    walk(l, 0, &mut Vec::new(), &mut out);
    sort_hypotheses(&mut out);
    out
}

fn random_hyps(rng: &mut ChaCha8Rng, max_arcs: usize) -> Vec<Hypothesis> {
    let mut seen = std::collections::BTreeSet::new();
    let mut hyps = Vec::new();
    for _ in 0..rng.gen_range(1..6) {
        let len = rng.gen_range(0..5);
        let toks: Vec<u32> = (0..len).map(|_| rng.gen_range(3..6)).collect();
        if seen.insert(toks.clone()) {
            let score = -(rng.gen_range(0..8) as f64) * 0.5;
            hyps.push(Hypothesis::new(toks, score));
        }
    }
    let l = Lattice::from_hypotheses(&hyps, None).unwrap();
    if count_arcs(&l) > max_arcs {
        hyps.truncate(1);
    }
    hyps
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn returned_beam_is_unique_sorted_and_round_trips(seed in 0u64..500, t in 1usize..25, h in 1usize..7) {
        let m = model(36, seed % 3, 0.5);
        let enc = m.encode(&frames(seed, t)).unwrap();
        let out = beam_search(&m, &enc, &cfg(h, 3)).unwrap();
        let hyps = &out.hypotheses;
        prop_assert!(!hyps.is_empty() && hyps.len() <= h);
        let set: std::collections::BTreeSet<_> = hyps.iter().map(|x| x.tokens.clone()).collect();
        prop_assert_eq!(set.len(), hyps.len());
        prop_assert!(hyps.iter().all(|x| x.total_score <= hyps[0].total_score));
        prop_assert!(hyps.iter().all(|x| x.log_prob_rnnt <= 0.0 && x.tokens.iter().all(|&k| k >= FIRST_SYMBOL)));
        let longest = hyps.iter().map(|x| x.tokens.len()).max().unwrap();
        prop_assert!(count_arcs(&out.lattice) <= h * longest);
        prop_assert_eq!(&nbest_from_lattice(&out.lattice, h).unwrap(), hyps);
        prop_assert_eq!(enumerate_paths(&out.lattice), hyps.clone());
    }

    #[test]
    fn nbest_matches_path_enumeration(seed in 0u64..10_000, k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hyps = random_hyps(&mut rng, 20);
        let l = Lattice::from_hypotheses(&hyps, None).unwrap();
        let all = enumerate_paths(&l);
        let top = nbest_from_lattice(&l, k).unwrap();
        prop_assert_eq!(&top[..], &all[..k.min(all.len())]);
    }

    #[test]
    fn leaving_the_trie_nets_zero(phrase in proptest::collection::vec(3u32..8, 2..5), cut in 1usize..4, detour in 8u32..12) {
        let trie = BiasingTrie::new([phrase.clone()]);
        let cut = cut.min(phrase.len() - 1);
        let mut history = phrase[..cut].to_vec();
        history.push(detour);
        let mut h = Hypothesis::new(vec![], 0.0);
        let mut total = 0.0;
        for &t in &history {
            total += bias_adjust(&h, t, &trie, 1.7);
            h.tokens.push(t);
        }
        prop_assert_eq!(total, 0.0);
    }
}
