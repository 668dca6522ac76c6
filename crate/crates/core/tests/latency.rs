use proptest::prelude::*;
use twopass_core::first_pass::Hypothesis;
use twopass_core::latency::*;
use twopass_core::model::{Model, ModelConfig};

/// Float oracle: steps · bytes / bandwidth in ms, to the nearest tenth.
fn oracle_ms(steps: u64, bytes: u64, bw: u64) -> f64 {
    (steps as f64 * bytes as f64 / bw as f64 * 1e4).round() / 10.0
}

fn hyp(t: &[u32]) -> Hypothesis {
    Hypothesis::new(t.to_vec(), 0.0)
}

#[test]
fn published_latencies() {
    for (h, ms) in [(2, 184.8), (4, 369.6), (8, 739.2)] {
        let p = LatencyParams { hypotheses: h, ..LatencyParams::default() };
        assert_eq!(estimate_latency(&p).unwrap(), ms);
        assert_eq!(oracle_ms(h * 28, 33_000_000, 10_000_000_000), ms);
    }
    let p = LatencyParams { arcs: Some(52), ..LatencyParams::default() };
    assert_eq!(estimate_latency(&p).unwrap(), 171.6);
}

#[test]
fn budget_boundaries() {
    let at = |arcs| LatencyParams { arcs: Some(arcs), ..LatencyParams::default() };
    assert!(estimate_latency(&at(60)).unwrap() <= BUDGET_MS);
    assert!(estimate_latency(&at(61)).unwrap() > BUDGET_MS);
    let beam8 = LatencyParams { hypotheses: 8, ..LatencyParams::default() };
    assert!(estimate_latency(&beam8).unwrap() > BUDGET_MS);
}

#[test]
fn work_from_hypotheses() {
    let hs = [hyp(&[3, 4, 5]), hyp(&[3, 4, 6]), hyp(&[7])];
    let w = UtteranceWork::from_hypotheses("u", &hs).unwrap();
    assert_eq!((w.hypotheses, w.token_steps, w.arcs), (3, 7, 5));
    let disjoint = [hyp(&[3, 4]), hyp(&[5, 6])];
    let w = UtteranceWork::from_hypotheses("v", &disjoint).unwrap();
    assert_eq!(w.token_steps, w.arcs);
}

#[test]
fn decoder_bytes_counts_attention_weights() {
    let m = Model::init(ModelConfig::toy(), 1).unwrap();
    let counts = ModelConfig::toy().parameter_counts();
    assert_eq!(decoder_bytes(m.weights()), counts.las);
}

#[test]
fn report_json_shape() {
    let w = vec![UtteranceWork { id: "a".into(), hypotheses: 2, token_steps: 10, arcs: 6 }];
    let r = latency_report(&w, Accounting::Lattice, None, 33_000_000, 10_000_000_000).unwrap();
    let v = serde_json::to_value(&r).unwrap();
    for k in ["mode", "per_utt", "p90_ms", "budget_ms", "within_budget"] {
        assert!(v.get(k).is_some(), "{k}");
    }
    assert_eq!(v["mode"], "lattice");
    assert_eq!(r.per_utt[0].lattice_ms, oracle_ms(6, 33_000_000, 10_000_000_000));
}

fn tokens() -> impl Strategy<Value = Vec<Vec<u32>>> {
    prop::collection::btree_set(prop::collection::vec(3u32..7, 0..6), 1..8)
        .prop_map(|s| s.into_iter().collect())
}

proptest! {
    #[test]
    fn matches_float_oracle(steps in 0u64..10_000, bytes in 1u64..100_000_000, bw in 1_000_000u64..100_000_000_000) {
        let p = LatencyParams { arcs: Some(steps), decoder_bytes: bytes, bandwidth: bw, ..LatencyParams::default() };
        let exact = latency_ms_exact(&p).unwrap();
        let f = *exact.numer() as f64 / *exact.denom() as f64;
        prop_assert!((estimate_latency(&p).unwrap() - f).abs() <= 0.05 + 1e-9);
    }

    #[test]
    fn linear_in_each_factor(h in 1u64..20, n in 1u64..60, m in 1u64..50_000_000, c in 1u64..5) {
        let base = LatencyParams { hypotheses: h, tokens: n, decoder_bytes: m, ..LatencyParams::default() };
        let e = latency_ms_exact(&base).unwrap();
        let scaled = [
            LatencyParams { hypotheses: h * c, ..base },
            LatencyParams { tokens: n * c, ..base },
            LatencyParams { decoder_bytes: m * c, ..base },
        ];
        for p in scaled {
            prop_assert_eq!(latency_ms_exact(&p).unwrap(), e * u128::from(c));
        }
        let slower = LatencyParams { bandwidth: base.bandwidth * c, ..base };
        prop_assert_eq!(latency_ms_exact(&slower).unwrap() * u128::from(c), e);
    }

    #[test]
    fn lattice_never_exceeds_nbest(seqs in tokens()) {
        let hs: Vec<_> = seqs.iter().map(|t| hyp(t)).collect();
        let w = UtteranceWork::from_hypotheses("u", &hs).unwrap();
        prop_assert!(w.arcs <= w.token_steps);
        let r = latency_report(&[w.clone()], Accounting::Nbest, None, DEFAULT_DECODER_BYTES, DEFAULT_BANDWIDTH).unwrap();
        prop_assert!(r.per_utt[0].lattice_ms <= r.per_utt[0].nbest_ms);
        let shared = seqs.iter().enumerate().any(|(i, a)| seqs.iter().skip(i + 1).any(|b| !a.is_empty() && !b.is_empty() && a[0] == b[0]));
        prop_assert_eq!(w.arcs < w.token_steps, shared);
    }

    #[test]
    fn identical_utterances_give_their_value(arcs in 0u64..200, n in 1usize..30) {
        let w: Vec<_> = (0..n).map(|i| UtteranceWork { id: i.to_string(), hypotheses: 4, token_steps: arcs * 2, arcs }).collect();
        let r = latency_report(&w, Accounting::Lattice, None, DEFAULT_DECODER_BYTES, DEFAULT_BANDWIDTH).unwrap();
        let one = estimate_latency(&LatencyParams { arcs: Some(arcs), ..LatencyParams::default() }).unwrap();
        prop_assert_eq!(r.p90_ms, one);
        prop_assert_eq!(r.within_budget, one <= BUDGET_MS);
    }
}
