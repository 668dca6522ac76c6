use std::collections::HashMap;
use std::sync::Arc;

use super::biasing::{BiasState, BiasingTrie};
use super::hypothesis::{rank_order, Hypothesis};
use super::lattice::Lattice;
use crate::error::{Error, Result};
use crate::model::{Component, EncoderOutput, Joint, Model, PredState, Prediction, BLANK, FIRST_SYMBOL};
use crate::numerics::{log_add_exp, Graph, Tensor, Var};

#[derive(Clone, Debug)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Log-domain gap below the best candidate beyond which candidates drop.
    pub adaptive_threshold: Option<f64>,
    pub max_symbols_per_frame: usize,
    pub biasing: Option<Arc<BiasingTrie>>,
    pub bias_weight: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 8,
            adaptive_threshold: None,
            max_symbols_per_frame: 10,
            biasing: None,
            bias_weight: 1.0,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.max_symbols_per_frame == 0 {
            return Err(Error::Config("max_symbols_per_frame must be at least 1".into()));
        }
        if let Some(t) = self.adaptive_threshold {
            if !(t > 0.0) {
                return Err(Error::Config(format!("adaptive threshold must be positive, got {t}")));
            }
        }
        if !self.bias_weight.is_finite() {
            return Err(Error::Config("bias weight must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BeamOutput {
    pub hypotheses: Vec<Hypothesis>,
    /// Per-token emission log-probs of each hypothesis.
    pub emissions: Vec<Vec<f64>>,
    pub lattice: Lattice,
}

/// Runs the frontend, encoder and a beam search without adaptive pruning.
pub fn decode_fixed_beam(model: &Model, frames: &Tensor, cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    if cfg.adaptive_threshold.is_some() {
        return Err(Error::Config("fixed beam given an adaptive threshold".into()));
    }
    let enc = model.encode(frames)?;
    Ok(beam_search(model, &enc, cfg)?.hypotheses)
}

/// Beam search with threshold pruning; also returns the prefix lattice.
pub fn decode_adaptive_beam(model: &Model, frames: &Tensor, cfg: &BeamConfig) -> Result<(Vec<Hypothesis>, Lattice)> {
    if cfg.adaptive_threshold.is_none() {
        return Err(Error::Config("adaptive beam needs a threshold".into()));
    }
    let enc = model.encode(frames)?;
    let out = beam_search(model, &enc, cfg)?;
    Ok((out.hypotheses, out.lattice))
}

/// Joint scores against one utterance, with prediction states cached by prefix.
pub(crate) struct Scorer<'m> {
    model: &'m Model,
    g: Graph,
    pred: Prediction,
    joint: Joint,
    enc_proj: Var,
    frame_rows: HashMap<usize, Var>,
    cache: HashMap<Vec<u32>, (PredState, Var)>,
}

impl<'m> Scorer<'m> {
    pub(crate) fn new(model: &'m Model, enc: &EncoderOutput) -> Result<Self> {
        if enc.frames() == 0 {
            return Err(Error::EmptyInput("encoder output"));
        }
        let cfg = model.config();
        let mut g = Graph::inference();
        let p = model.bind(&mut g, &[Component::Prediction, Component::Joint])?;
        let pred = Prediction::bind(&g, &p, cfg)?;
        let joint = Joint::bind(&mut g, &p, cfg)?;
        let e = g.constant(enc.0.clone())?;
        let enc_proj = joint.project_encoder(&mut g, e)?;
        let start = pred.start(&mut g)?;
        let start_proj = joint.project_prediction(&mut g, start.output)?;
        let mut cache = HashMap::new();
        cache.insert(Vec::new(), (start, start_proj));
        Ok(Scorer {
            model,
            g,
            pred,
            joint,
            enc_proj,
            frame_rows: HashMap::new(),
            cache,
        })
    }

    fn pred_proj(&mut self, tokens: &[u32]) -> Result<Var> {
        if let Some((_, v)) = self.cache.get(tokens) {
            return Ok(*v);
        }
        let (last, prefix) = tokens.split_last().expect("empty prefix is cached");
        self.pred_proj(prefix)?;
        let prev = self.cache[prefix].0.clone();
        let next = self.pred.step(&mut self.g, &prev, *last)?;
        let proj = self.joint.project_prediction(&mut self.g, next.output)?;
        self.cache.insert(tokens.to_vec(), (next, proj));
        Ok(proj)
    }

    /// Log-distributions at frame `t` for each history.
    pub(crate) fn log_probs(&mut self, t: usize, histories: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        let row = match self.frame_rows.get(&t) {
            Some(&v) => v,
            None => {
                let v = self.g.row(self.enc_proj, t)?;
                self.frame_rows.insert(t, v);
                v
            }
        };
        let preds = histories.iter().map(|h| self.pred_proj(h)).collect::<Result<Vec<_>>>()?;
        let stacked = if preds.len() == 1 { preds[0] } else { self.g.concat_rows(&preds)? };
        let lp = self.joint.log_probs(&mut self.g, row, stacked)?;
        let value = self.g.value(lp);
        Ok((0..histories.len()).map(|i| value.row_slice(i).to_vec()).collect())
    }

    fn vocab(&self) -> u32 {
        self.model.config().vocab_size as u32
    }
}

#[derive(Clone, Debug)]
struct Entry {
    logp: f64,
    emit: Vec<f64>,
}

impl Entry {
    fn merge(slot: &mut Option<Entry>, e: Entry) {
        *slot = Some(match slot.take() {
            None => e,
            Some(old) => {
                let logp = log_add_exp(old.logp, e.logp);
                let emit = if e.logp > old.logp { e.emit } else { old.emit };
                Entry { logp, emit }
            }
        });
    }
}

/// All candidates sharing one token sequence. `ended` has emitted blank at
/// the current frame; `active` may still emit.
#[derive(Clone, Debug)]
struct Slot {
    tokens: Vec<u32>,
    bias: BiasState,
    units: i64,
    ended: Option<Entry>,
    active: Option<Entry>,
}

struct Pool<'c> {
    slots: Vec<Slot>,
    index: HashMap<Vec<u32>, usize>,
    cfg: &'c BeamConfig,
}

impl<'c> Pool<'c> {
    fn new(cfg: &'c BeamConfig) -> Self {
        Pool {
            slots: Vec::new(),
            index: HashMap::new(),
            cfg,
        }
    }

    fn total(&self, s: &Slot, e: &Entry) -> f64 {
        e.logp + self.cfg.bias_weight * s.units as f64
    }

    fn key(&self, s: &Slot) -> f64 {
        [&s.ended, &s.active]
            .into_iter()
            .flatten()
            .map(|e| self.total(s, e))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn slot_mut(&mut self, tokens: Vec<u32>, bias: BiasState, units: i64) -> &mut Slot {
        let i = match self.index.get(&tokens) {
            Some(&i) => i,
            None => {
                self.index.insert(tokens.clone(), self.slots.len());
                self.slots.push(Slot {
                    tokens,
                    bias,
                    units,
                    ended: None,
                    active: None,
                });
                self.slots.len() - 1
            }
        };
        &mut self.slots[i]
    }

    /// Keeps the best `beam_size` sequences, then applies the threshold.
    fn prune(&mut self) {
        let mut keyed: Vec<(f64, Slot)> = self.slots.drain(..).map(|s| (0.0, s)).collect();
        for k in keyed.iter_mut() {
            k.0 = self.key(&k.1);
        }
        keyed.sort_by(|a, b| rank_order(a.0, &a.1.tokens, b.0, &b.1.tokens));
        keyed.truncate(self.cfg.beam_size);
        if let (Some(thr), Some(best)) = (self.cfg.adaptive_threshold, keyed.first().map(|k| k.0)) {
            keyed.retain(|k| k.0 >= best - thr);
        }
        self.slots = keyed.into_iter().map(|k| k.1).collect();
        self.index = self.slots.iter().enumerate().map(|(i, s)| (s.tokens.clone(), i)).collect();
    }
}

/// Frame-synchronous transducer beam search over encoder output.
pub fn beam_search(model: &Model, enc: &EncoderOutput, cfg: &BeamConfig) -> Result<BeamOutput> {
    cfg.validate()?;
    let mut scorer = Scorer::new(model, enc)?;
    let vocab = scorer.vocab();
    let trie = cfg.biasing.as_deref();
    let mut beam: Vec<Slot> = vec![Slot {
        tokens: Vec::new(),
        bias: BiasState::default(),
        units: 0,
        ended: None,
        active: Some(Entry { logp: 0.0, emit: Vec::new() }),
    }];

    for t in 0..enc.frames() {
        let mut pool = Pool::new(cfg);
        for s in beam {
            pool.index.insert(s.tokens.clone(), pool.slots.len());
            pool.slots.push(s);
        }
        let mut level = 0;
        loop {
            let frontier: Vec<(Vec<u32>, BiasState, i64, Entry)> = pool
                .slots
                .iter_mut()
                .filter_map(|s| s.active.take().map(|e| (s.tokens.clone(), s.bias, s.units, e)))
                .collect();
            if frontier.is_empty() {
                break;
            }
            let histories: Vec<&[u32]> = frontier.iter().map(|f| f.0.as_slice()).collect();
            let dists = scorer.log_probs(t, &histories)?;
            for ((tokens, bias, units, entry), lp) in frontier.into_iter().zip(dists) {
                let ended = Entry {
                    logp: entry.logp + lp[BLANK as usize],
                    emit: entry.emit.clone(),
                };
                Entry::merge(&mut pool.slot_mut(tokens.clone(), bias, units).ended, ended);
                if level == cfg.max_symbols_per_frame {
                    continue;
                }
                for k in FIRST_SYMBOL..vocab {
                    let (nb, du) = match trie {
                        Some(tr) => tr.step(bias, k),
                        None => (bias, 0),
                    };
                    let mut next = tokens.clone();
                    next.push(k);
                    let mut emit = entry.emit.clone();
                    emit.push(lp[k as usize]);
                    let e = Entry {
                        logp: entry.logp + lp[k as usize],
                        emit,
                    };
                    Entry::merge(&mut pool.slot_mut(next, nb, units + du).active, e);
                }
            }
            pool.prune();
            level += 1;
        }
        beam = pool
            .slots
            .into_iter()
            .filter_map(|mut s| {
                s.active = s.ended.take();
                s.active.is_some().then_some(s)
            })
            .collect();
    }

    let mut ranked: Vec<(Hypothesis, Vec<f64>)> = beam
        .into_iter()
        .map(|s| {
            let e = s.active.expect("beam slots carry an entry");
            let total = e.logp + cfg.bias_weight * s.units as f64;
            let h = Hypothesis {
                tokens: s.tokens,
                log_prob_rnnt: e.logp,
                total_score: total,
                las_score: None,
                completed: true,
            };
            (h, e.emit)
        })
        .collect();
    ranked.sort_by(|a, b| rank_order(a.0.total_score, &a.0.tokens, b.0.total_score, &b.0.tokens));
    let (hypotheses, emissions): (Vec<_>, Vec<_>) = ranked.into_iter().unzip();
    let lattice = Lattice::from_hypotheses(&hypotheses, Some(&emissions))?;
    Ok(BeamOutput {
        hypotheses,
        emissions,
        lattice,
    })
}

/// Best-first rollout: at each step take the most likely symbol, preferring
/// blank on ties and then the smaller id.
pub fn greedy_decode(model: &Model, enc: &EncoderOutput, max_symbols_per_frame: usize) -> Result<Hypothesis> {
    if max_symbols_per_frame == 0 {
        return Err(Error::Config("max_symbols_per_frame must be at least 1".into()));
    }
    let mut scorer = Scorer::new(model, enc)?;
    let vocab = scorer.vocab();
    let mut tokens = Vec::new();
    let mut logp = 0.0;
    for t in 0..enc.frames() {
        for level in 0..=max_symbols_per_frame {
            let lp = scorer.log_probs(t, &[&tokens])?.remove(0);
            let mut best = BLANK;
            if level < max_symbols_per_frame {
                for k in FIRST_SYMBOL..vocab {
                    if lp[k as usize] > lp[best as usize] {
                        best = k;
                    }
                }
            }
            logp += lp[best as usize];
            if best == BLANK {
                break;
            }
            tokens.push(best);
        }
    }
    Ok(Hypothesis::new(tokens, logp))
}
