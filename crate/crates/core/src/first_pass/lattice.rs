use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::hypothesis::{rank_order, Hypothesis};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeArc {
    pub from: usize,
    pub to: usize,
    pub token: u32,
    /// Largest emission log-probability seen for this token among the
    /// hypotheses sharing the arc; informational only.
    pub logp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeFinal {
    pub node: usize,
    pub score: f64,
    pub logp_rnnt: f64,
}

/// Prefix tree of first-pass hypotheses. Node 0 is the empty prefix; every
/// other node has exactly one incoming arc, and arcs always point to a
/// larger node id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lattice {
    parent: Vec<Option<usize>>,
    arcs: Vec<LatticeArc>,
    children: Vec<BTreeMap<u32, usize>>,
    finals: Vec<LatticeFinal>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    nodes: usize,
    finals: Vec<LatticeFinal>,
}

impl Lattice {
    /// Builds the tree from hypotheses. `emissions[i]`, when given, holds the
    /// per-token emission log-probs of `hyps[i]`.
    pub fn from_hypotheses(hyps: &[Hypothesis], emissions: Option<&[Vec<f64>]>) -> Result<Self> {
        let mut l = Lattice {
            parent: vec![None],
            arcs: Vec::new(),
            children: vec![BTreeMap::new()],
            finals: Vec::new(),
        };
        for (i, h) in hyps.iter().enumerate() {
            let em = emissions.map(|e| &e[i]);
            let mut node = 0;
            for (depth, &tok) in h.tokens.iter().enumerate() {
                let lp = em.and_then(|e| e.get(depth).copied()).unwrap_or(f64::NEG_INFINITY);
                node = match l.children[node].get(&tok) {
                    Some(&n) => {
                        let arc = &mut l.arcs[n - 1];
                        arc.logp = arc.logp.max(lp);
                        n
                    }
                    None => l.add_node(node, tok, lp),
                };
            }
            if l.finals.iter().any(|f| f.node == node) {
                return Err(Error::InvalidArgument(format!("duplicate hypothesis {:?}", h.tokens)));
            }
            l.finals.push(LatticeFinal {
                node,
                score: h.total_score,
                logp_rnnt: h.log_prob_rnnt,
            });
        }
        Ok(l)
    }

    fn add_node(&mut self, from: usize, token: u32, logp: f64) -> usize {
        let n = self.parent.len();
        self.parent.push(Some(from));
        self.children.push(BTreeMap::new());
        self.children[from].insert(token, n);
        self.arcs.push(LatticeArc { from, to: n, token, logp });
        n
    }

    pub fn num_nodes(&self) -> usize {
        self.parent.len()
    }

    pub fn arcs(&self) -> &[LatticeArc] {
        &self.arcs
    }

    pub fn finals(&self) -> &[LatticeFinal] {
        &self.finals
    }

    pub fn is_empty(&self) -> bool {
        self.finals.is_empty()
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    /// Arc entering `node` (none for the root).
    pub fn incoming(&self, node: usize) -> Option<&LatticeArc> {
        node.checked_sub(1).map(|i| &self.arcs[i])
    }

    pub fn child(&self, node: usize, token: u32) -> Option<usize> {
        self.children[node].get(&token).copied()
    }

    pub fn tokens_to(&self, mut node: usize) -> Vec<u32> {
        let mut out = Vec::new();
        while let Some(arc) = self.incoming(node) {
            out.push(arc.token);
            node = arc.from;
        }
        out.reverse();
        out
    }

    fn ranked_finals(&self) -> Vec<(LatticeFinal, Vec<u32>)> {
        let mut v: Vec<_> = self.finals.iter().map(|f| (*f, self.tokens_to(f.node))).collect();
        v.sort_by(|a, b| rank_order(a.0.score, &a.1, b.0.score, &b.1));
        v
    }

    /// Sub-tree spanned by the `k` best paths.
    pub fn restrict_top_k(&self, k: usize) -> Result<Lattice> {
        let hyps = nbest_from_lattice(self, k)?;
        let emissions: Vec<Vec<f64>> = hyps
            .iter()
            .map(|h| {
                let mut node = 0;
                h.tokens
                    .iter()
                    .map(|&t| {
                        node = self.child(node, t).expect("path exists");
                        self.arcs[node - 1].logp
                    })
                    .collect()
            })
            .collect();
        Lattice::from_hypotheses(&hyps, Some(&emissions))
    }

    pub fn write_jsonl(&self, out: &mut impl Write) -> Result<()> {
        let header = Header {
            nodes: self.num_nodes(),
            finals: self.finals.clone(),
        };
        serde_json::to_writer(&mut *out, &header)?;
        writeln!(out)?;
        for a in &self.arcs {
            serde_json::to_writer(&mut *out, &ArcOut::from(a))?;
            writeln!(out)?;
        }
        Ok(())
    }

    /// Reads one lattice written by [`Lattice::write_jsonl`]; `first_line`
    /// numbers the header line in error messages.
    pub fn read_jsonl(lines: &[String], first_line: usize) -> Result<Lattice> {
        let parse_err = |i: usize, e: serde_json::Error| Error::Parse {
            line: first_line + i,
            message: e.to_string(),
        };
        let header: Header = serde_json::from_str(lines.first().ok_or(Error::EmptyInput("lattice"))?)
            .map_err(|e| parse_err(0, e))?;
        let mut l = Lattice {
            parent: vec![None],
            arcs: Vec::new(),
            children: vec![BTreeMap::new()],
            finals: Vec::new(),
        };
        for (i, line) in lines.iter().enumerate().skip(1) {
            let a: ArcOut = serde_json::from_str(line).map_err(|e| parse_err(i, e))?;
            let bad = |m: &str| Error::Parse {
                line: first_line + i,
                message: m.to_string(),
            };
            if a.to != l.num_nodes() || a.from >= a.to {
                return Err(bad("arcs must introduce nodes in increasing order"));
            }
            if l.children[a.from].contains_key(&a.token) {
                return Err(bad("two arcs with the same token leave one node"));
            }
            l.add_node(a.from, a.token, a.logp.unwrap_or(f64::NEG_INFINITY));
        }
        if l.num_nodes() != header.nodes || header.finals.iter().any(|f| f.node >= header.nodes) {
            return Err(Error::Parse {
                line: first_line,
                message: "node count disagrees with arcs".into(),
            });
        }
        l.finals = header.finals;
        Ok(l)
    }
}

#[derive(Serialize, Deserialize)]
struct ArcOut {
    from: usize,
    to: usize,
    token: u32,
    logp: Option<f64>,
}

impl From<&LatticeArc> for ArcOut {
    fn from(a: &LatticeArc) -> Self {
        ArcOut {
            from: a.from,
            to: a.to,
            token: a.token,
            logp: a.logp.is_finite().then_some(a.logp),
        }
    }
}

/// Best `k` root-to-final paths, ranked like the beam search output.
pub fn nbest_from_lattice(l: &Lattice, k: usize) -> Result<Vec<Hypothesis>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if l.is_empty() {
        return Err(Error::EmptyInput("lattice"));
    }
    Ok(l.ranked_finals()
        .into_iter()
        .take(k)
        .map(|(f, tokens)| Hypothesis {
            tokens,
            log_prob_rnnt: f.logp_rnnt,
            total_score: f.score,
            las_score: None,
            completed: true,
        })
        .collect())
}

/// Number of arcs in the tree.
pub fn count_arcs(l: &Lattice) -> usize {
    l.arcs.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyp(tokens: &[u32], score: f64) -> Hypothesis {
        Hypothesis::new(tokens.to_vec(), score)
    }

    #[test]
    fn shared_prefixes_merge() {
        let l = Lattice::from_hypotheses(&[hyp(&[3, 4, 5], -1.0), hyp(&[3, 4, 6, 7], -2.0), hyp(&[], -3.0)], None).unwrap();
        assert_eq!(count_arcs(&l), 3 + 4 - 2);
        assert_eq!(l.num_nodes(), 6);
        assert!(l.arcs().iter().all(|a| a.from < a.to));
        let n = nbest_from_lattice(&l, 10).unwrap();
        assert_eq!(n.len(), 3);
        assert_eq!(n[1].tokens, vec![3, 4, 6, 7]);
        assert_eq!(nbest_from_lattice(&l, 1).unwrap()[0].tokens, vec![3, 4, 5]);
    }

    #[test]
    fn single_path_and_empty() {
        let l = Lattice::from_hypotheses(&[hyp(&[9, 8, 7], -0.5)], None).unwrap();
        assert_eq!(count_arcs(&l), 3);
        assert_eq!(nbest_from_lattice(&l, 3).unwrap(), vec![hyp(&[9, 8, 7], -0.5)]);
        assert_eq!(count_arcs(&Lattice::default()), 0);
        assert!(nbest_from_lattice(&Lattice::default(), 1).is_err());
        assert!(nbest_from_lattice(&l, 0).is_err());
    }

    #[test]
    fn jsonl_round_trip_and_restriction() {
        let hyps = [hyp(&[3, 4], -1.0), hyp(&[3, 5], -1.5), hyp(&[6], -4.0)];
        let em = vec![vec![-0.1, -0.2], vec![-0.3, -0.4], vec![-0.5]];
        let l = Lattice::from_hypotheses(&hyps, Some(&em)).unwrap();
        assert_eq!(l.arcs()[0].logp, -0.1);
        let mut buf = Vec::new();
        l.write_jsonl(&mut buf).unwrap();
        let lines: Vec<String> = String::from_utf8(buf).unwrap().lines().map(String::from).collect();
        assert_eq!(Lattice::read_jsonl(&lines, 1).unwrap(), l);
        let sub = l.restrict_top_k(2).unwrap();
        assert_eq!(count_arcs(&sub), 3);
        assert_eq!(sub.arcs()[0].logp, -0.1);
        assert_eq!(sub.arcs()[2].logp, -0.4);
    }

    #[test]
    fn malformed_dump_reports_line() {
        let lines = vec![r#"{"nodes":2,"finals":[{"node":1,"score":0.0,"logp_rnnt":0.0}]}"#.to_string(), "{oops".to_string()];
        assert!(matches!(Lattice::read_jsonl(&lines, 5), Err(Error::Parse { line: 6, .. })));
    }
}
