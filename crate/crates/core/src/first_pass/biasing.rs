use std::collections::BTreeMap;

use super::hypothesis::Hypothesis;

#[derive(Clone, Debug, Default)]
struct TrieNode {
    children: BTreeMap<u32, usize>,
    terminal: bool,
}

/// Prefix tree over biasing phrases (as token sequences).
///
/// Each token that stays on a phrase path earns one unit. Completing a
/// phrase banks its units; stepping off the tree refunds the unbanked ones.
#[derive(Clone, Debug)]
pub struct BiasingTrie {
    nodes: Vec<TrieNode>,
    phrases: usize,
}

/// Position of a history in the tree.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct BiasState {
    node: usize,
    depth: u32,
    banked: u32,
}

impl Default for BiasingTrie {
    fn default() -> Self {
        BiasingTrie {
            nodes: vec![TrieNode::default()],
            phrases: 0,
        }
    }
}

impl BiasingTrie {
    pub fn new<I, P>(phrases: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[u32]>,
    {
        let mut trie = BiasingTrie::default();
        for p in phrases {
            trie.insert(p.as_ref());
        }
        trie
    }

    pub fn insert(&mut self, phrase: &[u32]) {
        if phrase.is_empty() {
            return;
        }
        let mut node = 0;
        for &t in phrase {
            node = match self.nodes[node].children.get(&t) {
                Some(&n) => n,
                None => {
                    self.nodes.push(TrieNode::default());
                    let n = self.nodes.len() - 1;
                    self.nodes[node].children.insert(t, n);
                    n
                }
            };
        }
        if !self.nodes[node].terminal {
            self.phrases += 1;
        }
        self.nodes[node].terminal = true;
    }

    pub fn is_empty(&self) -> bool {
        self.phrases == 0
    }

    pub fn phrase_count(&self) -> usize {
        self.phrases
    }

    /// Advances by one token; returns the new state and the change in units.
    pub fn step(&self, s: BiasState, token: u32) -> (BiasState, i64) {
        if let Some(&n) = self.nodes[s.node].children.get(&token) {
            return (self.enter(n, s.depth + 1, s.banked), 1);
        }
        let refund = -i64::from(s.depth - s.banked);
        match self.nodes[0].children.get(&token) {
            Some(&n) => (self.enter(n, 1, 0), refund + 1),
            None => (BiasState::default(), refund),
        }
    }

    fn enter(&self, node: usize, depth: u32, banked: u32) -> BiasState {
        let banked = if self.nodes[node].terminal { depth } else { banked };
        BiasState { node, depth, banked }
    }

    /// State and cumulative units after a whole history.
    pub fn replay(&self, tokens: &[u32]) -> (BiasState, i64) {
        tokens.iter().fold((BiasState::default(), 0), |(s, u), &t| {
            let (s, d) = self.step(s, t);
            (s, u + d)
        })
    }
}

/// Score change from appending `next` to `h` under bonus weight `lambda`.
pub fn bias_adjust(h: &Hypothesis, next: u32, trie: &BiasingTrie, lambda: f64) -> f64 {
    let (s, _) = trie.replay(&h.tokens);
    let (_, units) = trie.step(s, next);
    lambda * units as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(trie: &BiasingTrie, tokens: &[u32], lambda: f64) -> f64 {
        let mut h = Hypothesis::new(vec![], 0.0);
        let mut sum = 0.0;
        for &t in tokens {
            sum += bias_adjust(&h, t, trie, lambda);
            h.tokens.push(t);
        }
        sum
    }

    #[test]
    fn full_phrase_earns_length_times_weight() {
        let trie = BiasingTrie::new([[5u32, 6, 7]]);
        assert_eq!(total(&trie, &[5, 6, 7], 1.5), 4.5);
        assert_eq!(total(&trie, &[3, 5, 6, 7, 3], 1.5), 4.5);
    }

    #[test]
    fn divergence_nets_to_zero() {
        let trie = BiasingTrie::new([vec![5u32, 6, 7]]);
        assert_eq!(total(&trie, &[5, 6, 9], 2.0), 0.0);
        assert_eq!(total(&trie, &[5, 6, 5, 6, 7], 1.0), 3.0);
    }

    #[test]
    fn empty_trie_is_neutral() {
        let trie = BiasingTrie::new(Vec::<Vec<u32>>::new());
        assert!(trie.is_empty());
        assert_eq!(total(&trie, &[3, 4, 5], 1.0), 0.0);
    }

    #[test]
    fn completed_prefix_phrase_stays_banked() {
        let trie = BiasingTrie::new([vec![5u32, 6], vec![5, 6, 7, 8]]);
        assert_eq!(total(&trie, &[5, 6, 7, 3], 1.0), 2.0);
        assert_eq!(total(&trie, &[5, 6, 7, 8], 1.0), 4.0);
    }
}
