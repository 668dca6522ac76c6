//! Streaming transducer search: fixed and adaptive beams, prefix lattices
//! and shallow-fusion phrase biasing.

mod beam;
mod biasing;
mod hypothesis;
mod lattice;

pub use beam::{beam_search, decode_adaptive_beam, decode_fixed_beam, greedy_decode, BeamConfig, BeamOutput};
pub use biasing::{bias_adjust, BiasState, BiasingTrie};
pub use hypothesis::{rank_order, sort_hypotheses, Hypothesis};
pub use lattice::{count_arcs, nbest_from_lattice, Lattice, LatticeArc, LatticeFinal};

