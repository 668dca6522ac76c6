//! Two-pass end-to-end speech decoding at desk scale.
//!
//! A shared causal LSTM encoder feeds a streaming transducer first pass and
//! an attention decoder second pass. The second pass either runs its own beam
//! search or rescores first-pass N-best lists and prefix lattices. Training
//! covers the transducer loss, attention cross-entropy, their combination and
//! minimum-word-error-rate fine-tuning; an analytic latency model prices the
//! second pass.

pub mod data;
pub mod error;
pub mod eval;
pub mod first_pass;
pub mod latency;
pub mod model;
pub mod numerics;
pub mod second_pass;
pub mod training;

pub use error::{Error, Result};
