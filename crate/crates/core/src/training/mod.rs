//! Transducer, attention and combined losses, minimum word error rate
//! training, and the three-stage recipe driven by plain SGD.

mod losses;
mod trainer;

pub use losses::*;
pub use trainer::*;
