//! Differentially private M-estimation.
//!
//! Robust regression losses with bounded-sensitivity scores, privacy-
//! calibrated first- and second-order optimizers under Gaussian differential
//! privacy, and private sandwich-formula confidence intervals.

// Downstream code works with these crates' types directly (matrices, RNG
// streams), so they are re-exported to keep versions aligned.
pub use nalgebra;
pub use rand;
pub use rand_chacha;

pub mod data;
pub mod error;
pub mod inference;
pub mod losses;
pub mod optim;
pub mod privacy;
pub mod rng;

pub use data::Dataset;
pub use error::{Error, Result};
pub use privacy::PrivacyBudget;
pub use rng::SeedTree;
