//! Numerical laboratory for sparse Mixture-of-Experts routing geometry.
//!
//! - [`dictionary`]: unit-norm dictionaries, coherence, least squares on a support
//! - [`dictgen`]: seeded dictionaries, planted targets, synthetic classification data
//! - [`sss`]: exhaustive, one-shot Top-k and OMP subset selection; coherence sweeps
//! - [`diversity`]: log-determinant subset objectives and greedy volume selection
//! - [`infotheory`]: sparse KL projection, entropies, load-balancing loss
//! - [`moe`]: a small sparse MoE classifier with hand-written gradients
//! - [`audit`]: the property checks behind `moegeo verify`
//! - [`export`]: byte-stable CSV writers

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod dictgen;
pub mod dictionary;
pub mod diversity;
pub mod error;
pub mod export;
pub mod infotheory;
pub mod linalg;
pub mod moe;
pub mod rng;
pub mod sss;

pub use error::{Error, Result};
pub use rng::RngSeed;
