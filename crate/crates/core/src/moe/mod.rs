//! Sparse Mixture-of-Experts classifier with hand-derived gradients.
//!
//! Router `h = W_g x`, `p = softmax(h)`, Top-k on `h` (lower index first among
//! ties), gates `w_i = p_i / Σ_{j∈T} p_j`. Expert `i` maps `x` to class-logit
//! space: `y_i = W_out⁽ⁱ⁾ · GELU(W_in⁽ⁱ⁾ x)`; the combined logits `Σ w_i y_i`
//! go through softmax cross-entropy. No biases anywhere.
//!
//! Training minimizes `task + α·E·Σ f_i P_i + λ·R` where `R` is one of the
//! decorrelation penalties in [`loss`], computed on the active experts only.

mod backward;
mod config;
mod forward;
pub mod gradcheck;
pub mod loss;
mod metrics;
mod optim;
mod params;
mod train;

pub use backward::backward;
pub use config::{MoEConfig, RegKind};
pub use forward::{expert_output, forward, gelu, gelu_grad, route, softmax, ForwardTrace, SampleTrace};
pub use loss::{ambiguity_decomposition, ncl_loss, ortho_loss, softdpp_loss, total_loss, Ambiguity, LossComponents};
pub use metrics::{
    effective_rank, effective_rank_of_matrix, expert_output_matrix, routing_stats, row_coherence,
    specialization_heatmap, RoutingStats,
};
pub use optim::adamw_step;
pub use params::{MoEParams, Weights};
pub use train::{cross_validate, stratified_folds, train_fold, CrossValidation, DataSplit, EpochRecord, TrainReport};
