//! Objective terms on a [`ForwardTrace`].
//!
//! The three decorrelation penalties act on the active experts of each sample
//! and are averaged over the batch:
//!
//! - `ortho`: `Σ_{i≠j} cos²(y_i, y_j)` over ordered pairs
//! - `ncl`: `Σ_{i≠j} (π_i − π̄)ᵀ(π_j − π̄)` with `π_i = softmax(y_i)`
//! - `softdpp`: `−log det(V̂ᵀV̂ + εI)` with `V̂` the normalized outputs

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::{MoEConfig, RegKind};
use super::forward::{log_sum_exp, softmax, ForwardTrace};
use crate::error::{Error, Result};
use crate::infotheory::aux_loss;
use crate::linalg::Ldl;

/// Outputs shorter than this are left out of cosine terms.
pub const NORM_GUARD: f64 = 1e-8;

/// Unit vectors of the outputs, `None` for guarded (near-zero) ones.
/// Unit vector and norm, or `None` below the norm guard.
pub(crate) type Unit = Option<(DVector<f64>, f64)>;

pub(crate) fn normalized(outputs: &[DVector<f64>]) -> Vec<Unit> {
    outputs
        .iter()
        .map(|y| {
            let n = y.norm();
            (n >= NORM_GUARD).then(|| (y / n, n))
        })
        .collect()
}

pub(crate) fn ortho_sample(outputs: &[DVector<f64>]) -> f64 {
    let units = normalized(outputs);
    let mut acc = 0.0;
    for (i, a) in units.iter().enumerate() {
        for (j, b) in units.iter().enumerate() {
            if i == j {
                continue;
            }
            if let (Some((va, _)), Some((vb, _))) = (a, b) {
                let c = va.dot(vb);
                acc += c * c;
            }
        }
    }
    acc
}

/// Mean over samples of the summed squared cosine similarity of active
/// expert outputs.
pub fn ortho_loss(trace: &ForwardTrace) -> f64 {
    let total: f64 = trace.samples.iter().map(|s| ortho_sample(&s.expert_outputs)).sum();
    total / trace.len() as f64
}

/// `V̂ᵀV̂ + εI` for one sample; guarded outputs contribute zero columns.
pub(crate) fn dpp_kernel(outputs: &[DVector<f64>], epsilon: f64) -> (DMatrix<f64>, Vec<Unit>) {
    let units = normalized(outputs);
    let k = units.len();
    let mut m = DMatrix::from_element(k, k, 0.0);
    for i in 0..k {
        for j in 0..k {
            if let (Some((a, _)), Some((b, _))) = (&units[i], &units[j]) {
                m[(i, j)] = a.dot(b);
            }
        }
        m[(i, i)] += epsilon;
    }
    (m, units)
}

pub(crate) fn dpp_sample(outputs: &[DVector<f64>], epsilon: f64) -> Result<f64> {
    let (m, _) = dpp_kernel(outputs, epsilon);
    let mut logdet = 0.0;
    for &p in Ldl::factor(&m).pivots() {
        if !p.is_finite() || p < -1e-9 {
            return Err(Error::NotPsd(format!("soft-DPP kernel pivot {p}")));
        }
        logdet += p.max(f64::MIN_POSITIVE).ln();
    }
    Ok(-logdet)
}

/// `−(1/B) Σ log det(L̃)` over the batch.
pub fn softdpp_loss(trace: &ForwardTrace, epsilon: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in &trace.samples {
        total += dpp_sample(&s.expert_outputs, epsilon)?;
    }
    Ok(total / trace.len() as f64)
}

pub(crate) fn ncl_sample(outputs: &[DVector<f64>]) -> f64 {
    let probs: Vec<DVector<f64>> = outputs.iter().map(softmax).collect();
    let k = probs.len() as f64;
    let mean = probs.iter().fold(DVector::zeros(probs[0].len()), |acc, p| acc + p) / k;
    let resid: Vec<DVector<f64>> = probs.iter().map(|p| p - &mean).collect();
    let mut acc = 0.0;
    for (i, a) in resid.iter().enumerate() {
        for (j, b) in resid.iter().enumerate() {
            if i != j {
                acc += a.dot(b);
            }
        }
    }
    acc
}

/// Mean over samples of the ordered-pair covariance of expert probability
/// residuals.
pub fn ncl_loss(trace: &ForwardTrace) -> f64 {
    let total: f64 = trace.samples.iter().map(|s| ncl_sample(&s.expert_outputs)).sum();
    total / trace.len() as f64
}

/// Weighted objective terms; `total = task + aux + reg`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub task: f64,
    /// `α · E · Σ f_i P_i`.
    pub aux: f64,
    /// `λ · R`.
    pub reg: f64,
    pub total: f64,
}

pub(crate) fn regularizer(trace: &ForwardTrace, cfg: &MoEConfig) -> Result<f64> {
    Ok(match cfg.reg_kind {
        RegKind::None => 0.0,
        RegKind::Ortho => ortho_loss(trace),
        RegKind::Ncl => ncl_loss(trace),
        RegKind::Dpp => softdpp_loss(trace, cfg.dpp_epsilon)?,
    })
}

/// Mean cross-entropy plus the weighted load-balancing and decorrelation terms.
pub fn total_loss(trace: &ForwardTrace, labels: &[usize], cfg: &MoEConfig) -> Result<LossComponents> {
    if labels.len() != trace.len() || trace.is_empty() {
        return Err(Error::InvalidShape(format!("{} labels for {} samples", labels.len(), trace.len())));
    }
    let task = trace.samples.iter().zip(labels).map(|(s, &y)| log_sum_exp(&s.logits) - s.logits[y]).sum::<f64>()
        / trace.len() as f64;
    let aux = cfg.aux_weight * aux_loss(&trace.routing_batch()?);
    let reg = if cfg.reg_kind == RegKind::None { 0.0 } else { cfg.reg_weight * regularizer(trace, cfg)? };
    let out = LossComponents { task, aux, reg, total: task + aux + reg };
    if !out.total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(out)
}

/// Ensemble error split into mean individual error minus ambiguity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ambiguity {
    pub ensemble_err: f64,
    pub mean_individual_err: f64,
    pub ambiguity: f64,
    pub gap: f64,
}

/// Squared-error decomposition around the unweighted ensemble mean.
pub fn ambiguity_decomposition(outputs: &[DVector<f64>], target: &DVector<f64>) -> Result<Ambiguity> {
    if outputs.is_empty() || outputs.iter().any(|o| o.len() != target.len()) {
        return Err(Error::InvalidShape("need k >= 1 outputs matching the target length".into()));
    }
    let k = outputs.len() as f64;
    let mean = outputs.iter().fold(DVector::zeros(target.len()), |acc, o| acc + o) / k;
    let ensemble_err = (&mean - target).norm_squared();
    let mean_individual_err = outputs.iter().map(|o| (o - target).norm_squared()).sum::<f64>() / k;
    let ambiguity = outputs.iter().map(|o| (o - &mean).norm_squared()).sum::<f64>() / k;
    Ok(Ambiguity {
        ensemble_err,
        mean_individual_err,
        ambiguity,
        gap: (ensemble_err - (mean_individual_err - ambiguity)).abs(),
    })
}
