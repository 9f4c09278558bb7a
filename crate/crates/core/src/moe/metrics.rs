//! Diagnostics of the expert feature space and the routing channel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::MoEConfig;
use super::forward::{expert_output, route, ForwardTrace};
use super::loss::NORM_GUARD;
use super::params::Weights;
use crate::error::{Error, Result};
use crate::infotheory::{aux_loss, empirical_mi};

/// `E × (P·C)` matrix whose row `i` is expert `i`'s output on every probe
/// sample, ignoring routing.
pub fn expert_output_matrix(w: &Weights, probe: &DMatrix<f64>) -> DMatrix<f64> {
    let e = w.w_in.len();
    let c = w.w_out.first().map_or(0, |m| m.nrows());
    let mut m = DMatrix::zeros(e, probe.nrows() * c);
    for (p, row) in probe.row_iter().enumerate() {
        let x: DVector<f64> = row.transpose();
        for i in 0..e {
            let y = expert_output(w, i, &x);
            for (j, v) in y.iter().enumerate() {
                m[(i, p * c + j)] = *v;
            }
        }
    }
    m
}

/// `exp` of the entropy of the trace-normalized singular values.
pub fn effective_rank_of_matrix(m: &DMatrix<f64>) -> Result<f64> {
    let sv = m.singular_values();
    let total: f64 = sv.iter().sum();
    if !total.is_finite() {
        return Err(Error::NonFinite("singular values".into()));
    }
    if total <= 0.0 {
        return Err(Error::DegenerateProbe);
    }
    let h: f64 = sv.iter().map(|s| s / total).filter(|&s| s > 0.0).map(|s| -s * s.ln()).sum();
    Ok(h.exp())
}

pub fn effective_rank(w: &Weights, probe: &DMatrix<f64>) -> Result<f64> {
    effective_rank_of_matrix(&expert_output_matrix(w, probe))
}

/// Largest absolute cosine between distinct rows; rows shorter than the
/// norm guard are skipped.
pub fn row_coherence(m: &DMatrix<f64>) -> f64 {
    let rows: Vec<DVector<f64>> = m
        .row_iter()
        .filter_map(|r| {
            let v: DVector<f64> = r.transpose();
            let n = v.norm();
            (n >= NORM_GUARD).then(|| v / n)
        })
        .collect();
    let mut mu = 0.0_f64;
    for j in 0..rows.len() {
        for i in 0..j {
            mu = mu.max(rows[i].dot(&rows[j]).abs());
        }
    }
    mu.min(1.0)
}

/// Entry `(e, c)`: fraction of class-`c` samples whose selection contains `e`.
pub fn specialization_heatmap(
    w: &Weights,
    cfg: &MoEConfig,
    x: &DMatrix<f64>,
    labels: &[usize],
) -> Result<DMatrix<f64>> {
    if labels.len() != x.nrows() {
        return Err(Error::InvalidShape(format!("{} labels for {} rows", labels.len(), x.nrows())));
    }
    let mut counts = DMatrix::zeros(cfg.experts, cfg.classes);
    let mut per_class = vec![0usize; cfg.classes];
    for (row, &y) in x.row_iter().zip(labels) {
        if y >= cfg.classes {
            return Err(Error::InvalidShape(format!("label {y} outside {} classes", cfg.classes)));
        }
        per_class[y] += 1;
        let (_, _, selected) = route(w, cfg.active, &row.transpose());
        for e in selected {
            counts[(e, y)] += 1.0;
        }
    }
    for (c, &n) in per_class.iter().enumerate() {
        if n > 0 {
            counts.column_mut(c).scale_mut(1.0 / n as f64);
        }
    }
    Ok(counts)
}

/// Routing-channel summary for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingStats {
    /// `H(Z)` of the mean sparse routing.
    pub marg_entropy: f64,
    /// Mean entropy of the renormalized gates.
    pub cond_entropy: f64,
    /// `Σ P_i²` of the mean dense probabilities.
    pub collision: f64,
    /// Unscaled `E · Σ f_i P_i`.
    pub aux: f64,
}

pub fn routing_stats(trace: &ForwardTrace) -> Result<RoutingStats> {
    let batch = trace.routing_batch()?;
    let mi = empirical_mi(&batch);
    Ok(RoutingStats {
        marg_entropy: mi.h_z,
        cond_entropy: mi.h_z_given_x,
        collision: batch.mean_probs().iter().map(|p| p * p).sum(),
        aux: aux_loss(&batch),
    })
}
