//! Routing distributions and the quantities derived from them: sparse KL
//! projection, Shannon and collision entropies, the load-balancing loss and
//! empirical mutual information of the routing channel.
//!
//! Natural logarithms throughout, with `0 · log 0 = 0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sss::top_k_indices;

const SUM_TOL: f64 = 1e-9;
const MIN_PROB: f64 = 1e-300;

/// Probability vector over `E ≥ 2` experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDist {
    probs: Vec<f64>,
}

impl CategoricalDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution(format!("need E >= 2, got {}", probs.len())));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidDistribution("entries must be finite and >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!("sums to {total}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(e: usize) -> Result<Self> {
        Self::new(vec![1.0 / e as f64; e])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

pub fn shannon_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// `D_KL(q ‖ p)` evaluated term by term.
pub fn kl_divergence(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).filter(|(&qi, _)| qi > 0.0).map(|(&qi, &pi)| qi * (qi / pi).ln()).sum()
}

/// Result of projecting onto the `k`-sparse simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseProjection {
    pub q: CategoricalDist,
    /// Sorted ascending.
    pub support: Vec<usize>,
    /// `−log Σ_{j∈S} p_j`.
    pub kl: f64,
}

/// KL-optimal `k`-sparse approximation of `p`: keep the `k` largest entries
/// (lower index first among ties) and renormalize.
pub fn kl_sparse_project(p: &CategoricalDist, k: usize) -> Result<SparseProjection> {
    let e = p.len();
    if k == 0 || k > e {
        return Err(Error::InvalidK { k, n: e });
    }
    if let Some(i) = p.probs.iter().position(|&x| x < MIN_PROB) {
        return Err(Error::ZeroProbability(i));
    }
    let mut support = top_k_indices(&p.probs, k);
    support.sort_unstable();
    let mass: f64 = support.iter().map(|&i| p.probs[i]).sum();
    let mut q = vec![0.0; e];
    for &i in &support {
        q[i] = p.probs[i] / mass;
    }
    Ok(SparseProjection { q: CategoricalDist { probs: q }, support, kl: -mass.ln() })
}

/// Collision entropy `−log Σ p_i²`.
pub fn renyi2_entropy(p: &CategoricalDist) -> f64 {
    -p.probs.iter().map(|x| x * x).sum::<f64>().ln()
}

/// Dense routing probabilities for `T` tokens and the `k` experts each selected.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingBatch {
    dense: DMatrix<f64>,
    selections: Vec<Vec<usize>>,
    k: usize,
}

impl RoutingBatch {
    pub fn new(dense: DMatrix<f64>, selections: Vec<Vec<usize>>) -> Result<Self> {
        let (t, e) = dense.shape();
        if t == 0 || e == 0 || selections.len() != t {
            return Err(Error::InvalidDistribution(format!(
                "batch needs T >= 1 rows, E >= 1 and one selection per row, got {t}x{e} with {} selections",
                selections.len()
            )));
        }
        for (r, row) in dense.row_iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > SUM_TOL {
                return Err(Error::InvalidDistribution(format!("row {r} is not a distribution")));
            }
        }
        let k = selections[0].len();
        for sel in &selections {
            let mut s = sel.clone();
            s.sort_unstable();
            s.dedup();
            if sel.len() != k || k == 0 || s.len() != k || s.iter().any(|&i| i >= e) {
                return Err(Error::InvalidK { k: sel.len(), n: e });
            }
        }
        Ok(Self { dense, selections, k })
    }

    /// Selects the Top-k of each row, lower index first among ties.
    pub fn from_dense_topk(dense: DMatrix<f64>, k: usize) -> Result<Self> {
        let selections = dense
            .row_iter()
            .map(|row| {
                let v: Vec<f64> = row.iter().copied().collect();
                top_k_indices(&v, k)
            })
            .collect();
        Self::new(dense, selections)
    }

    pub fn tokens(&self) -> usize {
        self.dense.nrows()
    }

    pub fn experts(&self) -> usize {
        self.dense.ncols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dense(&self) -> &DMatrix<f64> {
        &self.dense
    }

    pub fn selections(&self) -> &[Vec<usize>] {
        &self.selections
    }

    /// `f_i`: fraction of tokens whose selection contains `i`; sums to `k`.
    pub fn dispatch_fractions(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.experts()];
        for sel in &self.selections {
            for &i in sel {
                f[i] += 1.0;
            }
        }
        let t = self.tokens() as f64;
        f.iter_mut().for_each(|x| *x /= t);
        f
    }

    /// `P_i`: mean dense probability of expert `i`.
    pub fn mean_probs(&self) -> Vec<f64> {
        self.dense.row_mean().iter().copied().collect()
    }

    /// Per-token routing renormalized over its selection.
    pub fn sparse_rows(&self) -> Vec<Vec<f64>> {
        self.selections
            .iter()
            .enumerate()
            .map(|(t, sel)| {
                let mass: f64 = sel.iter().map(|&i| self.dense[(t, i)]).sum();
                let mut row = vec![0.0; self.experts()];
                for &i in sel {
                    row[i] = if mass > 0.0 { self.dense[(t, i)] / mass } else { 1.0 / sel.len() as f64 };
                }
                row
            })
            .collect()
    }
}

/// Unscaled load-balancing loss `E · Σ f_i P_i`.
pub fn aux_loss(batch: &RoutingBatch) -> f64 {
    let f = batch.dispatch_fractions();
    let p = batch.mean_probs();
    batch.experts() as f64 * f.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>()
}

/// `E · Σ P_i²` against `E · exp(−H₂(P̄))`, with `f` replaced by `P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

pub fn collision_identity_check(batch: &RoutingBatch) -> Result<CollisionIdentity> {
    let e = batch.experts() as f64;
    let marginal = CategoricalDist::from_weights(&batch.mean_probs())?;
    let lhs = e * marginal.probs.iter().map(|x| x * x).sum::<f64>();
    let rhs = e * (-renyi2_entropy(&marginal)).exp();
    Ok(CollisionIdentity { lhs, rhs, gap: (lhs - rhs).abs() })
}

/// Mean Shannon entropy of the per-token sparse routing; at most `log k`.
pub fn topk_conditional_entropy(batch: &RoutingBatch) -> f64 {
    let rows = batch.sparse_rows();
    rows.iter().map(|r| shannon_entropy(r)).sum::<f64>() / rows.len() as f64
}

/// `log E − log k`.
pub fn mi_lower_bound(e: usize, k: usize) -> Result<f64> {
    if k == 0 || k >= e {
        return Err(Error::InvalidK { k, n: e });
    }
    Ok((e as f64).ln() - (k as f64).ln())
}

/// `H(Z)`, `H(Z|X)` and their difference for the sparse routing channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMi {
    pub h_z: f64,
    pub h_z_given_x: f64,
    pub mi: f64,
}

pub fn empirical_mi(batch: &RoutingBatch) -> EmpiricalMi {
    let rows = batch.sparse_rows();
    let t = rows.len() as f64;
    let mut marginal = vec![0.0; batch.experts()];
    for r in &rows {
        for (m, x) in marginal.iter_mut().zip(r) {
            *m += x / t;
        }
    }
    let h_z = shannon_entropy(&marginal);
    let h_z_given_x = topk_conditional_entropy(batch);
    EmpiricalMi { h_z, h_z_given_x, mi: h_z - h_z_given_x }
}
