//! Log-determinant subset objectives on a unit-diagonal kernel.
//!
//! `F(S) = log det(L_S + εI)` and its shifted form
//! `F̃(S) = F(S) − |S|·log ε`. Every Schur complement of `L + εI` is at least
//! `ε`, so marginal gains of `F̃` are nonnegative; `F̃(∅) = 0` and `F̃` is
//! monotone submodular, which is what the greedy `(1 − 1/e)` guarantee needs.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{check_support, normalize_columns, UnitDictionary};
use crate::error::{Error, Result};
use crate::linalg::Ldl;
use crate::rng::RngSeed;
use crate::sss::{binomial, next_combination, ENUMERATION_GUARD};

pub const DEFAULT_EPSILON: f64 = 1e-4;
const SYM_TOL: f64 = 1e-10;
const NEG_PIVOT: f64 = -1e-9;

/// Symmetric PSD similarity matrix with unit diagonal plus a Tikhonov constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    gram: DMatrix<f64>,
    epsilon: f64,
}

fn checked_log(pivot: f64, what: &str) -> Result<f64> {
    if !pivot.is_finite() || pivot < NEG_PIVOT {
        return Err(Error::NotPsd(format!("{what} pivot {pivot}")));
    }
    Ok(pivot.max(f64::MIN_POSITIVE).ln())
}

impl Kernel {
    pub fn new(gram: DMatrix<f64>, epsilon: f64) -> Result<Self> {
        let n = gram.nrows();
        if n == 0 || n != gram.ncols() {
            return Err(Error::NotPsd(format!("kernel must be square, got {:?}", gram.shape())));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {epsilon}")));
        }
        for i in 0..n {
            if (gram[(i, i)] - 1.0).abs() > SYM_TOL {
                return Err(Error::NotPsd(format!("diagonal entry {i} is {}", gram[(i, i)])));
            }
            for j in 0..i {
                if (gram[(i, j)] - gram[(j, i)]).abs() > SYM_TOL {
                    return Err(Error::NotPsd(format!("not symmetric at ({i}, {j})")));
                }
            }
        }
        let shifted = &gram + DMatrix::<f64>::identity(n, n) * epsilon;
        for &p in Ldl::factor(&shifted).pivots() {
            checked_log(p, "kernel")?;
        }
        Ok(Self { gram, epsilon })
    }

    /// `L_ij = ⟨E_i, E_j⟩`.
    pub fn from_dictionary(dict: &UnitDictionary, epsilon: f64) -> Result<Self> {
        let mut gram = dict.gram();
        gram.fill_diagonal(1.0);
        let sym = (&gram + gram.transpose()) * 0.5;
        Self::new(sym, epsilon)
    }

    pub fn size(&self) -> usize {
        self.gram.nrows()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    fn shifted_sub(&self, s: &[usize]) -> DMatrix<f64> {
        let mut sub = self.gram.select_rows(s).select_columns(s);
        for i in 0..s.len() {
            sub[(i, i)] += self.epsilon;
        }
        sub
    }

    /// Relabelled kernel: new index `i` is old index `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { gram: self.gram.select_rows(perm).select_columns(perm), epsilon: self.epsilon }
    }

    fn log_epsilon(&self) -> Result<f64> {
        if self.epsilon > 0.0 {
            Ok(self.epsilon.ln())
        } else {
            Err(Error::InvalidConfig("shifted objective needs epsilon > 0".into()))
        }
    }
}

/// Kernel of `n` i.i.d. Gaussian directions in `R^d`, normalized.
pub fn random_feature_kernel(d: usize, n: usize, epsilon: f64, seed: RngSeed) -> Result<Kernel> {
    let mut s = seed.stream();
    let m = DMatrix::from_fn(d, n, |_, _| s.normal());
    Kernel::from_dictionary(&normalize_columns(&m)?, epsilon)
}

/// `log det(L_S + εI)` via an `LDLᵀ` factorization; zero for the empty set.
pub fn logdet_subset(kernel: &Kernel, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Ok(0.0);
    }
    let s = check_support(subset, kernel.size())?;
    let ldl = Ldl::factor(&kernel.shifted_sub(&s));
    ldl.pivots().iter().map(|&p| checked_log(p, "subset")).sum()
}

/// `F(S ∪ {e}) − F(S)` as the log of the Schur complement of `e` against `S`.
pub fn marginal_gain(kernel: &Kernel, subset: &[usize], e: usize) -> Result<f64> {
    let n = kernel.size();
    if e >= n || subset.contains(&e) {
        return Err(Error::InvalidSupport(format!("element {e} invalid for {subset:?}")));
    }
    let diag = kernel.gram[(e, e)] + kernel.epsilon;
    if subset.is_empty() {
        return checked_log(diag, "singleton");
    }
    let s = check_support(subset, n)?;
    let ldl = Ldl::factor(&kernel.shifted_sub(&s));
    for &p in ldl.pivots() {
        checked_log(p, "subset")?;
    }
    let cross = DVector::from_iterator(s.len(), s.iter().map(|&i| kernel.gram[(i, e)]));
    let schur = diag - cross.dot(&ldl.solve(&cross));
    checked_log(schur, "schur")
}

/// `F̃(S) = log det(L_S + εI) − |S|·log ε`; zero on the empty set.
pub fn shifted_logdet(kernel: &Kernel, subset: &[usize]) -> Result<f64> {
    let log_eps = kernel.log_epsilon()?;
    if subset.is_empty() {
        return Ok(0.0);
    }
    Ok(logdet_subset(kernel, subset)? - subset.len() as f64 * log_eps)
}

/// Greedy volume maximization: `k` rounds of the largest marginal gain,
/// ties to the lower index. Returned in selection order.
pub fn dpp_greedy_select(kernel: &Kernel, k: usize) -> Result<Vec<usize>> {
    dpp_greedy_from(kernel, &[], k)
}

/// Greedy continuation of an already chosen prefix up to `k` elements.
pub fn dpp_greedy_from(kernel: &Kernel, prefix: &[usize], k: usize) -> Result<Vec<usize>> {
    let n = kernel.size();
    if k > n || prefix.len() > k {
        return Err(Error::InvalidK { k, n });
    }
    if !prefix.is_empty() {
        check_support(prefix, n)?;
    }
    let mut chosen: Vec<usize> = prefix.to_vec();
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for e in (0..n).filter(|e| !chosen.contains(e)) {
            let g = marginal_gain(kernel, &chosen, e)?;
            if best.is_none_or(|(_, b)| g > b) {
                best = Some((e, g));
            }
        }
        chosen.push(best.expect("candidate exists while k <= N").0);
    }
    Ok(chosen)
}

/// Exhaustive maximizer of `F̃` over `k`-subsets, first in lexicographic order
/// among ties.
pub fn exhaustive_logdet_max(kernel: &Kernel, k: usize) -> Result<(Vec<usize>, f64)> {
    let n = kernel.size();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    if binomial(n, k) > ENUMERATION_GUARD {
        return Err(Error::TooLarge { n, k });
    }
    let mut comb: Vec<usize> = (0..k).collect();
    let mut best = (comb.clone(), shifted_logdet(kernel, &comb)?);
    while next_combination(&mut comb, n) {
        let v = shifted_logdet(kernel, &comb)?;
        if v > best.1 {
            best = (comb.clone(), v);
        }
    }
    Ok(best)
}

/// Greedy versus exhaustive optimum on one kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NemhauserReport {
    pub greedy: Vec<usize>,
    pub optimum: Vec<usize>,
    pub greedy_value: f64,
    pub optimum_value: f64,
    /// `F̃(S_G) / F̃(S*)`; the guarantee is `≥ 1 − 1/e`.
    pub ratio: f64,
    /// Same ratio for the unshifted `F`. Informational only: `F ≤ 0` here.
    pub raw_ratio: f64,
}

pub fn nemhauser_check(kernel: &Kernel, k: usize) -> Result<NemhauserReport> {
    let greedy = dpp_greedy_select(kernel, k)?;
    let greedy_value = shifted_logdet(kernel, &greedy)?;
    let (optimum, optimum_value) = exhaustive_logdet_max(kernel, k)?;
    let raw_ratio = logdet_subset(kernel, &greedy)? / logdet_subset(kernel, &optimum)?;
    Ok(NemhauserReport { greedy, optimum, greedy_value, optimum_value, ratio: greedy_value / optimum_value, raw_ratio })
}

/// Outcome of [`submodularity_audit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodularityReport {
    pub samples: usize,
    pub violations: usize,
    /// Smallest observed `gain(A, e) − gain(B, e)` over chains `A ⊆ B`.
    pub worst_diminishing_margin: f64,
    /// Smallest observed gain of `F̃`, which must stay nonnegative.
    pub worst_monotone_margin: f64,
}

impl SubmodularityReport {
    pub fn worst_margin(&self) -> f64 {
        self.worst_diminishing_margin.min(self.worst_monotone_margin)
    }
}

/// Samples chains `A ⊆ B` and `e ∉ B`, checking diminishing returns
/// `gain(A, e) ≥ gain(B, e) − 1e-8` and monotonicity of `F̃`.
pub fn submodularity_audit(kernel: &Kernel, samples: usize, seed: RngSeed) -> Result<SubmodularityReport> {
    let n = kernel.size();
    if samples == 0 || n < 2 {
        return Err(Error::InvalidConfig("audit needs samples >= 1 and N >= 2".into()));
    }
    let log_eps = kernel.log_epsilon()?;
    let margins: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut s = seed.derive(&[i as u64]).stream();
            let mut order: Vec<usize> = (0..n).collect();
            s.shuffle(&mut order);
            let b_len = s.below(n);
            let e = order[b_len];
            let b: Vec<usize> = order[..b_len].to_vec();
            let a: Vec<usize> = b.iter().copied().filter(|_| s.sign() > 0.0).collect();
            let gain_a = marginal_gain(kernel, &a, e)?;
            let gain_b = marginal_gain(kernel, &b, e)?;
            Ok((gain_a - gain_b, gain_b - log_eps))
        })
        .collect::<Result<_>>()?;
    let violations = margins.iter().filter(|(dim, mono)| *dim < -1e-8 || *mono < -1e-8).count();
    Ok(SubmodularityReport {
        samples,
        violations,
        worst_diminishing_margin: margins.iter().map(|m| m.0).fold(f64::INFINITY, f64::min),
        worst_monotone_margin: margins.iter().map(|m| m.1).fold(f64::INFINITY, f64::min),
    })
}
