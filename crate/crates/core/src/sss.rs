//! Sparse subset selection: exhaustive search, one-shot Top-k, OMP, and the
//! coherence sweep that measures where greedy recovery breaks down.
//!
//! Ties are always broken toward the lower atom index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictgen::{coherent_dictionary, planted_signal_with, CoefficientLaw};
use crate::dictionary::{least_squares_on_support, mutual_coherence, SparseSolution, TargetSignal, UnitDictionary};
use crate::error::{Error, Result};
use crate::rng::RngSeed;

/// Upper limit on the number of subsets [`brute_force_sss`] will enumerate.
pub const ENUMERATION_GUARD: u64 = 10_000_000;

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Lexicographic successor of a sorted `k`-combination of `0..n`.
pub(crate) fn next_combination(comb: &mut [usize], n: usize) -> bool {
    let k = comb.len();
    let Some(i) = (0..k).rev().find(|&i| comb[i] != i + n - k) else {
        return false;
    };
    comb[i] += 1;
    for j in (i + 1)..k {
        comb[j] = comb[j - 1] + 1;
    }
    true
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    Ok(())
}

/// Exact minimizer of `‖y − E_S α‖²` over all `|S| = k`.
///
/// Rank-deficient subsets are skipped. The first subset in lexicographic order
/// wins among equal residuals.
pub fn brute_force_sss(dict: &UnitDictionary, y: &TargetSignal, k: usize) -> Result<SparseSolution> {
    let n = dict.atoms();
    check_k(k, n)?;
    if binomial(n, k) > ENUMERATION_GUARD {
        return Err(Error::TooLarge { n, k });
    }
    let mut comb: Vec<usize> = (0..k).collect();
    let mut best: Option<SparseSolution> = None;
    loop {
        match least_squares_on_support(dict, y, &comb) {
            Ok(sol) => {
                if best.as_ref().is_none_or(|b| sol.residual_sq < b.residual_sq) {
                    best = Some(sol);
                }
            }
            Err(Error::SingularGram(_)) => {}
            Err(e) => return Err(e),
        }
        if !next_combination(&mut comb, n) {
            break;
        }
    }
    best.ok_or_else(|| Error::SingularGram((0..k).collect()))
}

/// Indices of the `k` largest scores, lower index first among equals.
pub(crate) fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// One-shot router rule: the `k` atoms with largest `|⟨E_i, y⟩|`, sorted.
pub fn greedy_topk_select(dict: &UnitDictionary, y: &TargetSignal, k: usize) -> Result<Vec<usize>> {
    check_k(k, dict.atoms())?;
    let scores: Vec<f64> = dict.correlations(&y.vector).iter().map(|c| c.abs()).collect();
    let mut picked = top_k_indices(&scores, k);
    picked.sort_unstable();
    Ok(picked)
}

/// Orthogonal Matching Pursuit for exactly `k` steps; returns the sorted support.
pub fn omp_select(dict: &UnitDictionary, y: &TargetSignal, k: usize) -> Result<Vec<usize>> {
    check_k(k, dict.atoms())?;
    let mut support: Vec<usize> = Vec::with_capacity(k);
    let mut residual = y.vector.clone();
    for _ in 0..k {
        let corr = dict.correlations(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in corr.iter().enumerate() {
            if support.contains(&i) {
                continue;
            }
            let s = c.abs();
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (pick, _) = best.expect("k <= N leaves a candidate");
        support.push(pick);
        let fit = least_squares_on_support(dict, y, &support)?;
        residual = y.vector.clone();
        for (&j, &a) in fit.support.iter().zip(&fit.coefficients) {
            residual.axpy(-a, &dict.matrix().column(j), 1.0);
        }
    }
    support.sort_unstable();
    Ok(support)
}

/// Result of one planted-recovery trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOutcome {
    pub mu_measured: f64,
    pub planted_support: Vec<usize>,
    pub greedy_support: Vec<usize>,
    pub omp_support: Vec<usize>,
    pub oracle_support: Option<Vec<usize>>,
    pub greedy_exact: bool,
    pub omp_exact: bool,
    pub greedy_residual_sq: f64,
    pub oracle_residual_sq: Option<f64>,
}

/// Parameters of a coherence sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub mu_grid: Vec<f64>,
    pub trials: usize,
    pub seed: RngSeed,
    /// Allowed deviation of the realised coherence from each grid target.
    pub mu_tol: f64,
    pub law: CoefficientLaw,
    /// Also run the exhaustive solver when `C(N, k)` is within the guard.
    pub with_oracle: bool,
}

pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect(),
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            d: 128,
            n: 64,
            k: 6,
            mu_grid: linspace(0.0, 0.95, 25),
            trials: 200,
            seed: RngSeed(42),
            mu_tol: 0.005,
            law: CoefficientLaw::Rademacher,
            with_oracle: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.mu_grid.is_empty() {
            return cfg("mu_grid must not be empty");
        }
        if self.mu_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return cfg("mu_grid must ascend");
        }
        if self.mu_grid.iter().any(|m| !(0.0..1.0).contains(m)) {
            return cfg("mu_grid values must lie in [0, 1)");
        }
        if self.trials == 0 {
            return cfg("trials must be >= 1");
        }
        if self.n < 2 || self.n > self.d {
            return cfg("need 2 <= n <= d");
        }
        if self.k == 0 || self.k > self.n {
            return cfg("need 1 <= k <= n");
        }
        if !(self.mu_tol > 0.0) {
            return cfg("mu_tol must be > 0");
        }
        Ok(())
    }
}

/// Coherence threshold `1/(2k−1)` below which greedy recovery is guaranteed.
pub fn coherence_bound(k: usize) -> f64 {
    1.0 / (2 * k - 1) as f64
}

/// One trial at grid target `mu`, fully determined by `seed`.
pub fn recovery_trial(cfg: &SweepConfig, mu: f64, seed: RngSeed) -> Result<RecoveryOutcome> {
    let dict = coherent_dictionary(cfg.d, cfg.n, mu, cfg.mu_tol, seed.derive(&[0]))?;
    let y = planted_signal_with(&dict, cfg.k, cfg.law, seed.derive(&[1]))?;
    let planted = y.planted_support.clone().unwrap_or_default();
    let greedy_support = greedy_topk_select(&dict, &y, cfg.k)?;
    let omp_support = omp_select(&dict, &y, cfg.k)?;
    let greedy_residual_sq = least_squares_on_support(&dict, &y, &greedy_support)?.residual_sq;
    let oracle = if cfg.with_oracle && binomial(cfg.n, cfg.k) <= ENUMERATION_GUARD {
        Some(brute_force_sss(&dict, &y, cfg.k)?)
    } else {
        None
    };
    Ok(RecoveryOutcome {
        mu_measured: mutual_coherence(&dict),
        greedy_exact: greedy_support == planted,
        omp_exact: omp_support == planted,
        planted_support: planted,
        greedy_support,
        omp_support,
        greedy_residual_sq,
        oracle_support: oracle.as_ref().map(|o| o.support.clone()),
        oracle_residual_sq: oracle.map(|o| o.residual_sq),
    })
}

/// Success rates per coherence grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierCurve {
    pub mu_grid: Vec<f64>,
    pub mu_measured_mean: Vec<f64>,
    pub success_rate_greedy: Vec<f64>,
    pub success_rate_omp: Vec<f64>,
    pub trials_per_point: usize,
    pub k: usize,
    pub theoretical_bound: f64,
    #[serde(skip)]
    pub outcomes: Vec<Vec<RecoveryOutcome>>,
}

impl BarrierCurve {
    /// Largest grid target whose greedy success rate is exactly 1.
    pub fn largest_full_success_mu(&self) -> Option<f64> {
        self.mu_grid.iter().zip(&self.success_rate_greedy).rev().find(|(_, &r)| r == 1.0).map(|(&m, _)| m)
    }

    /// Greedy success smoothed with a centred 3-point moving average
    /// (2-point at the ends).
    pub fn smoothed_greedy(&self) -> Vec<f64> {
        let r = &self.success_rate_greedy;
        (0..r.len())
            .map(|i| {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(r.len() - 1);
                r[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            })
            .collect()
    }
}

/// Runs `trials` independent planted-recovery trials at each grid point.
///
/// Trial `t` draws from `seed.derive([t])` at every grid point: the same
/// basis, shared direction, support and signs are re-blended to each target
/// coherence (common random numbers). Results are independent of how work is
/// scheduled across threads.
pub fn barrier_sweep(cfg: &SweepConfig) -> Result<BarrierCurve> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.mu_grid.len()).flat_map(|g| (0..cfg.trials).map(move |t| (g, t))).collect();
    let flat: Vec<RecoveryOutcome> = jobs
        .par_iter()
        .map(|&(g, t)| recovery_trial(cfg, cfg.mu_grid[g], cfg.seed.derive(&[t as u64])))
        .collect::<Result<_>>()?;

    let outcomes: Vec<Vec<RecoveryOutcome>> = flat.chunks(cfg.trials).map(|c| c.to_vec()).collect();
    let trials = cfg.trials as f64;
    let rate = |f: fn(&RecoveryOutcome) -> bool| -> Vec<f64> {
        outcomes.iter().map(|row| row.iter().filter(|o| f(o)).count() as f64 / trials).collect()
    };
    Ok(BarrierCurve {
        mu_grid: cfg.mu_grid.clone(),
        mu_measured_mean: outcomes.iter().map(|row| row.iter().map(|o| o.mu_measured).sum::<f64>() / trials).collect(),
        success_rate_greedy: rate(|o| o.greedy_exact),
        success_rate_omp: rate(|o| o.omp_exact),
        trials_per_point: cfg.trials,
        k: cfg.k,
        theoretical_bound: coherence_bound(cfg.k),
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictgen::random_orthonormal_dictionary;
    use crate::dictionary::normalize_columns;
    use nalgebra::{DMatrix, DVector};

    fn random_target(d: usize, seed: u64) -> TargetSignal {
        let mut s = RngSeed(seed).stream();
        TargetSignal::new(DVector::from_fn(d, |_, _| s.normal()))
    }

    #[test]
    fn combinations_enumerate_binomial() {
        let mut comb = vec![0, 1, 2];
        let mut count = 1;
        while next_combination(&mut comb, 7) {
            count += 1;
        }
        assert_eq!(count, 35);
        assert_eq!(binomial(7, 3), 35);
        assert_eq!(binomial(64, 6), 74_974_368);
    }

    #[test]
    fn brute_force_recovers_planted() {
        let mut s = RngSeed(3).stream();
        let m = DMatrix::from_fn(10, 8, |_, _| s.normal());
        let d = normalize_columns(&m).unwrap();
        let y = TargetSignal::planted(&d, &[1, 5], &[1.0, -0.7]);
        let sol = brute_force_sss(&d, &y, 2).unwrap();
        assert_eq!(sol.support, vec![1, 5]);
        assert!(sol.residual_sq < 1e-12);
    }

    #[test]
    fn brute_force_guard() {
        let d = random_orthonormal_dictionary(64, 64, RngSeed(0)).unwrap();
        let y = random_target(64, 1);
        assert_eq!(brute_force_sss(&d, &y, 6), Err(Error::TooLarge { n: 64, k: 6 }));
    }

    #[test]
    fn brute_force_skips_singular_subsets() {
        let m = DMatrix::from_column_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let d = normalize_columns(&m).unwrap();
        let y = TargetSignal::new(DVector::from_vec(vec![1.0, 2.0, 0.0]));
        let sol = brute_force_sss(&d, &y, 2).unwrap();
        assert_eq!(sol.support, vec![0, 2]);
    }

    #[test]
    fn orthonormal_greedy_is_optimal() {
        for seed in 0..20 {
            let d = random_orthonormal_dictionary(10, 8, RngSeed(seed)).unwrap();
            let y = random_target(10, seed + 100);
            let brute = brute_force_sss(&d, &y, 3).unwrap();
            assert_eq!(greedy_topk_select(&d, &y, 3).unwrap(), brute.support);
            assert_eq!(omp_select(&d, &y, 3).unwrap(), brute.support);
        }
    }

    #[test]
    fn greedy_exact_atom_and_ties() {
        let d = UnitDictionary::new(DMatrix::identity(5, 5)).unwrap();
        let y = TargetSignal::new(d.column(3));
        assert_eq!(greedy_topk_select(&d, &y, 1).unwrap(), vec![3]);
        let tied = TargetSignal::new(DVector::from_vec(vec![0.0, 0.5, 1.0, -0.5, 0.0]));
        assert_eq!(greedy_topk_select(&d, &tied, 2).unwrap(), vec![1, 2]);
        assert_eq!(omp_select(&d, &tied, 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn omp_first_step_matches_greedy() {
        let mut s = RngSeed(8).stream();
        let d = normalize_columns(&DMatrix::from_fn(6, 12, |_, _| s.normal())).unwrap();
        for seed in 0..10 {
            let y = random_target(6, seed);
            assert_eq!(omp_select(&d, &y, 1).unwrap(), greedy_topk_select(&d, &y, 1).unwrap());
        }
    }

    #[test]
    fn omp_recovers_below_bound() {
        let d = coherent_dictionary(64, 32, 0.1, 0.01, RngSeed(5)).unwrap();
        assert!(mutual_coherence(&d) < coherence_bound(4));
        for seed in 0..20 {
            let law = CoefficientLaw::UniformMagnitude { lo: 0.5, hi: 2.0 };
            let y = planted_signal_with(&d, 4, law, RngSeed(seed)).unwrap();
            assert_eq!(&omp_select(&d, &y, 4).unwrap(), y.planted_support.as_ref().unwrap());
        }
    }

    #[test]
    fn bound_for_k6() {
        assert!((coherence_bound(6) - 1.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn sweep_validation() {
        let mut cfg = SweepConfig { mu_grid: vec![0.5, 0.2], ..Default::default() };
        assert_eq!(cfg.validate(), Err(Error::InvalidConfig("mu_grid must ascend".into())));
        cfg.mu_grid = vec![0.2, 1.0];
        assert!(cfg.validate().is_err());
        cfg.mu_grid = vec![0.2];
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn small_sweep_with_oracle_dominance() {
        let cfg = SweepConfig {
            d: 16,
            n: 10,
            k: 3,
            mu_grid: vec![0.0, 0.15, 0.6],
            trials: 20,
            with_oracle: true,
            ..Default::default()
        };
        let curve = barrier_sweep(&cfg).unwrap();
        assert_eq!(curve.success_rate_greedy.len(), 3);
        assert_eq!(curve.success_rate_greedy[0], 1.0);
        for o in curve.outcomes.iter().flatten() {
            assert!(o.greedy_residual_sq >= o.oracle_residual_sq.unwrap() - 1e-9);
            assert!(o.oracle_residual_sq.unwrap() < 1e-10);
        }
        assert_eq!(barrier_sweep(&cfg).unwrap(), curve);
    }
}
