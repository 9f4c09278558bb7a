//! Small-scale property suite run by `moegeo verify`.
//!
//! Every check reports a worst margin: the smallest slack observed between a
//! measured quantity and its tolerance. A check passes iff that margin is
//! nonnegative.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictgen::{coherent_dictionary, planted_signal, random_orthonormal_dictionary, CoherenceBlend};
use crate::dictionary::{least_squares_on_support, mutual_coherence, TargetSignal};
use crate::diversity::{
    logdet_subset, marginal_gain, nemhauser_check, random_feature_kernel, submodularity_audit, DEFAULT_EPSILON,
};
use crate::error::{Error, Result};
use crate::infotheory::{
    collision_identity_check, empirical_mi, kl_divergence, kl_sparse_project, topk_conditional_entropy,
    CategoricalDist, RoutingBatch,
};
use crate::moe::gradcheck::check_random_batch;
use crate::moe::{ambiguity_decomposition, forward, MoEConfig, RegKind, Weights};
use crate::rng::{RngSeed, Stream};
use crate::sss::{brute_force_sss, coherence_bound, greedy_topk_select, next_combination, omp_select};

/// Deliberate defects for exercising the harness itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Negates the divergence reported by the sparse projection.
    KlSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub description: String,
    pub passed: bool,
    pub worst_margin: f64,
    pub cases: usize,
}

type CheckFn = fn(RngSeed, Option<Fault>) -> Result<(f64, usize)>;

const CHECKS: &[(&str, &str, CheckFn)] = &[
    ("kl-projection", "sparse KL projection matches the exhaustive minimizer and its closed form", check_kl_projection),
    ("collision-identity", "aux loss collision identity and the 1/E floor", check_collision),
    ("cs-floor", "projected gradient descent on the collision sum reaches the uniform marginal", check_cs_floor),
    (
        "conditional-entropy",
        "Top-k conditional entropy is at most log k, with equality for uniform gates",
        check_conditional_entropy,
    ),
    ("mi-bound", "routing MI is at least H(Z) - log k, tight for balanced routing", check_mi_bound),
    ("orthogonal-topk", "Top-k equals exhaustive selection on orthonormal dictionaries", check_orthogonal_topk),
    ("exact-recovery", "greedy and OMP recover planted supports below the coherence bound", check_exact_recovery),
    ("oracle-dominance", "exhaustive residual never exceeds greedy or OMP residual", check_oracle_dominance),
    ("logdet-submodular", "log-det gains are monotone and diminishing", check_submodular),
    ("logdet-greedy-ratio", "greedy log-det reaches 1 - 1/e of the optimum", check_nemhauser),
    ("schur-identity", "marginal gain equals the log-det increment", check_schur),
    ("permutation-equivariance", "log-det of a subset is invariant under relabeling", check_permutation),
    ("ambiguity", "ensemble error equals mean individual error minus ambiguity", check_ambiguity),
    ("gradcheck", "analytic gradients match central differences for every penalty", check_gradients),
    ("gate-normalization", "renormalized gates sum to one per sample", check_gates),
    ("projection-monotone", "least-squares residual never grows when atoms are added", check_projection),
    ("coherence-bounds", "coherence lies in [0, 1] and grows with the blend parameter", check_coherence),
];

/// Short names accepted by [`run_checks`]; a short name selects every
/// check it maps to.
pub const ALIASES: &[(&str, &[&str])] = &[
    ("thm1", &["kl-projection"]),
    ("thm2", &["collision-identity"]),
    ("thm3", &["conditional-entropy"]),
    ("thm4", &["mi-bound"]),
    ("thm5", &["orthogonal-topk"]),
    ("thm7", &["logdet-submodular", "logdet-greedy-ratio"]),
    ("thm8", &["ambiguity"]),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.0).collect()
}

fn expand(only: &[String]) -> Result<Vec<&'static str>> {
    let mut names = Vec::new();
    for n in only {
        if let Some(c) = CHECKS.iter().find(|c| c.0 == n.as_str()) {
            names.push(c.0);
        } else if let Some((_, targets)) = ALIASES.iter().find(|a| a.0 == n.as_str()) {
            names.extend_from_slice(targets);
        } else {
            return Err(Error::InvalidConfig(format!("unknown check {n:?}")));
        }
    }
    Ok(names)
}

/// Runs the named checks, or all of them when `only` is empty.
pub fn run_checks(only: &[String], seed: RngSeed, fault: Option<Fault>) -> Result<Vec<CheckResult>> {
    let wanted = expand(only)?;
    CHECKS
        .iter()
        .enumerate()
        .filter(|(_, c)| wanted.is_empty() || wanted.contains(&c.0))
        .map(|(i, &(name, description, f))| {
            let (worst_margin, cases) = f(seed.derive(&[i as u64]), fault)?;
            Ok(CheckResult {
                name: name.into(),
                description: description.into(),
                passed: worst_margin >= 0.0,
                worst_margin,
                cases,
            })
        })
        .collect()
}

fn random_dist(s: &mut Stream, e: usize) -> Result<CategoricalDist> {
    let w: Vec<f64> = (0..e).map(|_| (1.5 * s.normal()).exp()).collect();
    CategoricalDist::from_weights(&w)
}

fn random_batch(s: &mut Stream, t: usize, e: usize, k: usize) -> Result<RoutingBatch> {
    let mut dense = DMatrix::zeros(t, e);
    for r in 0..t {
        let p = random_dist(s, e)?;
        for (c, v) in p.probs().iter().enumerate() {
            dense[(r, c)] = *v;
        }
    }
    RoutingBatch::from_dense_topk(dense, k)
}

fn check_kl_projection(seed: RngSeed, fault: Option<Fault>) -> Result<(f64, usize)> {
    let mut s = seed.stream();
    let mut worst = f64::INFINITY;
    let cases = 300;
    for _ in 0..cases {
        let e = 2 + s.below(7);
        let k = 1 + s.below(4.min(e));
        let p = random_dist(&mut s, e)?;
        let proj = kl_sparse_project(&p, k)?;
        let kl = if fault == Some(Fault::KlSign) { -proj.kl } else { proj.kl };

        let mut best = f64::INFINITY;
        let mut comb: Vec<usize> = (0..k).collect();
        loop {
            let mass: f64 = comb.iter().map(|&i| p.probs()[i]).sum();
            best = best.min(-mass.ln());
            if !next_combination(&mut comb, e) {
                break;
            }
        }
        let direct = kl_divergence(proj.q.probs(), p.probs());
        let err = (kl - best).abs().max((kl - direct).abs());
        worst = worst.min(1e-10 - err);
    }
    Ok((worst, cases))
}

fn check_collision(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut s = seed.stream();
    let mut worst = f64::INFINITY;
    let cases = 300;
    for _ in 0..cases {
        let e = 2 + s.below(15);
        let (t, k) = (1 + s.below(20), 1 + s.below(e.min(4)));
        let b = random_batch(&mut s, t, e, k)?;
        let id = collision_identity_check(&b)?;
        let floor: f64 = b.mean_probs().iter().map(|p| p * p).sum::<f64>() - 1.0 / e as f64;
        worst = worst.min(1e-9 - id.gap).min(floor + 1e-12);
    }
    Ok((worst, cases))
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn check_cs_floor(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut s = seed.stream();
    let mut worst = f64::INFINITY;
    let cases = 20;
    for _ in 0..cases {
        let e = 2 + s.below(15);
        let mut p = random_dist(&mut s, e)?.probs().to_vec();
        for _ in 0..200 {
            let step: Vec<f64> = p.iter().map(|x| x - 0.25 * 2.0 * x).collect();
            p = project_simplex(&step);
        }
        let dev = p.iter().map(|x| (x - 1.0 / e as f64).abs()).fold(0.0, f64::max);
        worst = worst.min(1e-6 - dev);
    }
    Ok((worst, cases))
}

fn check_conditional_entropy(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut s = seed.stream();
    let mut worst = f64::INFINITY;
    let mut cases = 0;
    for k in [1usize, 2, 4] {
        for _ in 0..100 {
            let e = k + 1 + s.below(8);
            let t = 1 + s.below(16);
            let b = random_batch(&mut s, t, e, k)?;
            worst = worst.min((k as f64).ln() + 1e-9 - topk_conditional_entropy(&b));
            cases += 1;
        }
        let e = 2 * k;
        let b = RoutingBatch::from_dense_topk(DMatrix::from_element(3, e, 1.0 / e as f64), k)?;
        worst = worst.min(1e-9 - (topk_conditional_entropy(&b) - (k as f64).ln()).abs());
        cases += 1;
    }
    Ok((worst, cases))
}

fn check_mi_bound(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut s = seed.stream();
    let mut worst = f64::INFINITY;
    let cases = 200;
    for _ in 0..cases {
        let e = 3 + s.below(10);
        let k = 1 + s.below(e - 1);
        let t = 1 + s.below(20);
        let b = random_batch(&mut s, t, e, k)?;
        let mi = empirical_mi(&b);
        worst = worst.min(mi.mi - (mi.h_z - (k as f64).ln()) + 1e-9);
    }
    // Cyclic selections with uniform gates reach log E − log k exactly.
    let (e, k) = (8, 3);
    let dense = DMatrix::from_fn(e, e, |t, i| if (i + e - t) % e < k { 1.0 / k as f64 } else { 0.0 });
    let sel = (0..e).map(|t| (0..k).map(|j| (t + j) % e).collect()).collect();
    let mi = empirical_mi(&RoutingBatch::new(dense, sel)?);
    worst = worst.min(1e-9 - (mi.mi - ((e as f64).ln() - (k as f64).ln())).abs());
    Ok((worst, cases + 1))
}

fn check_orthogonal_topk(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut worst = f64::INFINITY;
    let cases = 100;
    for c in 0..cases {
        let mut s = seed.derive(&[c]).stream();
        let n = 2 + s.below(9);
        let d = n + s.below(4);
        let k = 1 + s.below(4.min(n));
        let dict = random_orthonormal_dictionary(d, n, seed.derive(&[c, 1]))?;
        let y = TargetSignal::new(DVector::from_fn(d, |_, _| s.normal()));
        let same = greedy_topk_select(&dict, &y, k)? == brute_force_sss(&dict, &y, k)?.support;
        worst = worst.min(if same { 0.0 } else { -1.0 });
    }
    Ok((worst, cases as usize))
}

fn check_exact_recovery(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut worst = f64::INFINITY;
    let cases = 60;
    for c in 0..cases {
        let k = 2 + (c as usize % 3);
        let target = 0.9 * coherence_bound(k);
        let dict = coherent_dictionary(48, 24, target, 0.005, seed.derive(&[c, 0]))?;
        let y = planted_signal(&dict, k, seed.derive(&[c, 1]))?;
        let planted = y.planted_support.clone().unwrap_or_default();
        let ok = greedy_topk_select(&dict, &y, k)? == planted && omp_select(&dict, &y, k)? == planted;
        worst = worst.min(if ok { coherence_bound(k) - mutual_coherence(&dict) } else { -1.0 });
    }
    Ok((worst, cases as usize))
}

fn check_oracle_dominance(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut worst = f64::INFINITY;
    let cases = 60;
    for c in 0..cases {
        let mut s = seed.derive(&[c]).stream();
        let dict = coherent_dictionary(10, 10, 0.2 + 0.6 * s.uniform(), 0.01, seed.derive(&[c, 0]))?;
        let y = TargetSignal::new(DVector::from_fn(10, |_, _| s.normal()));
        let k = 1 + s.below(4);
        let best = brute_force_sss(&dict, &y, k)?.residual_sq;
        for sup in [greedy_topk_select(&dict, &y, k)?, omp_select(&dict, &y, k)?] {
            let r = least_squares_on_support(&dict, &y, &sup)?.residual_sq;
            worst = worst.min(r - best + 1e-10);
        }
    }
    Ok((worst, cases as usize))
}

fn check_submodular(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut worst = f64::INFINITY;
    let kernels = 10;
    for c in 0..kernels {
        let kernel = random_feature_kernel(6, 10, DEFAULT_EPSILON, seed.derive(&[c, 0]))?;
        let r = submodularity_audit(&kernel, 100, seed.derive(&[c, 1]))?;
        worst = worst.min(if r.violations == 0 { r.worst_margin().max(0.0) } else { -(r.violations as f64) });
    }
    Ok((worst, kernels as usize * 100))
}

fn check_nemhauser(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut worst = f64::INFINITY;
    let cases = 40;
    let bound = 1.0 - (-1.0f64).exp();
    for c in 0..cases {
        let mut s = seed.derive(&[c]).stream();
        let n = 4 + s.below(9);
        let k = 1 + s.below(4);
        let kernel = random_feature_kernel(2 + s.below(6), n, DEFAULT_EPSILON, seed.derive(&[c, 0]))?;
        worst = worst.min(nemhauser_check(&kernel, k)?.ratio - bound + 1e-9);
    }
    Ok((worst, cases as usize))
}

fn check_schur(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut worst = f64::INFINITY;
    let cases = 100;
    for c in 0..cases {
        let mut s = seed.derive(&[c]).stream();
        let kernel = random_feature_kernel(5, 9, DEFAULT_EPSILON, seed.derive(&[c, 0]))?;
        let mut order: Vec<usize> = (0..9).collect();
        s.shuffle(&mut order);
        let m = s.below(5);
        let (sub, e) = (&order[..m], order[m]);
        let mut with = sub.to_vec();
        with.push(e);
        let diff = logdet_subset(&kernel, &with)? - logdet_subset(&kernel, sub)?;
        worst = worst.min(1e-9 - (marginal_gain(&kernel, sub, e)? - diff).abs());
    }
    Ok((worst, cases as usize))
}

fn check_permutation(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut worst = f64::INFINITY;
    let cases = 100;
    for c in 0..cases {
        let mut s = seed.derive(&[c]).stream();
        let kernel = random_feature_kernel(5, 8, DEFAULT_EPSILON, seed.derive(&[c, 0]))?;
        let mut perm: Vec<usize> = (0..8).collect();
        s.shuffle(&mut perm);
        let permuted = kernel.permuted(&perm);
        // New index j holds old atom perm[j].
        let mut inverse = [0; 8];
        perm.iter().enumerate().for_each(|(j, &old)| inverse[old] = j);
        let m = 1 + s.below(5);
        let sub = s.subset(8, m);
        let mapped: Vec<usize> = sub.iter().map(|&i| inverse[i]).collect();
        let err = (logdet_subset(&kernel, &sub)? - logdet_subset(&permuted, &mapped)?).abs();
        worst = worst.min(1e-10 - err);
    }
    Ok((worst, cases as usize))
}

fn check_ambiguity(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut s = seed.stream();
    let mut worst = f64::INFINITY;
    let cases = 300;
    for _ in 0..cases {
        let k = 1 + s.below(8);
        let dim = 1 + s.below(16);
        let outs: Vec<DVector<f64>> = (0..k).map(|_| DVector::from_fn(dim, |_, _| s.normal())).collect();
        let target = DVector::from_fn(dim, |_, _| s.normal());
        worst = worst.min(1e-10 - ambiguity_decomposition(&outs, &target)?.gap);
    }
    Ok((worst, cases))
}

fn check_gradients(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut worst = f64::INFINITY;
    for (i, kind) in RegKind::ALL.into_iter().enumerate() {
        let cfg = MoEConfig {
            input_dim: 10,
            experts: 6,
            active: 2,
            expert_hidden: 8,
            classes: 4,
            reg_kind: kind,
            ..Default::default()
        };
        let (check, _) = check_random_batch(&cfg, 4, seed.derive(&[i as u64]), 20)?;
        worst = worst.min(1e-4 - check.max_rel_err);
    }
    Ok((worst, RegKind::ALL.len()))
}

fn check_gates(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut worst = f64::INFINITY;
    let mut cases = 0;
    for k in 1..=5 {
        let cfg = MoEConfig { input_dim: 6, experts: 5, active: k, expert_hidden: 4, classes: 3, ..Default::default() };
        let w = Weights::init(&cfg, seed.derive(&[k as u64]));
        let mut s = seed.derive(&[k as u64, 1]).stream();
        let x = DMatrix::from_fn(50, 6, |_, _| 3.0 * s.normal());
        for sample in forward(&w, &cfg, &x)?.samples {
            worst = worst.min(1e-9 - (sample.gates.iter().sum::<f64>() - 1.0).abs());
            cases += 1;
        }
    }
    Ok((worst, cases))
}

fn check_projection(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut worst = f64::INFINITY;
    let cases = 100;
    for c in 0..cases {
        let mut s = seed.derive(&[c]).stream();
        let dict = coherent_dictionary(12, 8, 0.6 * s.uniform(), 0.01, seed.derive(&[c, 0]))?;
        let y = TargetSignal::new(DVector::from_fn(12, |_, _| s.normal()));
        let mut order: Vec<usize> = (0..8).collect();
        s.shuffle(&mut order);
        let mut prev = y.norm_sq();
        for m in 1..=8 {
            let r = least_squares_on_support(&dict, &y, &order[..m])?.residual_sq;
            worst = worst.min(prev - r + 1e-10);
            prev = r;
        }
    }
    Ok((worst, cases as usize))
}

fn check_coherence(seed: RngSeed, _: Option<Fault>) -> Result<(f64, usize)> {
    let mut worst = f64::INFINITY;
    let cases = 20;
    for c in 0..cases {
        let blend = CoherenceBlend::new(16, 10, seed.derive(&[c]))?;
        let mut prev = -1.0;
        for i in 0..20 {
            let mu = mutual_coherence(&blend.dictionary(i as f64 / 20.0)?);
            worst = worst.min(mu).min(1.0 - mu).min(mu - prev + 1e-12);
            prev = mu;
        }
    }
    Ok((worst, cases as usize * 20))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        let results = run_checks(&[], RngSeed(42), None).unwrap();
        assert_eq!(results.len(), CHECKS.len());
        for r in &results {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn fault_is_caught_by_name() {
        let results = run_checks(&["kl-projection".into()], RngSeed(42), Some(Fault::KlSign)).unwrap();
        assert_eq!(results.len(), 1);
        assert!(!results[0].passed);
    }

    #[test]
    fn filter_and_unknown_names() {
        let r = run_checks(&["thm5".into()], RngSeed(1), None).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].name, "orthogonal-topk");
        let r = run_checks(&["thm7".into(), "ambiguity".into()], RngSeed(1), None).unwrap();
        let names: Vec<&str> = r.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["logdet-submodular", "logdet-greedy-ratio", "ambiguity"]);
        assert!(run_checks(&["nope".into()], RngSeed(1), None).is_err());
    }

    #[test]
    fn simplex_projection() {
        let p = project_simplex(&[0.5, 0.5, 0.5]);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
    }
}
