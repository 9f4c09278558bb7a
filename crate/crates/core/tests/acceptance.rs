//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use moegeo::dictgen::{random_orthonormal_dictionary, synthetic_classification, SyntheticConfig};
use moegeo::dictionary::TargetSignal;
use moegeo::diversity::{nemhauser_check, random_feature_kernel, submodularity_audit, DEFAULT_EPSILON};
use moegeo::export::{barrier_csv, heatmap_csv, run_csv};
use moegeo::infotheory::{
    collision_identity_check, kl_sparse_project, topk_conditional_entropy, CategoricalDist, RoutingBatch,
};
use moegeo::moe::gradcheck::check_random_batch;
use moegeo::moe::{ambiguity_decomposition, cross_validate, CrossValidation, DataSplit, MoEConfig, RegKind};
use moegeo::sss::{barrier_sweep, brute_force_sss, greedy_topk_select, SweepConfig};
use moegeo::RngSeed;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn random_dist(s: &mut moegeo::rng::Stream, e: usize) -> CategoricalDist {
    let w: Vec<f64> = (0..e).map(|_| (1.5 * s.normal()).exp()).collect();
    CategoricalDist::from_weights(&w).unwrap()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    (k - 1..n)
        .flat_map(|last| {
            combinations(last, k - 1).into_iter().map(move |mut c| {
                c.push(last);
                c
            })
        })
        .collect()
}

fn sparse_projection_oracle() -> Outcome {
    let mut s = RngSeed(1001).stream();
    let (mut worst_kl, mut mismatches) = (0.0_f64, 0);
    for _ in 0..1000 {
        let e = 2 + s.below(7);
        let k = 1 + s.below(4.min(e));
        let p = random_dist(&mut s, e);
        let proj = kl_sparse_project(&p, k).unwrap();
        let mass = |sup: &[usize]| sup.iter().map(|&i| p.probs()[i]).sum::<f64>();
        let best = combinations(e, k).into_iter().fold((Vec::new(), f64::NEG_INFINITY), |acc, c| {
            if mass(&c) > acc.1 {
                (c.clone(), mass(&c))
            } else {
                acc
            }
        });
        // Equal-mass supports are ties, not mismatches.
        if proj.support != best.0 && (mass(&proj.support) - best.1).abs() > 1e-15 {
            mismatches += 1;
        }
        worst_kl = worst_kl.max((proj.kl + best.1.ln()).abs());
    }
    outcome(
        mismatches == 0 && worst_kl <= 1e-10,
        format!("support mismatches {mismatches}, worst |KL - closed form| {worst_kl:.2e}"),
    )
}

fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let (mut cum, mut theta) = (0.0, 0.0);
    for (i, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn collision_identity() -> Outcome {
    let mut s = RngSeed(1002).stream();
    let (mut worst_gap, mut worst_floor) = (0.0_f64, f64::INFINITY);
    for _ in 0..1000 {
        let e = 2 + s.below(31);
        let p = random_dist(&mut s, e);
        let dense = DMatrix::from_row_slice(1, e, p.probs());
        let id = collision_identity_check(&RoutingBatch::from_dense_topk(dense, 1).unwrap()).unwrap();
        worst_gap = worst_gap.max(id.gap);
        worst_floor = worst_floor.min(p.probs().iter().map(|x| x * x).sum::<f64>() - 1.0 / e as f64);
    }
    let mut worst_dev = 0.0_f64;
    for e in [2, 5, 16, 64] {
        let mut p = random_dist(&mut s, e).probs().to_vec();
        for _ in 0..500 {
            let step: Vec<f64> = p.iter().map(|x| x - 0.1 * 2.0 * x).collect();
            p = project_simplex(&step);
        }
        worst_dev = worst_dev.max(p.iter().map(|x| (x - 1.0 / e as f64).abs()).fold(0.0, f64::max));
    }
    outcome(
        worst_gap <= 1e-9 && worst_floor >= -1e-15 && worst_dev < 1e-6,
        format!(
            "max gap {worst_gap:.2e}, min sum P^2 - 1/E {worst_floor:.2e}, PGD minimizer deviation {worst_dev:.2e}"
        ),
    )
}

fn conditional_entropy_bound() -> Outcome {
    let mut s = RngSeed(1003).stream();
    let (mut worst, mut worst_eq) = (f64::INFINITY, 0.0_f64);
    for k in [1usize, 2, 4] {
        for _ in 0..1000 {
            let e = k + 1 + s.below(12);
            let t = 1 + s.below(32);
            let dense = DMatrix::from_fn(t, e, |_, _| (1.5 * s.normal()).exp());
            let dense = DMatrix::from_fn(t, e, |r, c| dense[(r, c)] / dense.row(r).sum());
            let b = RoutingBatch::from_dense_topk(dense, k).unwrap();
            worst = worst.min((k as f64).ln() - topk_conditional_entropy(&b));
        }
        let b = RoutingBatch::from_dense_topk(DMatrix::from_element(4, 8, 0.125), k).unwrap();
        worst_eq = worst_eq.max((topk_conditional_entropy(&b) - (k as f64).ln()).abs());
    }
    outcome(worst >= -1e-9 && worst_eq <= 1e-9, format!("min log k - H {worst:.2e}, uniform-row gap {worst_eq:.2e}"))
}

fn barrier() -> (Outcome, String) {
    let cfg = SweepConfig::default();
    let curve = barrier_sweep(&cfg).unwrap();
    let guaranteed: Vec<usize> = (0..curve.mu_grid.len()).filter(|&g| curve.mu_measured_mean[g] < 1.0 / 11.0).collect();
    let a = !guaranteed.is_empty() && guaranteed.iter().all(|&g| curve.success_rate_greedy[g] == 1.0);
    let last = *curve.success_rate_greedy.last().unwrap();
    let sm = curve.smoothed_greedy();
    let c = sm.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    (
        outcome(
            a && last < 0.5 && c,
            format!(
                "(a) {} points below 1/11 all at 1.0: {a}; (b) success at mu={:.3}: {last:.3}; (c) smoothed non-increasing: {c}",
                guaranteed.len(),
                curve.mu_grid.last().unwrap()
            ),
        ),
        barrier_csv(&curve),
    )
}

fn orthogonal_optimality() -> Outcome {
    let mut mismatches = 0;
    for c in 0..500u64 {
        let mut s = RngSeed(1005).derive(&[c]).stream();
        let n = 2 + s.below(11);
        let d = n + s.below(6);
        let k = 1 + s.below(4.min(n));
        let dict = random_orthonormal_dictionary(d, n, RngSeed(1005).derive(&[c, 1])).unwrap();
        let y = TargetSignal::new(DVector::from_fn(d, |_, _| s.normal()));
        if greedy_topk_select(&dict, &y, k).unwrap() != brute_force_sss(&dict, &y, k).unwrap().support {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches}/500 greedy supports differ from exhaustive"))
}

fn logdet_bounds() -> Outcome {
    let mut violations = 0;
    let mut worst_margin = f64::INFINITY;
    for c in 0..50u64 {
        let kernel =
            random_feature_kernel(3 + (c as usize % 6), 10, DEFAULT_EPSILON, RngSeed(1006).derive(&[c])).unwrap();
        let r = submodularity_audit(&kernel, 1000, RngSeed(1006).derive(&[c, 1])).unwrap();
        violations += r.violations;
        worst_margin = worst_margin.min(r.worst_margin());
    }
    let bound = 1.0 - (-1.0f64).exp();
    let (mut worst_ratio, mut instances) = (f64::INFINITY, 0);
    for n in 2..=12usize {
        for k in 1..=4.min(n) {
            for rep in 0..5u64 {
                let d = [2, 4, 8][rep as usize % 3];
                let kernel =
                    random_feature_kernel(d, n, DEFAULT_EPSILON, RngSeed(1016).derive(&[n as u64, k as u64, rep]))
                        .unwrap();
                worst_ratio = worst_ratio.min(nemhauser_check(&kernel, k).unwrap().ratio);
                instances += 1;
            }
        }
    }
    outcome(
        violations == 0 && worst_ratio >= bound - 1e-9,
        format!("{violations} violations in 50000 chains (worst margin {worst_margin:.2e}); min ratio {worst_ratio:.4} over {instances} instances"),
    )
}

fn ambiguity_identity() -> Outcome {
    let mut s = RngSeed(1007).stream();
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let k = 1 + s.below(8);
        let dim = 1 + s.below(16);
        let outs: Vec<DVector<f64>> = (0..k).map(|_| DVector::from_fn(dim, |_, _| s.normal())).collect();
        let target = DVector::from_fn(dim, |_, _| s.normal());
        worst = worst.max(ambiguity_decomposition(&outs, &target).unwrap().gap);
    }
    outcome(worst <= 1e-10, format!("max gap {worst:.2e}"))
}

fn gradient_correctness() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in RegKind::ALL {
        let cfg = MoEConfig { reg_kind: kind, ..Default::default() };
        let (check, resamples) = check_random_batch(&cfg, 4, RngSeed(1008), 10).unwrap();
        ok &= check.max_rel_err < 1e-4;
        parts.push(format!("{} {:.1e} ({} resamples)", kind.name(), check.max_rel_err, resamples));
    }
    outcome(ok, format!("max relative error per penalty: {}", parts.join(", ")))
}

fn run_arms() -> (Vec<CrossValidation>, String) {
    let ds = synthetic_classification(&SyntheticConfig::default()).unwrap();
    let data = DataSplit::new(ds.features, ds.labels).unwrap();
    let mut csv = String::new();
    let arms: Vec<CrossValidation> = RegKind::ALL
        .iter()
        .map(|&kind| {
            let cv = cross_validate(&MoEConfig { reg_kind: kind, ..Default::default() }, &data).unwrap();
            csv.push_str(&run_csv(&cv.reports));
            csv.push_str(&heatmap_csv(&cv));
            cv
        })
        .collect();
    (arms, csv)
}

fn orderings(arms: &[CrossValidation]) -> Outcome {
    let base = &arms[0];
    let a = base.mean_eff_rank[30] < base.mean_eff_rank[1];
    let b = arms[1].mean_final_eff_rank > base.mean_final_eff_rank;
    let c = arms[1..].iter().all(|cv| cv.mean_final_eff_rank > base.mean_final_eff_rank);
    let d = arms[1].mean_acc >= base.mean_acc - 0.01;
    let e = arms.iter().all(|cv| cv.mean_acc > 0.40);
    let summary: Vec<String> = RegKind::ALL
        .iter()
        .zip(arms)
        .map(|(k, cv)| format!("{} acc {:.3} rank {:.3}", k.name(), cv.mean_acc, cv.mean_final_eff_rank))
        .collect();
    outcome(
        a && b && c && d && e && arms.iter().all(|cv| cv.aborted_folds == 0),
        format!(
            "baseline rank {:.3} -> {:.3}; (a) {a} (b) {b} (c) {c} (d) {d} (e) {e}; {}",
            base.mean_eff_rank[1],
            base.mean_eff_rank[30],
            summary.join("; ")
        ),
    )
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn main() {
    let mut results: Vec<(usize, Outcome, f64)> = Vec::new();
    let mut record = |n: usize, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!("criterion {n:>2}: {} ({secs:.1}s) {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o, secs));
    };

    record(1, &mut sparse_projection_oracle);
    record(2, &mut collision_identity);
    record(3, &mut conditional_entropy_bound);
    let mut barrier_bytes = String::new();
    record(4, &mut || {
        let (o, csv) = barrier();
        barrier_bytes = csv;
        o
    });
    record(5, &mut orthogonal_optimality);
    record(6, &mut logdet_bounds);
    record(7, &mut ambiguity_identity);
    record(8, &mut gradient_correctness);
    let mut train_bytes = String::new();
    record(9, &mut || {
        let (arms, csv) = run_arms();
        train_bytes = csv;
        orderings(&arms)
    });
    record(10, &mut || {
        let barrier_again = in_pool(3, || barrier().1);
        let barrier_single = in_pool(1, || barrier().1);
        let train_again = in_pool(3, || run_arms().1);
        let same_barrier = barrier_again == barrier_bytes && barrier_single == barrier_bytes;
        let same_train = train_again == train_bytes;
        outcome(
            same_barrier && same_train,
            format!(
                "barrier csv identical across runs and 1/3 threads: {same_barrier}; training csv ({} bytes) identical on rerun with 3 threads: {same_train}",
                train_bytes.len()
            ),
        )
    });

    let failed: Vec<usize> = results.iter().filter(|r| !r.1.passed).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
