use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use moegeo::audit::{check_names, run_checks, Fault};
use moegeo::dictgen::{synthetic_classification, CoefficientLaw, SyntheticConfig};
use moegeo::diversity::{
    dpp_greedy_select, logdet_subset, nemhauser_check, random_feature_kernel, shifted_logdet, Kernel, DEFAULT_EPSILON,
};
use moegeo::export::{barrier_csv, heatmap_csv, run_csv};
use moegeo::infotheory::{
    aux_loss, collision_identity_check, empirical_mi, kl_divergence, kl_sparse_project, mi_lower_bound, renyi2_entropy,
    shannon_entropy, topk_conditional_entropy, CategoricalDist, RoutingBatch,
};
use moegeo::moe::{cross_validate, DataSplit, MoEConfig, RegKind};
use moegeo::sss::{barrier_sweep, binomial, SweepConfig, ENUMERATION_GUARD};
use moegeo::RngSeed;

use crate::config::{prepare_out_dir, write_json, Layered, SEED_ENV};
use crate::error::{CliError, CliResult};

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON file with the command's settings; unknown keys are rejected
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: moegeo-out/<command>]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads [default: available cores]; results do not depend on it
    #[arg(long)]
    parallelism: Option<usize>,
    /// Master seed; wins over MOEGEO_SEED and the config file [default: 42]
    #[arg(long)]
    seed: Option<u64>,
}

/// Loaded config plus the seed that flags or the environment force.
struct Setup {
    layered: Layered,
    seed_override: Option<u64>,
    out: Option<PathBuf>,
}

fn setup(common: &Common) -> CliResult<Setup> {
    let layered = Layered::load(common.config.as_deref())?;
    let env_seed = if std::env::var_os(SEED_ENV).is_some() { layered.seed() } else { None };
    let seed_override = common.seed.or(env_seed);
    if let Some(n) = common.parallelism.or(layered.envelope.parallelism) {
        if n == 0 {
            return Err(CliError::Config("parallelism must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let out = common.out.clone().or_else(|| layered.envelope.out_dir.clone());
    Ok(Setup { layered, seed_override, out })
}

fn out_dir(out: Option<PathBuf>, command: &str) -> PathBuf {
    out.unwrap_or_else(|| Path::new("moegeo-out").join(command))
}

macro_rules! apply {
    ($cfg:expr, $($field:ident <- $flag:expr),+ $(,)?) => {
        $(if let Some(v) = $flag.clone() { $cfg.$field = v; })+
    };
}

#[derive(Args, Debug)]
pub struct BarrierArgs {
    #[command(flatten)]
    common: Common,
    /// Ambient dimension [default: 128]
    #[arg(long)]
    d: Option<usize>,
    /// Dictionary atoms [default: 64]
    #[arg(long)]
    n: Option<usize>,
    /// Planted sparsity [default: 6]
    #[arg(long)]
    k: Option<usize>,
    /// Ascending coherence targets, comma separated [default: 25 points from 0 to 0.95]
    #[arg(long, value_delimiter = ',')]
    mu_grid: Option<Vec<f64>>,
    /// Trials per grid point [default: 200]
    #[arg(long)]
    trials: Option<usize>,
    /// Allowed deviation of realised coherence from each target [default: 0.005]
    #[arg(long)]
    mu_tol: Option<f64>,
    /// Uniform coefficient magnitudes on [LO,HI] instead of random signs
    #[arg(long, value_delimiter = ',', num_args = 2, value_names = ["LO", "HI"])]
    uniform_magnitude: Option<Vec<f64>>,
    /// Also run the exhaustive solver where it is affordable
    #[arg(long)]
    oracle: bool,
}

pub fn barrier(a: BarrierArgs) -> CliResult<u8> {
    let Setup { layered, seed_override, out } = setup(&a.common)?;
    let (mut cfg, raw, _) = layered.finish::<SweepConfig>()?;
    apply!(cfg, d <- a.d, n <- a.n, k <- a.k, mu_grid <- a.mu_grid, trials <- a.trials, mu_tol <- a.mu_tol);
    if let Some(s) = seed_override {
        cfg.seed = RngSeed(s);
    }
    if let Some(v) = a.uniform_magnitude {
        cfg.law = CoefficientLaw::UniformMagnitude { lo: v[0], hi: v[1] };
    }
    cfg.with_oracle |= a.oracle;
    cfg.validate()?;

    let dir = out_dir(out, "barrier");
    prepare_out_dir(&dir, raw.as_deref(), &cfg)?;
    let curve = barrier_sweep(&cfg)?;
    fs::write(dir.join("barrier.csv"), barrier_csv(&curve))?;
    let summary = json!({
        "theoretical_bound": curve.theoretical_bound,
        "largest_full_success_mu": curve.largest_full_success_mu(),
        "mu_grid": curve.mu_grid,
        "mu_measured_mean": curve.mu_measured_mean,
        "success_rate_greedy": curve.success_rate_greedy,
        "success_rate_omp": curve.success_rate_omp,
        "smoothed_greedy": curve.smoothed_greedy(),
        "trials_per_point": curve.trials_per_point,
        "k": curve.k,
        "config": cfg,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "barrier: {} points, bound {:.6}, largest full-success mu {}, wrote {}",
        curve.mu_grid.len(),
        curve.theoretical_bound,
        curve.largest_full_success_mu().map_or("none".into(), |m| format!("{m:.6}")),
        dir.display()
    );
    Ok(0)
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Decorrelation penalty: none, ortho, ncl or dpp [default: none]
    #[arg(long)]
    reg: Option<RegKind>,
    /// Training epochs [default: 30]
    #[arg(long)]
    epochs: Option<usize>,
    /// Cross-validation folds [default: 10]
    #[arg(long)]
    folds: Option<usize>,
    /// Experts E [default: 16]
    #[arg(long)]
    experts: Option<usize>,
    /// Active experts k [default: 2]
    #[arg(long)]
    active: Option<usize>,
    /// Expert hidden width [default: 32]
    #[arg(long)]
    expert_hidden: Option<usize>,
    /// Input dimension D, also the generated feature count [default: 100]
    #[arg(long)]
    input_dim: Option<usize>,
    /// Classes C [default: 10]
    #[arg(long)]
    classes: Option<usize>,
    /// Mini-batch size [default: 128]
    #[arg(long)]
    batch_size: Option<usize>,
    /// AdamW learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Load-balancing weight alpha [default: 0.01]
    #[arg(long)]
    aux_weight: Option<f64>,
    /// Penalty weight lambda [default: 0.1]
    #[arg(long)]
    reg_weight: Option<f64>,
    /// Ridge added to the soft-DPP Gram [default: 0.0001]
    #[arg(long)]
    dpp_epsilon: Option<f64>,
    /// AdamW decoupled weight decay [default: 0.01]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Probe samples for the effective rank [default: 256]
    #[arg(long)]
    probe_size: Option<usize>,
    /// Generated samples [default: 4000]
    #[arg(long)]
    samples: Option<usize>,
    /// Informative features [default: 10]
    #[arg(long)]
    informative: Option<usize>,
    /// Class centroid scale [default: 0.6]
    #[arg(long)]
    class_sep: Option<f64>,
}

#[derive(Serialize)]
struct TrainResolved<'a> {
    #[serde(flatten)]
    model: &'a MoEConfig,
    data: &'a SyntheticConfig,
}

pub fn train(a: TrainArgs) -> CliResult<u8> {
    let Setup { mut layered, seed_override, out } = setup(&a.common)?;
    let data_cfg = layered.take::<SyntheticConfig>("data")?;
    let (mut cfg, raw, _) = layered.finish::<MoEConfig>()?;
    apply!(cfg,
        reg_kind <- a.reg, epochs <- a.epochs, folds <- a.folds, experts <- a.experts, active <- a.active,
        expert_hidden <- a.expert_hidden, input_dim <- a.input_dim, classes <- a.classes,
        batch_size <- a.batch_size, lr <- a.lr, aux_weight <- a.aux_weight, reg_weight <- a.reg_weight,
        dpp_epsilon <- a.dpp_epsilon, weight_decay <- a.weight_decay, probe_size <- a.probe_size,
    );
    if let Some(s) = seed_override {
        cfg.seed = RngSeed(s);
    }
    let explicit_data = data_cfg.is_some();
    let mut data = data_cfg.unwrap_or_else(|| SyntheticConfig { seed: cfg.seed, ..Default::default() });
    if !explicit_data || a.input_dim.is_some() {
        data.features = cfg.input_dim;
    }
    if !explicit_data || a.classes.is_some() {
        data.classes = cfg.classes;
    }
    if let Some(s) = seed_override {
        data.seed = RngSeed(s);
    }
    apply!(data, samples <- a.samples, informative <- a.informative, class_sep <- a.class_sep);
    if data.features != cfg.input_dim || data.classes != cfg.classes {
        return Err(CliError::Config("data.features and data.classes must equal input_dim and classes".into()));
    }
    cfg.validate()?;

    let dir = out_dir(out, "train");
    prepare_out_dir(&dir, raw.as_deref(), &TrainResolved { model: &cfg, data: &data })?;
    let ds = synthetic_classification(&data)?;
    let split = DataSplit::new(ds.features, ds.labels)?;
    let cv = cross_validate(&cfg, &split)?;
    fs::write(dir.join("run.csv"), run_csv(&cv.reports))?;
    fs::write(dir.join("heatmap.csv"), heatmap_csv(&cv))?;
    let aggregate = json!({
        "reg_kind": cfg.reg_kind,
        "folds": cv.reports.len(),
        "mean_acc": cv.mean_acc,
        "std_acc": cv.std_acc,
        "fold_acc": cv.reports.iter().map(|r| r.last().test_acc).collect::<Vec<_>>(),
        "mean_final_eff_rank": cv.mean_final_eff_rank,
        "mean_eff_rank": cv.mean_eff_rank,
        "mean_heatmap_entropy": cv.mean_heatmap_entropy,
        "aborted_folds": cv.aborted_folds,
        "aborts": cv.reports.iter().filter_map(|r| r.aborted.as_ref().map(|m| json!({"fold": r.fold, "reason": m}))).collect::<Vec<_>>(),
        "config": TrainResolved { model: &cfg, data: &data },
    });
    write_json(&dir.join("aggregate.json"), &aggregate)?;
    println!(
        "train[{}]: accuracy {:.4} +/- {:.4}, final effective rank {:.4}, wrote {}",
        cfg.reg_kind.name(),
        cv.mean_acc,
        cv.std_acc,
        cv.mean_final_eff_rank,
        dir.display()
    );
    if cv.aborted_folds > 0 {
        return Err(CliError::Numerical(format!("{} folds diverged; see aggregate.json", cv.aborted_folds)));
    }
    Ok(0)
}

/// Prints a JSON report and also stores it when an output directory is set.
fn emit<T: Serialize>(
    out: Option<PathBuf>,
    raw: Option<&str>,
    resolved: &impl Serialize,
    file: &str,
    report: &T,
) -> CliResult<()> {
    println!("{}", crate::config::to_json(report)?);
    if let Some(dir) = out {
        prepare_out_dir(&dir, raw, resolved)?;
        write_json(&dir.join(file), report)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct KlConfig {
    /// Nonnegative weights, normalized before use; random when absent.
    probs: Option<Vec<f64>>,
    experts: usize,
    k: usize,
    seed: RngSeed,
}

impl Default for KlConfig {
    fn default() -> Self {
        Self { probs: None, experts: 16, k: 2, seed: RngSeed(42) }
    }
}

#[derive(Args, Debug)]
pub struct KlArgs {
    #[command(flatten)]
    common: Common,
    /// Routing weights, comma separated; normalized before use [default: random]
    #[arg(long, value_delimiter = ',')]
    probs: Option<Vec<f64>>,
    /// Experts when drawing a random distribution [default: 16]
    #[arg(long)]
    experts: Option<usize>,
    /// Experts kept [default: 2]
    #[arg(long)]
    k: Option<usize>,
}

fn random_probs(e: usize, seed: RngSeed) -> Vec<f64> {
    let mut s = seed.stream();
    (0..e).map(|_| s.normal().exp()).collect()
}

pub fn kl_project(a: KlArgs) -> CliResult<u8> {
    let Setup { layered, seed_override, out } = setup(&a.common)?;
    let (mut cfg, raw, _) = layered.finish::<KlConfig>()?;
    apply!(cfg, experts <- a.experts, k <- a.k);
    if a.probs.is_some() {
        cfg.probs = a.probs;
    }
    if let Some(s) = seed_override {
        cfg.seed = RngSeed(s);
    }
    let weights = cfg.probs.clone().unwrap_or_else(|| random_probs(cfg.experts, cfg.seed));
    let p = CategoricalDist::from_weights(&weights)?;
    let proj = kl_sparse_project(&p, cfg.k)?;
    let report = json!({
        "p": p.probs(),
        "k": cfg.k,
        "support": proj.support,
        "q": proj.q.probs(),
        "kl": proj.kl,
        "kl_direct": kl_divergence(proj.q.probs(), p.probs()),
        "kept_mass": (-proj.kl).exp(),
        "entropy": shannon_entropy(p.probs()),
        "renyi2_entropy": renyi2_entropy(&p),
    });
    emit(out, raw.as_deref(), &cfg, "kl_project.json", &report)?;
    Ok(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DppConfig {
    d: usize,
    n: usize,
    k: usize,
    epsilon: f64,
    seed: RngSeed,
    /// Unit-diagonal similarity matrix; random unit features when absent.
    gram: Option<Vec<Vec<f64>>>,
}

impl Default for DppConfig {
    fn default() -> Self {
        Self { d: 8, n: 12, k: 4, epsilon: DEFAULT_EPSILON, seed: RngSeed(42), gram: None }
    }
}

#[derive(Args, Debug)]
pub struct DppArgs {
    #[command(flatten)]
    common: Common,
    /// Feature dimension of the random kernel [default: 8]
    #[arg(long)]
    d: Option<usize>,
    /// Candidates [default: 12]
    #[arg(long)]
    n: Option<usize>,
    /// Items selected [default: 4]
    #[arg(long)]
    k: Option<usize>,
    /// Ridge epsilon [default: 0.0001]
    #[arg(long)]
    epsilon: Option<f64>,
}

pub fn dpp_select(a: DppArgs) -> CliResult<u8> {
    let Setup { layered, seed_override, out } = setup(&a.common)?;
    let (mut cfg, raw, _) = layered.finish::<DppConfig>()?;
    apply!(cfg, d <- a.d, n <- a.n, k <- a.k, epsilon <- a.epsilon);
    if let Some(s) = seed_override {
        cfg.seed = RngSeed(s);
    }
    let kernel = match &cfg.gram {
        Some(rows) => {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(CliError::Config("gram must be square".into()));
            }
            Kernel::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]), cfg.epsilon)?
        }
        None => random_feature_kernel(cfg.d, cfg.n, cfg.epsilon, cfg.seed)?,
    };
    let order = dpp_greedy_select(&kernel, cfg.k)?;
    let mut report = json!({
        "k": cfg.k,
        "greedy_order": order,
        "logdet": logdet_subset(&kernel, &order)?,
        "shifted_value": shifted_logdet(&kernel, &order)?,
    });
    if binomial(kernel.size(), cfg.k) <= ENUMERATION_GUARD {
        let nem = nemhauser_check(&kernel, cfg.k)?;
        report["optimum"] = json!(nem.optimum);
        report["optimum_value"] = json!(nem.optimum_value);
        report["ratio"] = json!(nem.ratio);
        report["guarantee"] = json!(1.0 - (-1.0f64).exp());
    }
    emit(out, raw.as_deref(), &cfg, "dpp_select.json", &report)?;
    Ok(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct InfoConfig {
    experts: usize,
    k: usize,
    tokens: usize,
    /// Scale of the Gaussian router logits.
    temperature: f64,
    seed: RngSeed,
}

impl Default for InfoConfig {
    fn default() -> Self {
        Self { experts: 16, k: 2, tokens: 1024, temperature: 1.0, seed: RngSeed(42) }
    }
}

#[derive(Args, Debug)]
pub struct InfoArgs {
    #[command(flatten)]
    common: Common,
    /// Experts E [default: 16]
    #[arg(long)]
    experts: Option<usize>,
    /// Active experts k [default: 2]
    #[arg(long)]
    k: Option<usize>,
    /// Tokens in the batch [default: 1024]
    #[arg(long)]
    tokens: Option<usize>,
    /// Standard deviation of the router logits [default: 1]
    #[arg(long)]
    temperature: Option<f64>,
}

pub fn info(a: InfoArgs) -> CliResult<u8> {
    let Setup { layered, seed_override, out } = setup(&a.common)?;
    let (mut cfg, raw, _) = layered.finish::<InfoConfig>()?;
    apply!(cfg, experts <- a.experts, k <- a.k, tokens <- a.tokens, temperature <- a.temperature);
    if let Some(s) = seed_override {
        cfg.seed = RngSeed(s);
    }
    if cfg.tokens == 0 || cfg.experts == 0 {
        return Err(CliError::Config("tokens and experts must be >= 1".into()));
    }
    let mut s = cfg.seed.stream();
    let mut dense = DMatrix::zeros(cfg.tokens, cfg.experts);
    for t in 0..cfg.tokens {
        let logits: Vec<f64> = (0..cfg.experts).map(|_| cfg.temperature * s.normal()).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        for (i, l) in logits.iter().enumerate() {
            dense[(t, i)] = (l - m).exp() / z;
        }
    }
    let batch = RoutingBatch::from_dense_topk(dense, cfg.k)?;
    let id = collision_identity_check(&batch)?;
    let mi = empirical_mi(&batch);
    let report = json!({
        "experts": cfg.experts,
        "k": cfg.k,
        "tokens": cfg.tokens,
        "aux_loss": aux_loss(&batch),
        "dispatch_fractions": batch.dispatch_fractions(),
        "mean_probs": batch.mean_probs(),
        "collision": { "lhs": id.lhs, "rhs": id.rhs, "gap": id.gap, "floor": 1.0 },
        "conditional_entropy": topk_conditional_entropy(&batch),
        "log_k": (cfg.k as f64).ln(),
        "marginal_entropy": mi.h_z,
        "mutual_information": mi.mi,
        "mi_lower_bound_balanced": mi_lower_bound(cfg.experts, cfg.k).ok(),
    });
    emit(out, raw.as_deref(), &cfg, "info.json", &report)?;
    Ok(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct VerifyConfig {
    seed: RngSeed,
    checks: Vec<String>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { seed: RngSeed(42), checks: Vec::new() }
    }
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Run only these checks, comma separated [default: all]
    #[arg(long, value_delimiter = ',')]
    checks: Option<Vec<String>>,
    /// Print the available check names and exit
    #[arg(long)]
    list: bool,
    /// Deliberately break one computation to exercise the harness
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

pub fn verify(a: VerifyArgs) -> CliResult<u8> {
    if a.list {
        check_names().iter().for_each(|n| println!("{n}"));
        return Ok(0);
    }
    let Setup { layered, seed_override, out } = setup(&a.common)?;
    let (mut cfg, raw, _) = layered.finish::<VerifyConfig>()?;
    apply!(cfg, checks <- a.checks);
    if let Some(s) = seed_override {
        cfg.seed = RngSeed(s);
    }
    let fault = match a.inject_fault.as_deref() {
        None => None,
        Some("kl-sign") => Some(Fault::KlSign),
        Some(other) => return Err(CliError::Config(format!("unknown fault {other:?}"))),
    };
    let results = run_checks(&cfg.checks, cfg.seed, fault)?;
    let passed = results.iter().all(|r| r.passed);
    let dir = out_dir(out, "verify");
    prepare_out_dir(&dir, raw.as_deref(), &cfg)?;
    write_json(&dir.join("verify.json"), &json!({ "passed": passed, "seed": cfg.seed, "checks": results }))?;
    for r in &results {
        println!(
            "{:<26} {} worst margin {:.3e} over {} cases",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.worst_margin,
            r.cases
        );
    }
    Ok(if passed { 0 } else { 1 })
}
