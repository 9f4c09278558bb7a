//! Mini-batch training, per-epoch diagnostics and stratified cross-validation.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backward::backward;
use super::config::{MoEConfig, RegKind};
use super::forward::forward;
use super::loss::{total_loss, LossComponents};
use super::metrics::{
    effective_rank_of_matrix, expert_output_matrix, routing_stats, row_coherence, specialization_heatmap,
};
use super::optim::adamw_step;
use super::params::MoEParams;
use crate::error::{Error, Result};
use crate::infotheory::shannon_entropy;
use crate::rng::RngSeed;

const SPLIT_TAG: u64 = 0x5917;
const FOLD_TAG: u64 = 0xF01D;
const INIT: u64 = 0;
const PROBE: u64 = 1;
const SHUFFLE: u64 = 2;

/// Rows of a labelled design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl DataSplit {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() || labels.is_empty() {
            return Err(Error::InvalidShape(format!("{} rows, {} labels", features.nrows(), labels.len())));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> DataSplit {
        DataSplit {
            features: self.features.select_rows(idx.iter()),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Test indices for each fold. Each class is shuffled on its own and then
/// dealt round-robin with one counter shared across classes, so fold sizes
/// and per-class counts differ by at most one.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: RngSeed) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > labels.len() {
        return Err(Error::InvalidConfig(format!("cannot split {} samples into {folds} folds", labels.len())));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); folds];
    let mut counter = 0;
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        seed.derive(&[c as u64]).stream().shuffle(&mut members);
        for i in members {
            out[counter % folds].push(i);
            counter += 1;
        }
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    Ok(out)
}

/// Metrics after `epoch` passes over the training split; epoch 0 is the
/// initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss components over the epoch's batches.
    pub loss_task: f64,
    pub loss_aux: f64,
    pub loss_reg: f64,
    pub test_acc: f64,
    pub eff_rank: f64,
    /// Largest cosine between the experts' probe-output rows.
    pub coherence: f64,
    /// Routing statistics on the test split.
    pub marg_entropy: f64,
    pub cond_entropy: f64,
    pub collision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub fold: usize,
    pub reg_kind: RegKind,
    pub records: Vec<EpochRecord>,
    /// `E × C` rows of [`specialization_heatmap`] on the test split.
    pub heatmap: Vec<Vec<f64>>,
    /// Divergence diagnostic when the fold stopped early.
    pub aborted: Option<String>,
}

impl TrainReport {
    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("a report always holds the init record")
    }

    /// Mean over classes of the entropy of each heatmap column scaled to sum to one.
    pub fn heatmap_column_entropy(&self) -> f64 {
        let classes = self.heatmap.first().map_or(0, |r| r.len());
        let mut total = 0.0;
        for c in 0..classes {
            let col: Vec<f64> = self.heatmap.iter().map(|r| r[c]).collect();
            let s: f64 = col.iter().sum();
            if s > 0.0 {
                total += shannon_entropy(&col.iter().map(|v| v / s).collect::<Vec<_>>());
            }
        }
        total / classes.max(1) as f64
    }
}

fn accuracy(params: &MoEParams, cfg: &MoEConfig, split: &DataSplit) -> Result<(f64, super::forward::ForwardTrace)> {
    let trace = forward(&params.weights, cfg, &split.features)?;
    let hits = trace.samples.iter().zip(&split.labels).filter(|(s, &y)| s.class_probs.argmax().0 == y).count();
    Ok((hits as f64 / split.len() as f64, trace))
}

fn evaluate(
    params: &MoEParams,
    cfg: &MoEConfig,
    test: &DataSplit,
    probe: &DMatrix<f64>,
    epoch: usize,
    loss: LossComponents,
) -> Result<EpochRecord> {
    let (test_acc, trace) = accuracy(params, cfg, test)?;
    let stats = routing_stats(&trace)?;
    let m = expert_output_matrix(&params.weights, probe);
    Ok(EpochRecord {
        epoch,
        loss_task: loss.task,
        loss_aux: loss.aux,
        loss_reg: loss.reg,
        test_acc,
        eff_rank: effective_rank_of_matrix(&m)?,
        coherence: row_coherence(&m),
        marg_entropy: stats.marg_entropy,
        cond_entropy: stats.cond_entropy,
        collision: stats.collision,
    })
}

fn run_epochs(
    cfg: &MoEConfig,
    train: &DataSplit,
    test: &DataSplit,
    fold: usize,
    params: &mut MoEParams,
    probe: &DMatrix<f64>,
    records: &mut Vec<EpochRecord>,
) -> Result<()> {
    let fseed = cfg.seed.derive(&[FOLD_TAG, fold as u64]);
    let init_loss = total_loss(&forward(&params.weights, cfg, &train.features)?, &train.labels, cfg)?;
    records.push(evaluate(params, cfg, test, probe, 0, init_loss)?);

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        fseed.derive(&[SHUFFLE, epoch as u64]).stream().shuffle(&mut order);
        let mut sum = LossComponents::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.subset(chunk);
            let trace = forward(&params.weights, cfg, &batch.features)?;
            let l = total_loss(&trace, &batch.labels, cfg)?;
            let grads = backward(&params.weights, &trace, &batch.labels, cfg)?;
            adamw_step(params, &grads, cfg);
            let share = chunk.len() as f64 / train.len() as f64;
            sum.task += share * l.task;
            sum.aux += share * l.aux;
            sum.reg += share * l.reg;
            sum.total += share * l.total;
        }
        if !params.weights.is_finite() {
            return Err(Error::NonFinite(format!("weights after epoch {epoch}")));
        }
        records.push(evaluate(params, cfg, test, probe, epoch, sum)?);
    }
    Ok(())
}

/// Trains one fold from scratch. Deterministic in `(cfg.seed, fold)`.
pub fn train_fold(cfg: &MoEConfig, train: &DataSplit, test: &DataSplit, fold: usize) -> Result<TrainReport> {
    cfg.validate()?;
    for split in [train, test] {
        if split.features.ncols() != cfg.input_dim || split.labels.iter().any(|&y| y >= cfg.classes) {
            return Err(Error::InvalidShape("split does not match the model shape".into()));
        }
    }
    let fseed = cfg.seed.derive(&[FOLD_TAG, fold as u64]);
    let mut params = MoEParams::init(cfg, fseed.derive(&[INIT]));
    let probe_rows = fseed.derive(&[PROBE]).stream().subset(train.len(), cfg.probe_size.min(train.len()));
    let probe = train.features.select_rows(probe_rows.iter());

    let mut records = Vec::with_capacity(cfg.epochs + 1);
    let aborted = match run_epochs(cfg, train, test, fold, &mut params, &probe, &mut records) {
        Ok(()) => None,
        Err(Error::NonFinite(what)) if !records.is_empty() => Some(format!("non-finite {what}")),
        Err(e) => return Err(e),
    };
    let heatmap = specialization_heatmap(&params.weights, cfg, &test.features, &test.labels)
        .map(|h| h.row_iter().map(|r| r.iter().copied().collect()).collect())
        .unwrap_or_default();
    Ok(TrainReport { fold, reg_kind: cfg.reg_kind, records, heatmap, aborted })
}

/// Fold reports in fold order plus exact aggregates of their final records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub reports: Vec<TrainReport>,
    pub mean_acc: f64,
    /// Population standard deviation over folds.
    pub std_acc: f64,
    /// Mean effective rank per epoch over folds that reached that epoch.
    pub mean_eff_rank: Vec<f64>,
    pub mean_final_eff_rank: f64,
    pub mean_heatmap_entropy: f64,
    pub aborted_folds: usize,
}

pub fn cross_validate(cfg: &MoEConfig, data: &DataSplit) -> Result<CrossValidation> {
    cfg.validate()?;
    let folds = stratified_folds(&data.labels, cfg.folds, cfg.seed.derive(&[SPLIT_TAG]))?;
    let reports = (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let test_idx = &folds[f];
            let mut in_test = vec![false; data.len()];
            test_idx.iter().for_each(|&i| in_test[i] = true);
            let train_idx: Vec<usize> = (0..data.len()).filter(|&i| !in_test[i]).collect();
            train_fold(cfg, &data.subset(&train_idx), &data.subset(test_idx), f)
        })
        .collect::<Result<Vec<_>>>()?;

    let n = reports.len() as f64;
    let accs: Vec<f64> = reports.iter().map(|r| r.last().test_acc).collect();
    let mean_acc = accs.iter().sum::<f64>() / n;
    let std_acc = (accs.iter().map(|a| (a - mean_acc).powi(2)).sum::<f64>() / n).sqrt();
    let longest = reports.iter().map(|r| r.records.len()).max().unwrap_or(0);
    let mean_eff_rank = (0..longest)
        .map(|e| {
            let vals: Vec<f64> = reports.iter().filter_map(|r| r.records.get(e)).map(|x| x.eff_rank).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();
    Ok(CrossValidation {
        mean_acc,
        std_acc,
        mean_eff_rank,
        mean_final_eff_rank: reports.iter().map(|r| r.last().eff_rank).sum::<f64>() / n,
        mean_heatmap_entropy: reports.iter().map(|r| r.heatmap_column_entropy()).sum::<f64>() / n,
        aborted_folds: reports.iter().filter(|r| r.aborted.is_some()).count(),
        reports,
    })
}
