//! Central finite-difference audit of [`backward`](super::backward).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backward::backward;
use super::config::MoEConfig;
use super::forward::forward;
use super::loss::total_loss;
use super::params::Weights;
use crate::error::{Error, Result};
use crate::rng::RngSeed;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor so tensors with vanishing gradients compare absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    /// `‖g_an − g_fd‖ / max(‖g_an‖, ‖g_fd‖, floor)`.
    pub rel_err: f64,
    pub analytic_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    /// Some perturbation changed a Top-k selection, so the comparison is void.
    pub selection_flip: bool,
}

/// Compares analytic gradients with `(L(θ+h) − L(θ−h)) / 2h` per entry.
pub fn check_gradients(
    w: &Weights,
    cfg: &MoEConfig,
    x: &DMatrix<f64>,
    labels: &[usize],
    step: f64,
) -> Result<GradCheck> {
    let trace = forward(w, cfg, x)?;
    let base = trace.selections();
    let analytic = backward(w, &trace, labels, cfg)?;

    let coords: Vec<(usize, usize)> =
        w.tensors().iter().enumerate().flat_map(|(t, m)| (0..m.len()).map(move |i| (t, i))).collect();
    let diffs: Vec<(f64, bool)> = coords
        .par_iter()
        .map_init(
            || w.clone(),
            |v, &(t, i)| {
                let orig = v.tensors()[t].as_slice()[i];
                let mut flip = false;
                let mut eval = |value: f64| -> Result<f64> {
                    v.tensors_mut()[t].as_mut_slice()[i] = value;
                    let tr = forward(v, cfg, x)?;
                    flip |= tr.selections() != base;
                    Ok(total_loss(&tr, labels, cfg)?.total)
                };
                let plus = eval(orig + step);
                let minus = eval(orig - step);
                v.tensors_mut()[t].as_mut_slice()[i] = orig;
                Ok(((plus? - minus?) / (2.0 * step), flip))
            },
        )
        .collect::<Result<_>>()?;

    let names = w.tensor_names();
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(names.len());
    for (name, g) in names.into_iter().zip(analytic.tensors()) {
        let fd = &diffs[offset..offset + g.len()];
        offset += g.len();
        let err: f64 = g.iter().zip(fd).map(|(a, (f, _))| (a - f) * (a - f)).sum::<f64>().sqrt();
        let fd_norm: f64 = fd.iter().map(|(f, _)| f * f).sum::<f64>().sqrt();
        let an_norm = g.norm();
        tensors.push(TensorCheck {
            name,
            rel_err: err / an_norm.max(fd_norm).max(REL_ERR_FLOOR),
            analytic_norm: an_norm,
        });
    }
    let max_rel_err = tensors.iter().map(|t| t.rel_err).fold(0.0, f64::max);
    Ok(GradCheck { tensors, max_rel_err, selection_flip: diffs.iter().any(|d| d.1) })
}

/// Random weights and a random `batch`-sample problem, redrawn until no
/// perturbation flips a selection. Returns the check and the attempt index.
pub fn check_random_batch(cfg: &MoEConfig, batch: usize, seed: RngSeed, attempts: usize) -> Result<(GradCheck, usize)> {
    for a in 0..attempts {
        let w = Weights::init(cfg, seed.derive(&[a as u64, 0]));
        let mut s = seed.derive(&[a as u64, 1]).stream();
        let x = DMatrix::from_fn(batch, cfg.input_dim, |_, _| s.normal());
        let labels: Vec<usize> = (0..batch).map(|_| s.below(cfg.classes)).collect();
        let check = check_gradients(&w, cfg, &x, &labels, DEFAULT_STEP)?;
        if !check.selection_flip {
            return Ok((check, a));
        }
    }
    Err(Error::InvalidConfig(format!("every one of {attempts} gradient-check batches flipped a selection")))
}
