//! Reverse pass for [`total_loss`](super::total_loss).
//!
//! Top-k selection is piecewise constant, so gradients flow through the
//! renormalized gates and the dense router probabilities but not through the
//! choice of experts. Dispatch fractions `f_i` are likewise held fixed.

use nalgebra::DVector;

use super::config::{MoEConfig, RegKind};
use super::forward::{gelu_grad, ForwardTrace, SampleTrace};
use super::loss::{dpp_kernel, normalized};
use super::params::Weights;
use crate::error::{Error, Result};
use crate::linalg::Ldl;

/// Gradient of the mean objective with respect to every weight.
pub fn backward(w: &Weights, trace: &ForwardTrace, labels: &[usize], cfg: &MoEConfig) -> Result<Weights> {
    if labels.len() != trace.len() || trace.is_empty() {
        return Err(Error::InvalidShape(format!("{} labels for {} samples", labels.len(), trace.len())));
    }
    let b = trace.len() as f64;
    let batch = trace.routing_batch()?;
    let f = batch.dispatch_fractions();
    let aux_scale = cfg.aux_weight * cfg.experts as f64 / b;
    let reg_scale = cfg.reg_weight / b;

    let mut grad = w.zeros_like();
    for (s, &label) in trace.samples.iter().zip(labels) {
        let mut dz = s.class_probs.clone();
        dz[label] -= 1.0;
        dz /= b;

        // Each active expert receives its gate share of dz plus any penalty term.
        let mut dy: Vec<DVector<f64>> = s.gates.iter().map(|&g| &dz * g).collect();
        if cfg.reg_kind != RegKind::None && cfg.reg_weight != 0.0 {
            let dr = regularizer_grad(s, cfg)?;
            for (a, r) in dy.iter_mut().zip(dr) {
                a.axpy(reg_scale, &r, 1.0);
            }
        }

        // Gates w_m = p_m / Σ_S p.
        let mut dp = DVector::from_fn(cfg.experts, |m, _| aux_scale * f[m]);
        let g: Vec<f64> = s.expert_outputs.iter().map(|y| dz.dot(y)).collect();
        let mean_g: f64 = g.iter().zip(&s.gates).map(|(a, b)| a * b).sum();
        let mass: f64 = s.selected.iter().map(|&i| s.router_probs[i]).sum();
        for (&m, &gm) in s.selected.iter().zip(&g) {
            dp[m] += (gm - mean_g) / mass;
        }
        let p = &s.router_probs;
        let dh = p.component_mul(&dp.add_scalar(-dp.dot(p)));
        grad.router.ger(1.0, &dh, &s.input, 1.0);

        for (slot, &i) in s.selected.iter().enumerate() {
            let dyi = &dy[slot];
            grad.w_out[i].ger(1.0, dyi, &s.hidden[slot], 1.0);
            let dpre = (w.w_out[i].tr_mul(dyi)).component_mul(&s.pre_activations[slot].map(gelu_grad));
            grad.w_in[i].ger(1.0, &dpre, &s.input, 1.0);
        }
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(grad)
}

/// Per-sample gradient of the unscaled penalty with respect to each active
/// expert output.
fn regularizer_grad(s: &SampleTrace, cfg: &MoEConfig) -> Result<Vec<DVector<f64>>> {
    let outs = &s.expert_outputs;
    let zero = || DVector::zeros(outs[0].len());
    match cfg.reg_kind {
        RegKind::None => Ok(vec![zero(); outs.len()]),
        RegKind::Ortho => {
            let units = normalized(outs);
            Ok(units
                .iter()
                .enumerate()
                .map(|(i, ui)| {
                    let mut d = zero();
                    if let Some((vi, ni)) = ui {
                        for (j, uj) in units.iter().enumerate() {
                            if let (true, Some((vj, _))) = (i != j, uj) {
                                let c = vi.dot(vj);
                                d += (vj - vi * c) * (4.0 * c / ni);
                            }
                        }
                    }
                    d
                })
                .collect())
        }
        RegKind::Dpp => {
            let (m, units) = dpp_kernel(outs, cfg.dpp_epsilon);
            let ldl = Ldl::factor(&m);
            if ldl.pivots().iter().any(|&p| !p.is_finite() || p < -1e-9) {
                return Err(Error::NotPsd("soft-DPP kernel".into()));
            }
            let inv = ldl.inverse();
            Ok(units
                .iter()
                .enumerate()
                .map(|(i, ui)| {
                    let Some((vi, ni)) = ui else { return zero() };
                    let mut dv = zero();
                    for (j, uj) in units.iter().enumerate() {
                        if let Some((vj, _)) = uj {
                            dv.axpy(-2.0 * inv[(j, i)], vj, 1.0);
                        }
                    }
                    (&dv - vi * vi.dot(&dv)) / *ni
                })
                .collect())
        }
        RegKind::Ncl => {
            let probs: Vec<DVector<f64>> = outs.iter().map(super::forward::softmax).collect();
            let k = probs.len() as f64;
            let mean = probs.iter().fold(zero(), |acc, p| acc + p) / k;
            Ok(probs
                .iter()
                .map(|p| {
                    let dpi = (p - &mean) * -2.0;
                    p.component_mul(&dpi.add_scalar(-dpi.dot(p)))
                })
                .collect())
        }
    }
}
