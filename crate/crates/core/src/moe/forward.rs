use nalgebra::{DMatrix, DVector};

use super::config::MoEConfig;
use super::params::Weights;
use crate::error::{Error, Result};
use crate::infotheory::RoutingBatch;
use crate::sss::top_k_indices;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;

/// Tanh approximation `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

/// Exact derivative of [`gelu`].
pub fn gelu_grad(x: f64) -> f64 {
    let th = (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

pub fn softmax(z: &DVector<f64>) -> DVector<f64> {
    let m = z.max();
    let e = z.map(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

pub(crate) fn log_sum_exp(z: &DVector<f64>) -> f64 {
    let m = z.max();
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Everything one sample's backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub input: DVector<f64>,
    pub router_logits: DVector<f64>,
    pub router_probs: DVector<f64>,
    /// Active experts in descending logit order.
    pub selected: Vec<usize>,
    /// Renormalized gate weights aligned with `selected`.
    pub gates: Vec<f64>,
    pub pre_activations: Vec<DVector<f64>>,
    pub hidden: Vec<DVector<f64>>,
    /// Class-logit outputs of the active experts.
    pub expert_outputs: Vec<DVector<f64>>,
    pub logits: DVector<f64>,
    pub class_probs: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub samples: Vec<SampleTrace>,
    pub experts: usize,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn selections(&self) -> Vec<Vec<usize>> {
        self.samples.iter().map(|s| s.selected.clone()).collect()
    }

    /// Dense router probabilities and selections as a [`RoutingBatch`].
    pub fn routing_batch(&self) -> Result<RoutingBatch> {
        let dense = DMatrix::from_fn(self.len(), self.experts, |t, i| self.samples[t].router_probs[i]);
        RoutingBatch::new(dense, self.selections())
    }
}

/// `W_out⁽ⁱ⁾ · GELU(W_in⁽ⁱ⁾ x)`, with the intermediate vectors.
fn expert_pass(w: &Weights, i: usize, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let pre = &w.w_in[i] * x;
    let hidden = pre.map(gelu);
    let out = &w.w_out[i] * &hidden;
    (pre, hidden, out)
}

pub fn expert_output(w: &Weights, i: usize, x: &DVector<f64>) -> DVector<f64> {
    expert_pass(w, i, x).2
}

/// Router probabilities and the Top-k selection for one input.
pub fn route(w: &Weights, k: usize, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>, Vec<usize>) {
    let logits = &w.router * x;
    let probs = softmax(&logits);
    let selected = top_k_indices(logits.as_slice(), k);
    (logits, probs, selected)
}

/// Forward pass over the rows of `x_batch`.
pub fn forward(w: &Weights, cfg: &MoEConfig, x_batch: &DMatrix<f64>) -> Result<ForwardTrace> {
    if x_batch.ncols() != cfg.input_dim {
        return Err(Error::InvalidShape(format!(
            "batch has {} features, model expects {}",
            x_batch.ncols(),
            cfg.input_dim
        )));
    }
    let mut samples = Vec::with_capacity(x_batch.nrows());
    for row in x_batch.row_iter() {
        let input: DVector<f64> = row.transpose();
        let (router_logits, router_probs, selected) = route(w, cfg.active, &input);
        let mass: f64 = selected.iter().map(|&i| router_probs[i]).sum();
        let gates: Vec<f64> = selected.iter().map(|&i| router_probs[i] / mass).collect();

        let mut pre_activations = Vec::with_capacity(selected.len());
        let mut hidden = Vec::with_capacity(selected.len());
        let mut expert_outputs = Vec::with_capacity(selected.len());
        let mut logits = DVector::zeros(cfg.classes);
        for (&i, &g) in selected.iter().zip(&gates) {
            let (pre, h, out) = expert_pass(w, i, &input);
            logits.axpy(g, &out, 1.0);
            pre_activations.push(pre);
            hidden.push(h);
            expert_outputs.push(out);
        }
        if !logits.iter().all(|v| v.is_finite()) || !mass.is_finite() {
            return Err(Error::NonFinite("forward pass".into()));
        }
        let class_probs = softmax(&logits);
        samples.push(SampleTrace {
            input,
            router_logits,
            router_probs,
            selected,
            gates,
            pre_activations,
            hidden,
            expert_outputs,
            logits,
            class_probs,
        });
    }
    Ok(ForwardTrace { samples, experts: cfg.experts })
}
