use nalgebra::DMatrix;

use super::config::MoEConfig;
use crate::rng::RngSeed;

/// Router and per-expert weight matrices. Gradients and optimizer moments
/// share this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// `E × D`.
    pub router: DMatrix<f64>,
    /// `E` matrices of `hidden × D`.
    pub w_in: Vec<DMatrix<f64>>,
    /// `E` matrices of `C × hidden`.
    pub w_out: Vec<DMatrix<f64>>,
}

impl Weights {
    pub fn zeros(cfg: &MoEConfig) -> Self {
        Self {
            router: DMatrix::zeros(cfg.experts, cfg.input_dim),
            w_in: vec![DMatrix::zeros(cfg.expert_hidden, cfg.input_dim); cfg.experts],
            w_out: vec![DMatrix::zeros(cfg.classes, cfg.expert_hidden); cfg.experts],
        }
    }

    /// He-style init: i.i.d. `N(0, 2/fan_in)` in every matrix.
    pub fn init(cfg: &MoEConfig, seed: RngSeed) -> Self {
        let mut s = seed.stream();
        let mut fill = |rows: usize, cols: usize| {
            let std = (2.0 / cols as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| std * s.normal())
        };
        let router = fill(cfg.experts, cfg.input_dim);
        let mut w_in = Vec::with_capacity(cfg.experts);
        let mut w_out = Vec::with_capacity(cfg.experts);
        for _ in 0..cfg.experts {
            w_in.push(fill(cfg.expert_hidden, cfg.input_dim));
            w_out.push(fill(cfg.classes, cfg.expert_hidden));
        }
        Self { router, w_in, w_out }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            router: DMatrix::zeros(self.router.nrows(), self.router.ncols()),
            w_in: self.w_in.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect(),
            w_out: self.w_out.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect(),
        }
    }

    /// Tensors in a fixed order: router, then `w_in[i]`, `w_out[i]` per expert.
    pub fn tensors(&self) -> Vec<&DMatrix<f64>> {
        let mut out = vec![&self.router];
        for (a, b) in self.w_in.iter().zip(&self.w_out) {
            out.push(a);
            out.push(b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut out = vec![&mut self.router];
        for (a, b) in self.w_in.iter_mut().zip(self.w_out.iter_mut()) {
            out.push(a);
            out.push(b);
        }
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec!["router".to_string()];
        for i in 0..self.w_in.len() {
            out.push(format!("w_in[{i}]"));
            out.push(format!("w_out[{i}]"));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Weights plus AdamW state.
#[derive(Debug, Clone, PartialEq)]
pub struct MoEParams {
    pub weights: Weights,
    pub first_moment: Weights,
    pub second_moment: Weights,
    pub step: u64,
}

impl MoEParams {
    pub fn new(weights: Weights) -> Self {
        Self { first_moment: weights.zeros_like(), second_moment: weights.zeros_like(), weights, step: 0 }
    }

    pub fn init(cfg: &MoEConfig, seed: RngSeed) -> Self {
        Self::new(Weights::init(cfg, seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_and_scale() {
        let cfg = MoEConfig::default();
        let w = Weights::init(&cfg, RngSeed(1));
        assert_eq!(w.router.shape(), (16, 100));
        assert_eq!(w.w_in[3].shape(), (32, 100));
        assert_eq!(w.w_out[15].shape(), (10, 32));
        let var = w.w_in.iter().flat_map(|m| m.iter()).map(|v| v * v).sum::<f64>() / (16.0 * 3200.0);
        assert!((var - 0.02).abs() < 0.001);
        assert_eq!(w.tensors().len(), 33);
        assert_eq!(w.tensor_names()[2], "w_out[0]");
        assert_eq!(Weights::init(&cfg, RngSeed(1)), w);
    }
}
