use super::config::MoEConfig;
use super::params::{MoEParams, Weights};

/// One AdamW update with decoupled weight decay and bias-corrected moments.
pub fn adamw_step(params: &mut MoEParams, grads: &Weights, cfg: &MoEConfig) {
    params.step += 1;
    let t = params.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    let MoEParams { weights, first_moment, second_moment, .. } = params;
    let tensors = weights
        .tensors_mut()
        .into_iter()
        .zip(first_moment.tensors_mut())
        .zip(second_moment.tensors_mut())
        .zip(grads.tensors());
    for (((theta, m), v), g) in tensors {
        for (((th, mi), vi), &gi) in theta.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.iter()) {
            *th *= decay;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            *th -= cfg.lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.adam_eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSeed;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = MoEConfig {
            input_dim: 2,
            experts: 2,
            active: 1,
            expert_hidden: 2,
            classes: 2,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = MoEParams::init(&cfg, RngSeed(1));
        let before = p.weights.clone();
        let mut g = before.zeros_like();
        g.router[(0, 0)] = 3.0;
        g.router[(1, 1)] = -0.01;
        adamw_step(&mut p, &g, &cfg);
        assert_eq!(p.step, 1);
        assert!((before.router[(0, 0)] - p.weights.router[(0, 0)] - cfg.lr).abs() < 1e-10);
        assert!((p.weights.router[(1, 1)] - before.router[(1, 1)] - cfg.lr).abs() < 1e-8);
        assert_eq!(p.weights.w_in, before.w_in);
    }

    #[test]
    fn decay_shrinks_without_gradient() {
        let cfg = MoEConfig { input_dim: 2, experts: 2, active: 1, expert_hidden: 2, classes: 2, ..Default::default() };
        let mut p = MoEParams::init(&cfg, RngSeed(1));
        let before = p.weights.clone();
        let g = before.zeros_like();
        adamw_step(&mut p, &g, &cfg);
        let expected = &before.router * (1.0 - cfg.lr * cfg.weight_decay);
        assert!((p.weights.router - expected).norm() < 1e-15);
    }
}
