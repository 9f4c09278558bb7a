use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngSeed;

/// Decorrelation penalty added to the base objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    #[default]
    None,
    Ortho,
    Ncl,
    Dpp,
}

impl RegKind {
    pub const ALL: [RegKind; 4] = [RegKind::None, RegKind::Ortho, RegKind::Ncl, RegKind::Dpp];

    pub fn name(self) -> &'static str {
        match self {
            RegKind::None => "none",
            RegKind::Ortho => "ortho",
            RegKind::Ncl => "ncl",
            RegKind::Dpp => "dpp",
        }
    }
}

impl std::str::FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RegKind::None),
            "ortho" => Ok(RegKind::Ortho),
            "ncl" => Ok(RegKind::Ncl),
            "dpp" => Ok(RegKind::Dpp),
            other => Err(Error::InvalidConfig(format!("unknown reg kind {other:?}"))),
        }
    }
}

/// Model, optimizer and schedule settings. Defaults reproduce the reference
/// experiment; AdamW moments and decay use conventional values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MoEConfig {
    pub input_dim: usize,
    pub experts: usize,
    pub active: usize,
    pub expert_hidden: usize,
    pub classes: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub aux_weight: f64,
    pub reg_weight: f64,
    pub reg_kind: RegKind,
    pub seed: RngSeed,
    pub dpp_epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub folds: usize,
    /// Training samples used to probe the expert feature space.
    pub probe_size: usize,
}

impl Default for MoEConfig {
    fn default() -> Self {
        Self {
            input_dim: 100,
            experts: 16,
            active: 2,
            expert_hidden: 32,
            classes: 10,
            batch_size: 128,
            lr: 1e-3,
            epochs: 30,
            aux_weight: 0.01,
            reg_weight: 0.1,
            reg_kind: RegKind::None,
            seed: RngSeed(42),
            dpp_epsilon: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            folds: 10,
            probe_size: 256,
        }
    }
}

impl MoEConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if [self.input_dim, self.experts, self.expert_hidden, self.classes, self.batch_size].contains(&0) {
            return bad("dimensions and batch size must be positive".into());
        }
        if self.active == 0 || self.active > self.experts {
            return bad(format!("need 1 <= active <= experts, got {} of {}", self.active, self.experts));
        }
        if self.classes < 2 {
            return bad("need at least two classes".into());
        }
        let nonneg = [
            ("lr", self.lr),
            ("aux_weight", self.aux_weight),
            ("reg_weight", self.reg_weight),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.dpp_epsilon > 0.0) || !(self.adam_eps > 0.0) {
            return bad("dpp_epsilon and adam_eps must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("AdamW betas must lie in [0, 1)".into());
        }
        if self.folds < 2 {
            return bad("need at least two folds".into());
        }
        if self.probe_size == 0 {
            return bad("probe_size must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_reference_values() {
        let c = MoEConfig::default();
        assert_eq!((c.experts, c.active, c.expert_hidden, c.batch_size, c.epochs), (16, 2, 32, 128, 30));
        assert_eq!((c.lr, c.aux_weight, c.reg_weight, c.dpp_epsilon), (1e-3, 0.01, 0.1, 1e-4));
        assert_eq!(c.seed, RngSeed(42));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        assert!(MoEConfig { active: 17, ..Default::default() }.validate().is_err());
        assert!(MoEConfig { lr: -1.0, ..Default::default() }.validate().is_err());
        assert!(MoEConfig { beta2: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn reg_kind_parsing() {
        for k in RegKind::ALL {
            assert_eq!(k.name().parse::<RegKind>().unwrap(), k);
        }
        assert!("l2".parse::<RegKind>().is_err());
    }
}
