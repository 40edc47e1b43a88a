use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::scalar::Scalar;

/// How the collision filter measures overlap between a pseudo box and a
/// sparse annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CollisionMetric {
    /// Intersection volume over the pseudo box volume.
    #[default]
    Fraction,
    Iou,
}

impl FromStr for CollisionMetric {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fraction" => Ok(CollisionMetric::Fraction),
            "iou" => Ok(CollisionMetric::Iou),
            other => Err(ConfigError::BadValue {
                key: "collision_metric".into(),
                value: other.into(),
            }),
        }
    }
}

impl fmt::Display for CollisionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CollisionMetric::Fraction => "fraction",
            CollisionMetric::Iou => "iou",
        })
    }
}

/// Every threshold and hyperparameter of the mining engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct MiningConfig<T: Scalar = f64> {
    /// K
    pub num_classes: usize,
    /// C
    pub feature_dim: usize,
    /// O
    pub protos_per_class: usize,
    /// Sinkhorn temperature.
    pub kappa: T,
    pub sinkhorn_steps: usize,
    /// Prototype momentum coefficient.
    pub mu: T,
    pub warmup_iters: u64,
    pub alpha_pro: T,
    pub alpha_cls: T,
    pub alpha_iou: T,
    pub alpha_col: T,
    /// Temperature of the prototype-feature contrastive loss.
    pub tau_con: T,
    pub collision_metric: CollisionMetric,
    pub seed: u64,
}

impl<T: Scalar> MiningConfig<T> {
    /// Defaults for `num_classes` classes and `feature_dim`-dimensional features.
    pub fn new(num_classes: usize, feature_dim: usize) -> Self {
        Self {
            num_classes,
            feature_dim,
            protos_per_class: 10,
            kappa: T::lit(0.05),
            sinkhorn_steps: 3,
            mu: T::lit(0.9),
            warmup_iters: 1000,
            alpha_pro: T::lit(0.2),
            alpha_cls: T::lit(0.2),
            alpha_iou: T::lit(0.5),
            alpha_col: T::lit(0.2),
            tau_con: T::lit(0.1),
            collision_metric: CollisionMetric::Fraction,
            seed: 0,
        }
    }

    /// Returns the config unchanged when every invariant holds.
    pub fn validate(self) -> Result<Self, ConfigError> {
        if self.num_classes == 0 {
            return Err(ConfigError::ZeroSize("K (num_classes)"));
        }
        if self.feature_dim == 0 {
            return Err(ConfigError::ZeroSize("C (feature_dim)"));
        }
        if self.protos_per_class == 0 {
            return Err(ConfigError::ZeroSize("O (protos_per_class)"));
        }
        if self.sinkhorn_steps == 0 {
            return Err(ConfigError::ZeroSize("sinkhorn_steps"));
        }
        let mu = self.mu.to_f64_lossy();
        if !(0.0..=1.0).contains(&mu) {
            return Err(ConfigError::MomentumOutOfRange(mu));
        }
        for (name, value) in [("kappa", self.kappa), ("tau_con", self.tau_con)] {
            let v = value.to_f64_lossy();
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::NonPositiveTemperature { name, value: v });
            }
        }
        for (name, value) in [
            ("alpha_pro", self.alpha_pro),
            ("alpha_cls", self.alpha_cls),
            ("alpha_iou", self.alpha_iou),
            ("alpha_col", self.alpha_col),
        ] {
            let v = value.to_f64_lossy();
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::ThresholdOutOfRange { name, value: v });
            }
        }
        Ok(self)
    }

    /// Applies one `key = value` setting. Keys mirror the field names; the
    /// dimensions also accept their single-letter names `K`, `C` and `O`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        let float = || -> Result<T, ConfigError> {
            value
                .parse::<f64>()
                .ok()
                .and_then(T::from_f64)
                .ok_or_else(bad)
        };
        let int = || value.parse::<u64>().map_err(|_| bad());
        match key {
            "K" | "num_classes" => self.num_classes = int()? as usize,
            "C" | "feature_dim" => self.feature_dim = int()? as usize,
            "O" | "protos_per_class" => self.protos_per_class = int()? as usize,
            "kappa" => self.kappa = float()?,
            "sinkhorn_steps" => self.sinkhorn_steps = int()? as usize,
            "mu" => self.mu = float()?,
            "warmup_iters" => self.warmup_iters = int()?,
            "alpha_pro" => self.alpha_pro = float()?,
            "alpha_cls" => self.alpha_cls = float()?,
            "alpha_iou" => self.alpha_iou = float()?,
            "alpha_col" => self.alpha_col = float()?,
            "tau_con" => self.tau_con = float()?,
            "collision_metric" => self.collision_metric = value.parse()?,
            "seed" => self.seed = int()?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parses a flat `key = value` document on top of `self`. Blank lines and
    /// `#` comments are ignored.
    pub fn apply_kv(mut self, text: &str) -> Result<Self, ConfigError> {
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::BadValue {
                key: line.to_string(),
                value: String::new(),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(self)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "K = {}\nC = {}\nO = {}\nkappa = {}\nsinkhorn_steps = {}\nmu = {}\nwarmup_iters = {}\n\
             alpha_pro = {}\nalpha_cls = {}\nalpha_iou = {}\nalpha_col = {}\ntau_con = {}\n\
             collision_metric = {}\nseed = {}\n",
            self.num_classes,
            self.feature_dim,
            self.protos_per_class,
            self.kappa,
            self.sinkhorn_steps,
            self.mu,
            self.warmup_iters,
            self.alpha_pro,
            self.alpha_cls,
            self.alpha_iou,
            self.alpha_col,
            self.tau_con,
            self.collision_metric,
            self.seed
        )
    }
}

pub fn validate_config<T: Scalar>(cfg: MiningConfig<T>) -> Result<MiningConfig<T>, ConfigError> {
    cfg.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_accepted() {
        let cfg = MiningConfig::<f64>::new(18, 128);
        assert_eq!(cfg.sinkhorn_steps, 3);
        assert_eq!(cfg.kappa, 0.05);
        assert_eq!(cfg.mu, 0.9);
        assert_eq!(cfg.protos_per_class, 10);
        assert_eq!(cfg.warmup_iters, 1000);
        assert_eq!(
            (cfg.alpha_pro, cfg.alpha_cls, cfg.alpha_iou, cfg.alpha_col),
            (0.2, 0.2, 0.5, 0.2)
        );
        let v = validate_config(cfg.clone()).unwrap();
        assert_eq!(v, cfg);
        assert_eq!(validate_config(v.clone()).unwrap(), v);
    }

    #[test]
    fn rejects_each_violation_distinctly() {
        let base = MiningConfig::<f64>::new(4, 8);

        let err = MiningConfig { mu: 1.5, ..base.clone() }.validate().unwrap_err();
        assert!(err.to_string().contains("momentum out of range"));

        let err = MiningConfig { kappa: 0.0, ..base.clone() }.validate().unwrap_err();
        assert!(err.to_string().contains("temperature must be positive"));

        let err = MiningConfig { alpha_iou: 1.2, ..base.clone() }.validate().unwrap_err();
        assert_eq!(
            err,
            ConfigError::ThresholdOutOfRange {
                name: "alpha_iou",
                value: 1.2
            }
        );

        for (cfg, field) in [
            (MiningConfig { num_classes: 0, ..base.clone() }, "K"),
            (MiningConfig { feature_dim: 0, ..base.clone() }, "C"),
            (MiningConfig { protos_per_class: 0, ..base.clone() }, "O"),
        ] {
            let msg = cfg.validate().unwrap_err().to_string();
            assert!(msg.starts_with(field), "{msg}");
        }
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = MiningConfig::<f64>::new(3, 16);
        cfg.mu = 0.95;
        cfg.collision_metric = CollisionMetric::Iou;
        cfg.seed = 42;
        let parsed = MiningConfig::new(1, 1).apply_kv(&cfg.to_kv()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn kv_rejects_unknown_keys() {
        let err = MiningConfig::<f64>::new(1, 1).apply_kv("lambda = 3").unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey("lambda".into()));
    }
}
