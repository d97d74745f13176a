use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::render::RenderOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate reached at the end of the cosine schedule.
    pub final_learning_rate: f64,
    /// Rays per optimizer step.
    pub batch_rays: usize,
    pub max_steps: u64,
    /// Wall-clock budget in seconds (`inf` for none); ignored in
    /// deterministic mode.
    pub max_seconds: f64,
    pub seed: u64,
    pub deterministic: bool,
    /// Stratified random sample placement; bin centres when off.
    pub jitter: bool,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    /// Elapsed times (seconds) at which snapshots are taken.
    pub snapshot_seconds: Vec<f64>,
    pub render: RenderOptions,
    pub field: FieldConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            final_learning_rate: 1e-4,
            batch_rays: 256,
            max_steps: 20_000,
            max_seconds: 300.0,
            seed: 0,
            deterministic: false,
            jitter: true,
            threads: 0,
            snapshot_seconds: vec![10.0, 60.0, 300.0, 600.0, 900.0],
            render: RenderOptions::default(),
            field: FieldConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(self.final_learning_rate >= 0.0 && self.final_learning_rate <= self.learning_rate.max(self.final_learning_rate)) {
            return Err(Error::Config(format!("invalid final learning rate {}", self.final_learning_rate)));
        }
        if self.batch_rays == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.max_seconds >= 0.0) {
            return Err(Error::Config(format!("invalid time budget {}", self.max_seconds)));
        }
        self.render.validate()?;
        self.field.validate()
    }

    /// TOML rendering used inside checkpoints and for config hashes.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Learning rate at training progress `p` in `[0, 1]`.
    pub fn learning_rate_at(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        self.final_learning_rate
            + 0.5 * (self.learning_rate - self.final_learning_rate) * (1.0 + (std::f64::consts::PI * p).cos())
    }

    /// The time budget that applies: none in deterministic mode.
    pub fn effective_seconds(&self) -> Option<f64> {
        if self.deterministic || self.max_seconds.is_infinite() {
            None
        } else {
            Some(self.max_seconds)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = TrainConfig::default();
        c.seed = 42;
        c.render.background = [0.1, 0.2, 0.3];
        c.field.grid.levels = 8;
        c.max_seconds = f64::INFINITY;
        let back = TrainConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let c = TrainConfig::from_toml("seed = 3\n[field.grid]\nlevels = 4\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.field.grid.levels, 4);
        assert_eq!(c.batch_rays, TrainConfig::default().batch_rays);
    }

    #[test]
    fn schedule_endpoints() {
        let c = TrainConfig::default();
        assert!((c.learning_rate_at(0.0) - 1e-2).abs() < 1e-15);
        assert!((c.learning_rate_at(1.0) - 1e-4).abs() < 1e-15);
        assert!(c.learning_rate_at(0.3) > c.learning_rate_at(0.6));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::from_toml("batch_rays = 0").is_err());
        assert!(TrainConfig::from_toml("[field.grid]\ntable_size = 1000").is_err());
        assert!(TrainConfig::from_toml("learning_rate = -1.0").is_err());
    }
}
