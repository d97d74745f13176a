//! Pipeline configuration: one TOML file with a section per stage.
//!
//! ```toml
//! workspace = "runs/gale"
//!
//! [inputs]
//! urls = "urls.txt"          # fetch manifest
//! images = "images.txt"      # image list for the filter stage
//! colmap_model = "sparse/0"  # cameras.txt + images.txt
//!
//! [filter]
//! blur_threshold = 80.0
//!
//! [train]
//! learning_rate = 0.01
//! seed = 7
//!
//! [search]
//! trials = 8
//!
//! [bootstrap]
//! replicas = 5
//! ```
//!
//! Relative paths resolve against the directory holding the file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::filters::FilterConfig;
use crate::train::{SearchSpace, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputsConfig {
    /// Text file of absolute URLs for `fetch`.
    pub urls: Option<PathBuf>,
    /// Image list for `filter`; defaults to every image under `raw/`.
    pub images: Option<PathBuf>,
    /// COLMAP text model directory for `import-poses`.
    pub colmap_model: Option<PathBuf>,
    /// Where the model's image names resolve; defaults to `raw/`.
    pub colmap_images: Option<PathBuf>,
    /// A native scene manifest to import instead of a COLMAP model.
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Share of views held out from training for rendering and PSNR.
    pub holdout_fraction: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { holdout_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub trials: usize,
    /// Training budget of a single trial, in the `--budget` syntax.
    pub trial_budget: String,
    pub space: SearchSpace,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            trials: 8,
            trial_budget: "60s".into(),
            space: SearchSpace::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replicas: usize,
    pub resample_views: bool,
    /// Frames of the fly-through between the first and last view.
    pub flythrough_frames: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicas: 5,
            resample_views: false,
            flythrough_frames: 30,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub workspace: Option<PathBuf>,
    pub inputs: InputsConfig,
    pub filter: FilterConfig,
    pub train: TrainConfig,
    pub evaluation: EvaluationConfig,
    pub search: SearchConfig,
    pub bootstrap: BootstrapConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.train.validate()?;
        self.search.space.validate()?;
        self.search.trial_budget.parse::<Budget>()?;
        let f = self.evaluation.holdout_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("holdout_fraction {f} must lie in (0, 1)")));
        }
        if self.search.trials == 0 {
            return Err(Error::Config("search needs at least one trial".into()));
        }
        if self.bootstrap.replicas == 0 {
            return Err(Error::Config("bootstrap needs at least one replica".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Loads and validates a config file, resolving its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut().filter(|q| q.is_relative()) {
                *q = base.join(&*q);
            }
        };
        resolve(&mut c.workspace);
        resolve(&mut c.inputs.urls);
        resolve(&mut c.inputs.images);
        resolve(&mut c.inputs.colmap_model);
        resolve(&mut c.inputs.colmap_images);
        resolve(&mut c.inputs.scene);
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// A training budget: wall-clock (`90s`, `5m`, `1h`) or optimizer steps
/// (`2000` or `2000steps`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Seconds(f64),
    Steps(u64),
}

impl Budget {
    /// Replaces the budget of `config`; the other kind becomes unlimited
    /// (steps stay within what TOML integers hold).
    pub fn apply(&self, config: &mut TrainConfig) {
        match *self {
            Budget::Seconds(s) => {
                config.max_seconds = s;
                config.max_steps = i64::MAX as u64;
            }
            Budget::Steps(n) => {
                config.max_steps = n;
                config.max_seconds = f64::INFINITY;
            }
        }
    }
}

impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let bad = || Error::Argument(format!("budget `{s}` is neither a duration (90s, 5m, 1h) nor a step count"));
        if let Some(n) = t.strip_suffix("steps").or_else(|| t.strip_suffix("step")) {
            return n.trim().parse().map(Budget::Steps).map_err(|_| bad());
        }
        if let Ok(n) = t.parse::<u64>() {
            return Ok(Budget::Steps(n));
        }
        let (num, unit) = t.split_at(t.find(|c: char| c.is_ascii_alphabetic()).ok_or_else(bad)?);
        let value: f64 = num.trim().parse().map_err(|_| bad())?;
        let scale = match unit {
            "s" | "sec" => 1.0,
            "m" | "min" => 60.0,
            "h" => 3600.0,
            _ => return Err(bad()),
        };
        if !(value >= 0.0 && value.is_finite()) {
            return Err(bad());
        }
        Ok(Budget::Seconds(value * scale))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budgets_parse() {
        assert_eq!("90s".parse::<Budget>().unwrap(), Budget::Seconds(90.0));
        assert_eq!("5m".parse::<Budget>().unwrap(), Budget::Seconds(300.0));
        assert_eq!("1.5h".parse::<Budget>().unwrap(), Budget::Seconds(5400.0));
        assert_eq!("2000".parse::<Budget>().unwrap(), Budget::Steps(2000));
        assert_eq!("20 steps".parse::<Budget>().unwrap(), Budget::Steps(20));
        for bad in ["", "fast", "-3s", "10d", "s"] {
            assert!(bad.parse::<Budget>().is_err(), "{bad}");
        }
    }

    #[test]
    fn budget_replaces_the_other_limit() {
        let mut c = TrainConfig::default();
        Budget::Steps(10).apply(&mut c);
        assert_eq!((c.max_steps, c.max_seconds), (10, f64::INFINITY));
        Budget::Seconds(5.0).apply(&mut c);
        assert_eq!((c.max_steps, c.max_seconds), (i64::MAX as u64, 5.0));
    }

    #[test]
    fn sections_default_and_round_trip() {
        let c = PipelineConfig::from_toml("[train]\nseed = 9\n[filter]\nblur_threshold = 50.0\n").unwrap();
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.filter.blur_threshold, 50.0);
        assert_eq!(c.bootstrap, BootstrapConfig::default());
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(PipelineConfig::from_toml("[filter]\nblur = 1.0\n"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[evaluation]\nholdout_fraction = 1.0\n"), Err(Error::Config(_))));
        assert!(PipelineConfig::from_toml("[search]\ntrial_budget = \"soon\"\n").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("marf.toml");
        std::fs::write(&path, "workspace = \"ws\"\n[inputs]\nimages = \"list.txt\"\nurls = \"/abs/urls.txt\"\n").unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.workspace.unwrap(), dir.path().join("ws"));
        assert_eq!(c.inputs.images.unwrap(), dir.path().join("list.txt"));
        assert_eq!(c.inputs.urls.unwrap(), PathBuf::from("/abs/urls.txt"));
    }
}
