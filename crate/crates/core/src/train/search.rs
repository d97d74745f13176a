//! Random hyper-parameter search scored by held-out PSNR.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::loss::format_db;
use crate::error::{Error, Result};

/// Ranges for the searched hyper-parameters. Learning rate and table size
/// are drawn log-uniformly, levels and samples uniformly over integers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub learning_rate: [f64; 2],
    pub table_size_log2: [u32; 2],
    pub levels: [usize; 2],
    pub samples: [usize; 2],
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: [1e-3, 3e-2],
            table_size_log2: [14, 19],
            levels: [8, 16],
            samples: [64, 128],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate[0] > 0.0
            && self.learning_rate[0] <= self.learning_rate[1]
            && self.table_size_log2[0] <= self.table_size_log2[1]
            && self.table_size_log2[1] < 32
            && self.levels[0] >= 1
            && self.levels[0] <= self.levels[1]
            && self.samples[0] >= 1
            && self.samples[0] <= self.samples[1];
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid search space {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialParams {
    pub learning_rate: f64,
    pub table_size: u32,
    pub levels: usize,
    pub samples: usize,
}

impl TrialParams {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.learning_rate = self.learning_rate;
        c.final_learning_rate = c.final_learning_rate.min(self.learning_rate);
        c.field.grid.table_size = self.table_size;
        c.field.grid.levels = self.levels;
        c.render.samples = self.samples;
        c
    }
}

pub fn sample_trial(space: &SearchSpace, rng: &mut impl Rng) -> TrialParams {
    let [lo, hi] = space.learning_rate;
    let learning_rate = if lo == hi { lo } else { (rng.random_range(lo.ln()..hi.ln())).exp() };
    TrialParams {
        learning_rate,
        table_size: 1 << rng.random_range(space.table_size_log2[0]..=space.table_size_log2[1]),
        levels: rng.random_range(space.levels[0]..=space.levels[1]),
        samples: rng.random_range(space.samples[0]..=space.samples[1]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub id: usize,
    pub params: TrialParams,
    pub psnr: f64,
    pub wall_seconds: f64,
    pub note: String,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: TrainConfig,
    pub best_trial: usize,
    pub trials: Vec<Trial>,
}

/// Seeded split of `views` indices into (train, held-out); the held-out part
/// is `fraction` of the views, at least one.
pub fn holdout_split(views: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if views < 2 {
        return Err(Error::Config(format!("need at least 2 views to hold one out, have {views}")));
    }
    let mut idx: Vec<usize> = (0..views).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((views as f64 * fraction).round() as usize).clamp(1, views - 1);
    let mut test = idx[..held].to_vec();
    let mut train = idx[held..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Samples `trials` configurations from `space` around `base` and scores
/// each with `evaluate`, which returns the held-out PSNR and an optional
/// note. Returns the highest-scoring configuration.
pub fn random_search(
    base: &TrainConfig,
    space: &SearchSpace,
    trials: usize,
    seed: u64,
    evaluate: &mut dyn FnMut(usize, &TrainConfig) -> Result<(f64, Option<String>)>,
) -> Result<SearchOutcome> {
    if trials == 0 {
        return Err(Error::Config("random search needs at least one trial".into()));
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = Vec::with_capacity(trials);
    for id in 0..trials {
        let params = sample_trial(space, &mut rng);
        let config = params.apply(base);
        config.validate()?;
        let start = Instant::now();
        let (psnr, note) = evaluate(id, &config)?;
        table.push(Trial {
            id,
            params,
            psnr,
            wall_seconds: start.elapsed().as_secs_f64(),
            note: note.unwrap_or_default(),
        });
    }
    let best = table
        .iter()
        .filter(|t| !t.psnr.is_nan())
        .max_by(|a, b| a.psnr.total_cmp(&b.psnr).then(b.id.cmp(&a.id)))
        .unwrap_or(&table[0]);
    Ok(SearchOutcome {
        best: best.params.apply(base),
        best_trial: best.id,
        trials: table,
    })
}

pub fn write_trial_table(trials: &[Trial], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("trial\tlearning_rate\ttable_size\tlevels\tsamples\theldout_psnr_db\twall_s\tnote\n");
    for t in trials {
        let _ = writeln!(
            s,
            "{}\t{:.6e}\t{}\t{}\t{}\t{}\t{:.2}\t{}",
            t.id,
            t.params.learning_rate,
            t.params.table_size,
            t.params.levels,
            t.params.samples,
            format_db(t.psnr),
            t.wall_seconds,
            t.note
        );
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
