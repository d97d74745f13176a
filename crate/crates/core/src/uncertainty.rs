//! Bootstrap uncertainty: retrain the same setup under different seeds, render
//! every replica from the same viewpoints and take pixel-wise statistics.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{Aabb, Intrinsics, Pose};
use crate::field::RadianceField;
use crate::image::{save_image, to_grayscale, ImageBuffer};
use crate::render::{render_view, RenderOptions};
use crate::train::{train, TrainConfig, TrainingSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapOptions {
    /// Number of replicas B.
    pub replicas: usize,
    /// Replica `b` trains with seed `base_seed + b`.
    pub base_seed: u64,
    /// Resample training views with replacement per replica, on top of the
    /// seed change.
    pub resample_views: bool,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replicas: 5,
            base_seed: 0,
            resample_views: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Replica {
    pub seed: u64,
    pub field: RadianceField<f32>,
    pub steps: u64,
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaFailure {
    pub seed: u64,
    pub message: String,
}

/// Trained replicas in seed order plus the seeds that failed.
#[derive(Debug, Clone)]
pub struct BootstrapSet {
    pub config: TrainConfig,
    pub replicas: Vec<Replica>,
    pub failures: Vec<ReplicaFailure>,
}

impl BootstrapSet {
    pub fn fields(&self) -> Vec<&RadianceField<f32>> {
        self.replicas.iter().map(|r| &r.field).collect()
    }
}

/// Draws `views.len()` indices with replacement from the replica's seed.
pub fn resample_indices(count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    (0..count).map(|_| rng.random_range(0..count)).collect()
}

/// Trains B replicas one after another, each with the full worker pool. A
/// failing replica is recorded and the rest still run.
pub fn bootstrap_train(
    views: &[(Intrinsics, Pose, ImageBuffer)],
    aabb: &Aabb,
    config: &TrainConfig,
    options: &BootstrapOptions,
) -> Result<BootstrapSet> {
    if options.replicas == 0 {
        return Err(Error::Argument("bootstrap needs at least one replica".into()));
    }
    if views.is_empty() {
        return Err(Error::Argument("bootstrap needs at least one training view".into()));
    }
    config.validate()?;
    let shared = if options.resample_views {
        None
    } else {
        Some(TrainingSet::from_views(views, aabb)?)
    };
    let mut set = BootstrapSet {
        config: config.clone(),
        replicas: Vec::new(),
        failures: Vec::new(),
    };
    for b in 0..options.replicas {
        let seed = options.base_seed.wrapping_add(b as u64);
        let mut cfg = config.clone();
        cfg.seed = seed;
        let outcome = match &shared {
            Some(data) => train(data, &cfg, &mut |_| Ok(())),
            None => {
                let picked: Vec<_> = resample_indices(views.len(), seed)
                    .into_iter()
                    .map(|i| views[i].clone())
                    .collect();
                TrainingSet::from_views(&picked, aabb).and_then(|data| train(&data, &cfg, &mut |_| Ok(())))
            }
        };
        match outcome {
            Ok(out) => {
                log::info!("replica seed {seed}: {} steps in {:.1}s", out.steps, out.elapsed);
                set.replicas.push(Replica {
                    seed,
                    field: out.field,
                    steps: out.steps,
                    elapsed: out.elapsed,
                });
            }
            Err(e) => {
                log::warn!("replica seed {seed} failed: {e}");
                set.failures.push(ReplicaFailure {
                    seed,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(set)
}

/// B grayscale renders of one viewpoint, replica-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaStack {
    slices: Vec<ImageBuffer>,
}

impl ReplicaStack {
    /// All slices must be single-channel and share a shape.
    pub fn new(slices: Vec<ImageBuffer>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Argument("replica stack is empty".into()))?;
        if first.channels() != 1 {
            return Err(Error::Argument("replica stack slices must be grayscale".into()));
        }
        if slices.iter().any(|s| !s.same_shape(first)) {
            return Err(Error::Argument("replica stack slices differ in shape".into()));
        }
        Ok(ReplicaStack { slices })
    }

    pub fn depth(&self) -> usize {
        self.slices.len()
    }

    pub fn width(&self) -> usize {
        self.slices[0].width()
    }

    pub fn height(&self) -> usize {
        self.slices[0].height()
    }

    pub fn slices(&self) -> &[ImageBuffer] {
        &self.slices
    }
}

/// Deterministic render of every replica at every viewpoint, converted to
/// grayscale. One stack per viewpoint.
pub fn render_replicas(
    fields: &[&RadianceField<f32>],
    viewpoints: &[(Intrinsics, Pose)],
    aabb: &Aabb,
    opts: &RenderOptions,
) -> Result<Vec<ReplicaStack>> {
    if fields.is_empty() {
        return Err(Error::Argument("no replicas to render".into()));
    }
    viewpoints
        .iter()
        .map(|(k, pose)| {
            let slices = fields
                .iter()
                .map(|f| render_view(f, k, pose, aabb, opts).map(|v| to_grayscale(&v.image)))
                .collect::<Result<Vec<_>>>()?;
            ReplicaStack::new(slices)
        })
        .collect()
}

/// Expected rendering and pixel-wise spread of one viewpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub mean: ImageBuffer,
    pub sigma: ImageBuffer,
}

/// Mean and population standard deviation along the replica axis. Pixels
/// where every replica agrees get exactly zero spread.
pub fn uncertainty_map(stack: &ReplicaStack) -> UncertaintyMap {
    let (w, h) = (stack.width(), stack.height());
    let b = stack.depth() as f64;
    let mut mean = vec![0f32; w * h];
    let mut sigma = vec![0f32; w * h];
    for p in 0..w * h {
        let first = stack.slices[0].data()[p];
        let mut sum = 0.0;
        let mut agree = true;
        for s in &stack.slices {
            let v = s.data()[p];
            agree &= v == first;
            sum += v as f64;
        }
        if agree {
            mean[p] = first;
            continue;
        }
        let m = sum / b;
        let var = stack
            .slices
            .iter()
            .map(|s| (s.data()[p] as f64 - m).powi(2))
            .sum::<f64>()
            / b;
        mean[p] = m as f32;
        sigma[p] = var.sqrt() as f32;
    }
    UncertaintyMap {
        mean: ImageBuffer::new(w, h, 1, mean).expect("shape from stack"),
        sigma: ImageBuffer::new(w, h, 1, sigma).expect("shape from stack"),
    }
}

/// `frames` poses from `a` to `b` inclusive; a single frame is `a`.
pub fn interpolate_path(a: &Pose, b: &Pose, frames: usize) -> Vec<Pose> {
    match frames {
        0 => Vec::new(),
        1 => vec![*a],
        n => (0..n)
            .map(|i| Pose::interpolate(a, b, i as f64 / (n - 1) as f64))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlythroughSummary {
    pub frames: usize,
    /// Global sigma maximum every sigma frame was divided by (0 when the
    /// whole sequence has no spread).
    pub sigma_scale: f64,
}

pub const SIGMA_SCALE_FILE: &str = "sigma_scale.txt";

pub fn mean_frame_name(i: usize) -> String {
    format!("mean_{i:05}.png")
}

pub fn sigma_frame_name(i: usize) -> String {
    format!("sigma_{i:05}.png")
}

/// Writes numbered mean and sigma frames. Sigma frames share one
/// normalization constant, recorded next to them.
pub fn write_flythrough(maps: &[UncertaintyMap], dir: &Path) -> Result<FlythroughSummary> {
    if maps.is_empty() {
        return Err(Error::Argument("fly-through needs at least one frame".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scale = maps
        .iter()
        .flat_map(|m| m.sigma.data().iter().copied())
        .fold(0f32, f32::max);
    for (i, m) in maps.iter().enumerate() {
        save_image(&m.mean, dir.join(mean_frame_name(i)))?;
        let normalized = if scale > 0.0 {
            m.sigma.map(|v| v / scale)
        } else {
            m.sigma.clone()
        };
        save_image(&normalized, dir.join(sigma_frame_name(i)))?;
    }
    let mut text = String::new();
    let _ = writeln!(text, "{}", scale as f64);
    let path = dir.join(SIGMA_SCALE_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(FlythroughSummary {
        frames: maps.len(),
        sigma_scale: scale as f64,
    })
}

/// Renders the replicas along `path` and writes the frame sequence.
pub fn flythrough(
    fields: &[&RadianceField<f32>],
    intrinsics: &Intrinsics,
    path: &[Pose],
    aabb: &Aabb,
    opts: &RenderOptions,
    dir: &Path,
) -> Result<FlythroughSummary> {
    if path.is_empty() {
        return Err(Error::Argument("fly-through camera path is empty".into()));
    }
    let viewpoints: Vec<_> = path.iter().map(|p| (*intrinsics, *p)).collect();
    let maps: Vec<_> = render_replicas(fields, &viewpoints, aabb, opts)?
        .iter()
        .map(uncertainty_map)
        .collect();
    write_flythrough(&maps, dir)
}
