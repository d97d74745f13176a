use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{Adam, AdamState};
use super::config::TrainConfig;
use super::loss::{psnr, scene_psnr};
use crate::camera::{pixel_ray, Aabb, Intrinsics, Pose, SceneManifest};
use crate::error::{Error, Result};
use crate::field::{FieldGradient, RadianceField};
use crate::image::{load_image, ImageBuffer};
use crate::render::{render_view, MarchRay, RayBatch, RenderOptions};

/// Rays per parallel work item; gradients are merged in chunk order.
const CHUNK_RAYS: usize = 256;

/// Every training pixel whose ray crosses the scene box, with its colour.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub rays: Vec<MarchRay<f32>>,
    pub colors: Vec<[f32; 3]>,
    pub aabb: Aabb,
    pub views: usize,
}

impl TrainingSet {
    pub fn from_views(views: &[(Intrinsics, Pose, ImageBuffer)], aabb: &Aabb) -> Result<Self> {
        aabb.validate()?;
        let mut rays = Vec::new();
        let mut colors = Vec::new();
        for (i, (k, pose, img)) in views.iter().enumerate() {
            if img.width() != k.width as usize || img.height() != k.height as usize {
                return Err(Error::Config(format!(
                    "view {i}: image is {}x{} but its camera is {}x{}",
                    img.width(),
                    img.height(),
                    k.width,
                    k.height
                )));
            }
            for y in 0..k.height {
                for x in 0..k.width {
                    let Some(r) = pixel_ray(k, pose, x, y, aabb) else { continue };
                    let Some(m) = MarchRay::new(&r.origin, &r.direction, aabb) else { continue };
                    let p = img.pixel(x as usize, y as usize);
                    rays.push(m);
                    colors.push(if p.len() == 3 { [p[0], p[1], p[2]] } else { [p[0]; 3] });
                }
            }
        }
        if rays.is_empty() {
            return Err(Error::Config("no training ray intersects the scene bounds".into()));
        }
        Ok(TrainingSet {
            rays,
            colors,
            aabb: *aabb,
            views: views.len(),
        })
    }

    /// Loads every image of `manifest` and checks it against its camera.
    pub fn load(manifest: &SceneManifest) -> Result<Self> {
        manifest.validate()?;
        let views = load_views(manifest)?;
        Self::from_views(&views, &manifest.aabb)
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

pub fn load_views(manifest: &SceneManifest) -> Result<Vec<(Intrinsics, Pose, ImageBuffer)>> {
    manifest
        .entries
        .par_iter()
        .map(|e| Ok((e.intrinsics, e.pose, load_image(&e.path)?)))
        .collect()
}

struct Chunk {
    batch: RayBatch<f32>,
    rays: Vec<MarchRay<f32>>,
    d_colors: Vec<[f32; 3]>,
    g_density: Vec<f32>,
    g_color: Vec<f32>,
    loss: f64,
}

/// Optimizer state around a field.
pub struct Trainer {
    config: TrainConfig,
    field: RadianceField<f32>,
    grad: FieldGradient<f32>,
    adam: Adam,
    density_state: AdamState<f32>,
    color_state: AdamState<f32>,
    grid_state: AdamState<f32>,
    chunks: Vec<Chunk>,
    rng: ChaCha8Rng,
    pool: rayon::ThreadPool,
    step: u64,
    loss_ema: Option<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let field = RadianceField::new(config.field, config.seed)?;
        Self::with_field(config, field)
    }

    pub fn with_field(config: TrainConfig, field: RadianceField<f32>) -> Result<Self> {
        config.validate()?;
        let threads = if config.deterministic { 1 } else { config.threads };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer {
            grad: FieldGradient::new(&field),
            density_state: AdamState::new(field.density.params().len()),
            color_state: AdamState::new(field.color.params().len()),
            grid_state: AdamState::new(field.grid.params().len()),
            adam: Adam::default(),
            chunks: Vec::new(),
            rng,
            pool,
            step: 0,
            loss_ema: None,
            config,
            field,
        })
    }

    pub fn field(&self) -> &RadianceField<f32> {
        &self.field
    }

    pub fn into_field(self) -> RadianceField<f32> {
        self.field
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// PSNR implied by the smoothed training loss.
    pub fn running_psnr(&self) -> f64 {
        match self.loss_ema {
            Some(l) if l > 0.0 => -10.0 * l.log10(),
            Some(_) => f64::INFINITY,
            None => 0.0,
        }
    }

    /// One optimizer step on a batch drawn uniformly (with replacement) from
    /// `data`. Returns the batch loss.
    pub fn step(&mut self, data: &TrainingSet, lr: f64) -> Result<f64> {
        let b = self.config.batch_rays;
        let picks: Vec<usize> = (0..b).map(|_| self.rng.random_range(0..data.len())).collect();
        let n_chunks = b.div_ceil(CHUNK_RAYS);
        while self.chunks.len() < n_chunks {
            self.chunks.push(Chunk {
                batch: RayBatch::new(),
                rays: Vec::new(),
                d_colors: Vec::new(),
                g_density: vec![0.0; self.field.density.params().len()],
                g_color: vec![0.0; self.field.color.params().len()],
                loss: 0.0,
            });
        }
        let scale = 1.0 / (3.0 * b as f64);
        let opts = self.config.render;
        let seed = self.config.seed;
        let jitter_on = self.config.jitter;
        let step = self.step;
        let field = &self.field;
        let chunks = &mut self.chunks[..n_chunks];
        self.pool.install(|| {
            chunks.par_iter_mut().zip(picks.par_chunks(CHUNK_RAYS)).enumerate().for_each(|(ci, (c, ids))| {
                c.rays.clear();
                c.rays.extend(ids.iter().map(|&i| data.rays[i]));
                let mut jitter = ChaCha8Rng::seed_from_u64(seed);
                jitter.set_stream((step << 16) | ci as u64 | 1 << 63);
                let jitter: Option<&mut dyn rand::RngCore> = if jitter_on { Some(&mut jitter) } else { None };
                c.batch.forward(field, &c.rays, &opts, jitter);
                c.d_colors.clear();
                let mut loss = 0.0f64;
                for (col, &i) in c.batch.colors.iter().zip(ids) {
                    let t = data.colors[i];
                    c.d_colors.push([0, 1, 2].map(|k| {
                        let d = col[k] - t[k];
                        loss += (d as f64) * (d as f64);
                        (2.0 * d as f64 * scale) as f32
                    }));
                }
                c.loss = loss;
                c.g_density.fill(0.0);
                c.g_color.fill(0.0);
                c.batch.backward_mlps(field, &c.d_colors, &opts, &mut c.g_density, &mut c.g_color);
            });
        });
        let loss = chunks.iter().map(|c| c.loss).sum::<f64>() * scale;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at step {} (learning rate {lr:.3e})",
                self.step
            )));
        }

        self.grad.clear();
        for c in chunks.iter() {
            for (g, v) in self.grad.density.iter_mut().zip(&c.g_density) {
                *g += *v;
            }
            for (g, v) in self.grad.color.iter_mut().zip(&c.g_color) {
                *g += *v;
            }
        }
        let grad = &mut self.grad;
        self.pool.install(|| {
            for c in chunks.iter() {
                c.batch.scatter_grid(field, grad);
            }
        });

        self.adam.begin_step();
        self.adam.dense(self.field.density.params_mut(), &self.grad.density, &mut self.density_state, lr);
        self.adam.dense(self.field.color.params_mut(), &self.grad.color, &mut self.color_state, lr);
        self.adam.sparse_grid(self.field.grid.params_mut(), &self.grad.grid, &mut self.grid_state, lr);
        self.step += 1;
        self.loss_ema = Some(match self.loss_ema {
            None => loss,
            Some(e) => 0.95 * e + 0.05 * loss,
        });
        Ok(loss)
    }
}

/// Field state handed to the snapshot callback.
pub struct Snapshot<'a> {
    /// Nominal snapshot time (seconds).
    pub at_seconds: f64,
    pub elapsed: f64,
    pub step: u64,
    pub field: &'a RadianceField<f32>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub field: RadianceField<f32>,
    pub steps: u64,
    pub elapsed: f64,
    pub final_loss: f64,
    pub running_psnr: f64,
}

/// Trains until the step or (outside deterministic mode) time budget runs
/// out. `on_snapshot` fires as each configured snapshot time is passed.
pub fn train(
    data: &TrainingSet,
    config: &TrainConfig,
    on_snapshot: &mut dyn FnMut(&Snapshot) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone())?;
    let start = Instant::now();
    let seconds = config.effective_seconds();
    let mut pending: Vec<f64> = if config.deterministic {
        Vec::new()
    } else {
        let mut s = config.snapshot_seconds.clone();
        s.sort_by(f64::total_cmp);
        s
    };
    let mut loss = f64::NAN;
    // Time spent inside snapshot callbacks does not count as training time.
    let mut paused = 0.0;
    loop {
        let elapsed = start.elapsed().as_secs_f64() - paused;
        while let Some(&t) = pending.first() {
            if elapsed < t {
                break;
            }
            pending.remove(0);
            let entered = Instant::now();
            on_snapshot(&Snapshot {
                at_seconds: t,
                elapsed,
                step: trainer.steps_done(),
                field: trainer.field(),
            })?;
            paused += entered.elapsed().as_secs_f64();
        }
        let done_steps = trainer.steps_done() >= config.max_steps;
        let done_time = seconds.is_some_and(|s| elapsed >= s);
        if done_steps || done_time {
            break;
        }
        let mut progress = trainer.steps_done() as f64 / config.max_steps.max(1) as f64;
        if let Some(s) = seconds.filter(|s| *s > 0.0) {
            progress = progress.max(elapsed / s);
        }
        let lr = config.learning_rate_at(progress);
        loss = trainer.step(data, lr)?;
        if trainer.steps_done() % 500 == 0 {
            log::info!(
                "step {} loss {loss:.5} running psnr {:.2} dB lr {lr:.2e} ({elapsed:.1}s)",
                trainer.steps_done(),
                trainer.running_psnr()
            );
        }
    }
    Ok(TrainOutcome {
        steps: trainer.steps_done(),
        elapsed: start.elapsed().as_secs_f64() - paused,
        final_loss: loss,
        running_psnr: trainer.running_psnr(),
        field: trainer.into_field(),
    })
}

/// Renders each `(intrinsics, pose)` with deterministic sampling.
pub fn render_views(
    field: &RadianceField<f32>,
    views: &[(Intrinsics, Pose)],
    aabb: &Aabb,
    opts: &RenderOptions,
) -> Result<Vec<ImageBuffer>> {
    views
        .iter()
        .map(|(k, p)| render_view(field, k, p, aabb, opts).map(|v| v.image))
        .collect()
}

/// Per-view PSNR and their scene mean for held-out views.
pub fn evaluate_views(
    field: &RadianceField<f32>,
    views: &[(Intrinsics, Pose, ImageBuffer)],
    aabb: &Aabb,
    opts: &RenderOptions,
) -> Result<(Vec<f64>, f64)> {
    let cams: Vec<(Intrinsics, Pose)> = views.iter().map(|(k, p, _)| (*k, *p)).collect();
    let rendered = render_views(field, &cams, aabb, opts)?;
    let truth: Vec<ImageBuffer> = views.iter().map(|(_, _, i)| i.clone()).collect();
    let per_view = truth.iter().zip(&rendered).map(|(a, b)| psnr(a, b)).collect::<Result<Vec<_>>>()?;
    Ok((per_view, scene_psnr(&truth, &rendered)?))
}
