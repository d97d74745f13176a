//! Volume rendering by the quadrature rule
//! `C = sum_i T_i (1 - exp(-sigma_i delta_i)) c_i + T_{N+1} * background`.
//!
//! The free functions work on explicit sample lists. [`RayBatch`] is the
//! batched engine used for training and image synthesis: it marches rays in
//! segments, stops rays whose transmittance falls below
//! [`TERMINATION_THRESHOLD`], and keeps what the backward pass needs.

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{pixel_ray, Aabb, Intrinsics, Pose, Vec3};
use crate::error::{Error, Result};
use crate::field::{direction_encode, FieldGradient, FieldWorkspace, RadianceField};
use crate::image::ImageBuffer;
use crate::real::Real;

pub const TERMINATION_THRESHOLD: f64 = 1e-4;
/// Samples per ray evaluated between termination checks.
const SEGMENT: usize = 16;
/// Rays per work item when rendering images.
const RENDER_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    pub samples: usize,
    pub background: [f64; 3],
    pub early_termination: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            samples: 128,
            background: [0.0; 3],
            early_termination: true,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("samples per ray must be at least 1".into()));
        }
        if !self.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::Config(format!("background {:?} outside [0, 1]", self.background)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Stratified samples on `[t_near, t_far)`: bin centres without `jitter`,
/// uniform positions inside each bin with it. The last spacing closes to
/// `t_far`.
pub fn sample_uniform(t_near: f64, t_far: f64, n: usize, jitter: Option<&mut dyn RngCore>) -> SampleBatch {
    assert!(n >= 1 && t_near < t_far, "need n >= 1 and t_near < t_far");
    let w = (t_far - t_near) / n as f64;
    let t: Vec<f64> = match jitter {
        None => (0..n).map(|k| t_near + (k as f64 + 0.5) * w).collect(),
        Some(rng) => (0..n).map(|k| t_near + (k as f64 + rng.random::<f64>()) * w).collect(),
    };
    let delta = (0..n)
        .map(|i| if i + 1 < n { t[i + 1] - t[i] } else { t_far - t[i] })
        .collect();
    SampleBatch { t, delta }
}

/// `T_i = exp(-sum_{j<i} sigma_j delta_j)`.
pub fn transmittance<R: Real>(sigmas: &[R], deltas: &[R]) -> Vec<R> {
    assert_eq!(sigmas.len(), deltas.len());
    let mut tau = R::zero();
    sigmas
        .iter()
        .zip(deltas)
        .map(|(s, d)| {
            let t = (-tau).exp();
            tau += *s * *d;
            t
        })
        .collect()
}

/// Compositing weights `w_i = T_i (1 - exp(-sigma_i delta_i))`.
pub fn weights<R: Real>(sigmas: &[R], deltas: &[R]) -> Vec<R> {
    transmittance(sigmas, deltas)
        .into_iter()
        .zip(sigmas.iter().zip(deltas))
        .map(|(t, (s, d))| t * -(-*s * *d).exp_m1())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Composite<R> {
    pub color: [R; 3],
    /// `1 - T_{N+1}`, the summed weight.
    pub opacity: R,
}

pub fn composite<R: Real>(sigmas: &[R], rgbs: &[[R; 3]], deltas: &[R], background: [R; 3]) -> Composite<R> {
    assert!(sigmas.len() == rgbs.len() && sigmas.len() == deltas.len());
    let mut tau = R::zero();
    let mut color = [R::zero(); 3];
    for ((s, c), d) in sigmas.iter().zip(rgbs).zip(deltas) {
        let w = (-tau).exp() * -(-*s * *d).exp_m1();
        for k in 0..3 {
            color[k] += w * c[k];
        }
        tau += *s * *d;
    }
    let t_end = (-tau).exp();
    for k in 0..3 {
        color[k] += t_end * background[k];
    }
    Composite {
        color,
        opacity: R::one() - t_end,
    }
}

/// Gradients of a scalar loss through [`composite`], given `d_color`.
/// `dL/dsigma_k = delta_k <g, T_{k+1} c_k - S_k>` with `S_k` the colour
/// contributed behind sample `k` including the background.
pub fn composite_backward<R: Real>(
    sigmas: &[R],
    rgbs: &[[R; 3]],
    deltas: &[R],
    background: [R; 3],
    d_color: [R; 3],
    d_sigma: &mut [R],
    d_rgb: &mut [[R; 3]],
) {
    let n = sigmas.len();
    let mut t = Vec::with_capacity(n + 1);
    let mut tau = R::zero();
    t.push(R::one());
    for (s, d) in sigmas.iter().zip(deltas) {
        tau += *s * *d;
        t.push((-tau).exp());
    }
    let mut behind = [0, 1, 2].map(|k| t[n] * background[k]);
    for i in (0..n).rev() {
        let w = t[i] * -(-sigmas[i] * deltas[i]).exp_m1();
        let mut dot = R::zero();
        for k in 0..3 {
            dot += d_color[k] * (t[i + 1] * rgbs[i][k] - behind[k]);
            d_rgb[i][k] = w * d_color[k];
            behind[k] += w * rgbs[i][k];
        }
        d_sigma[i] = deltas[i] * dot;
    }
}

/// A ray prepared for marching: positions in unit-box coordinates
/// `origin + step * t`, world direction for the colour net, and the
/// parametric interval (world units) inside the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchRay<R> {
    pub origin: [R; 3],
    pub step: [R; 3],
    pub direction: [R; 3],
    pub t_near: R,
    pub t_far: R,
}

impl<R: Real> MarchRay<R> {
    /// Clips the world ray to `aabb`; `None` when it misses.
    pub fn new(origin: &Vec3, direction: &Vec3, aabb: &Aabb) -> Option<Self> {
        let (t0, t1) = aabb.intersect(origin, direction)?;
        let ext: [f64; 3] = std::array::from_fn(|i| aabb.max[i] - aabb.min[i]);
        Some(MarchRay {
            origin: std::array::from_fn(|i| R::c((origin[i] - aabb.min[i]) / ext[i])),
            step: std::array::from_fn(|i| R::c(direction[i] / ext[i])),
            direction: std::array::from_fn(|i| R::c(direction[i])),
            t_near: R::c(t0),
            t_far: R::c(t1),
        })
    }
}

/// Batched renderer with cached activations. Rows are samples, appended
/// segment by segment; each ray records which rows contribute to it.
#[derive(Debug, Default)]
pub struct RayBatch<R> {
    pub field_ws: FieldWorkspace<R>,
    xs: Vec<[R; 3]>,
    delta: Vec<R>,
    row_ray: Vec<u32>,
    ray_rows: Vec<Vec<u32>>,
    ray_t: Vec<R>,
    ray_tau: Vec<R>,
    ray_done: Vec<bool>,
    alive: Vec<u32>,
    dir_enc: Vec<R>,
    pub colors: Vec<[R; 3]>,
    pub opacity: Vec<R>,
    d_sigma: Vec<R>,
    d_rgb: Vec<R>,
    scratch_sigma: Vec<R>,
    scratch_rgb: Vec<[R; 3]>,
    scratch_delta: Vec<R>,
    scratch_dsigma: Vec<R>,
    scratch_drgb: Vec<[R; 3]>,
}

impl<R: Real> RayBatch<R> {
    pub fn new() -> Self {
        RayBatch {
            field_ws: FieldWorkspace::default(),
            xs: Vec::new(),
            delta: Vec::new(),
            row_ray: Vec::new(),
            ray_rows: Vec::new(),
            ray_t: Vec::new(),
            ray_tau: Vec::new(),
            ray_done: Vec::new(),
            alive: Vec::new(),
            dir_enc: Vec::new(),
            colors: Vec::new(),
            opacity: Vec::new(),
            d_sigma: Vec::new(),
            d_rgb: Vec::new(),
            scratch_sigma: Vec::new(),
            scratch_rgb: Vec::new(),
            scratch_delta: Vec::new(),
            scratch_dsigma: Vec::new(),
            scratch_drgb: Vec::new(),
        }
    }

    /// Number of sample rows evaluated by the last forward pass.
    pub fn rows(&self) -> usize {
        self.xs.len()
    }

    /// Sample positions (unit-box coordinates) of the last forward pass.
    pub fn positions(&self) -> &[[R; 3]] {
        &self.xs
    }

    /// Renders `rays`; results land in `colors` and `opacity`. With `jitter`
    /// the samples are stratified-random, drawn ray by ray in order.
    pub fn forward(
        &mut self,
        field: &RadianceField<R>,
        rays: &[MarchRay<R>],
        opts: &RenderOptions,
        mut jitter: Option<&mut dyn RngCore>,
    ) {
        let n = opts.samples;
        let nr = rays.len();
        let bg: [R; 3] = opts.background.map(R::c);
        let thr = R::c(TERMINATION_THRESHOLD).ln().neg();
        let dd = field.config.dir_dim();

        self.xs.clear();
        self.delta.clear();
        self.row_ray.clear();
        self.ray_rows.resize_with(nr, Vec::new);
        self.ray_rows.iter_mut().for_each(Vec::clear);
        self.ray_tau.clear();
        self.ray_tau.resize(nr, R::zero());
        self.ray_done.clear();
        self.ray_done.resize(nr, false);

        // sample positions along every ray
        self.ray_t.clear();
        self.ray_t.reserve(nr * n);
        for r in rays {
            let w = (r.t_far - r.t_near) / R::c(n as f64);
            for k in 0..n {
                let u = match jitter.as_deref_mut() {
                    Some(rng) => R::c(rng.random::<f64>()),
                    None => R::c(0.5),
                };
                self.ray_t.push(r.t_near + (R::c(k as f64) + u) * w);
            }
        }
        self.dir_enc.resize(nr * dd, R::zero());
        for (r, ray) in rays.iter().enumerate() {
            direction_encode(&ray.direction, field.config.dir_frequencies, &mut self.dir_enc[r * dd..(r + 1) * dd]);
        }

        let mut s0 = 0;
        while s0 < n {
            let s1 = (s0 + SEGMENT).min(n);
            self.alive.clear();
            self.alive.extend((0..nr as u32).filter(|&r| !self.ray_done[r as usize]));
            if self.alive.is_empty() {
                break;
            }
            let row0 = self.xs.len();
            for &r in &self.alive {
                let ray = &rays[r as usize];
                let ts = &self.ray_t[r as usize * n..(r as usize + 1) * n];
                for k in s0..s1 {
                    let t = ts[k];
                    let next = if k + 1 < n { ts[k + 1] } else { ray.t_far };
                    self.xs.push(std::array::from_fn(|i| ray.origin[i] + ray.step[i] * t));
                    self.delta.push(next - t);
                    self.row_ray.push(r);
                }
            }
            let rows = self.xs.len();
            self.field_ws.reserve_rows(field, rows);
            field.density_rows(&self.xs[row0..rows], &mut self.field_ws, row0);

            let mut row = row0;
            for &r in &self.alive {
                let r = r as usize;
                for _ in s0..s1 {
                    if !self.ray_done[r] {
                        if opts.early_termination && self.ray_tau[r] > thr {
                            self.ray_done[r] = true;
                        } else {
                            self.ray_rows[r].push(row as u32);
                            self.ray_tau[r] += self.field_ws.sigma[row] * self.delta[row];
                        }
                    }
                    row += 1;
                }
                if s1 == n {
                    self.ray_done[r] = true;
                }
            }
            s0 = s1;
        }

        let rows = self.xs.len();
        for row in 0..rows {
            let r = self.row_ray[row] as usize;
            field.set_direction(&mut self.field_ws, row, &self.dir_enc[r * dd..(r + 1) * dd]);
        }
        field.color_rows(rows, &mut self.field_ws, 0);

        self.colors.clear();
        self.opacity.clear();
        for r in 0..nr {
            self.gather(r);
            let c = composite(&self.scratch_sigma, &self.scratch_rgb, &self.scratch_delta, bg);
            self.colors.push(c.color);
            self.opacity.push(c.opacity);
        }
    }

    fn gather(&mut self, r: usize) {
        self.scratch_sigma.clear();
        self.scratch_rgb.clear();
        self.scratch_delta.clear();
        for &row in &self.ray_rows[r] {
            let row = row as usize;
            self.scratch_sigma.push(self.field_ws.sigma[row]);
            let c = &self.field_ws.rgb[row * 3..row * 3 + 3];
            self.scratch_rgb.push([c[0], c[1], c[2]]);
            self.scratch_delta.push(self.delta[row]);
        }
    }

    /// Back-propagates per-ray colour gradients through compositing and the
    /// MLPs. MLP gradients are added to `g_density` / `g_color`; the grid
    /// gradient is left in [`Self::encoded_gradient`] for
    /// [`Self::scatter_grid`].
    pub fn backward_mlps(
        &mut self,
        field: &RadianceField<R>,
        d_colors: &[[R; 3]],
        opts: &RenderOptions,
        g_density: &mut [R],
        g_color: &mut [R],
    ) {
        let bg: [R; 3] = opts.background.map(R::c);
        let rows = self.xs.len();
        self.d_sigma.clear();
        self.d_sigma.resize(rows, R::zero());
        self.d_rgb.clear();
        self.d_rgb.resize(rows * 3, R::zero());
        for (r, dc) in d_colors.iter().enumerate() {
            self.gather(r);
            let m = self.scratch_sigma.len();
            self.scratch_dsigma.clear();
            self.scratch_dsigma.resize(m, R::zero());
            self.scratch_drgb.clear();
            self.scratch_drgb.resize(m, [R::zero(); 3]);
            composite_backward(
                &self.scratch_sigma,
                &self.scratch_rgb,
                &self.scratch_delta,
                bg,
                *dc,
                &mut self.scratch_dsigma,
                &mut self.scratch_drgb,
            );
            for (j, &row) in self.ray_rows[r].iter().enumerate() {
                let row = row as usize;
                self.d_sigma[row] = self.scratch_dsigma[j];
                self.d_rgb[row * 3..row * 3 + 3].copy_from_slice(&self.scratch_drgb[j]);
            }
        }
        field.backward_mlps(rows, &self.d_sigma, &self.d_rgb, &mut self.field_ws, g_density, g_color);
    }

    /// Adds the grid part of the last backward pass to `grad`.
    pub fn scatter_grid(&self, field: &RadianceField<R>, grad: &mut FieldGradient<R>) {
        let rows = self.xs.len();
        let e = field.grid.output_dim();
        field
            .grid
            .backward_batch(&self.xs, &self.field_ws.encoded_gradient()[..rows * e], &mut grad.grid);
    }
}

/// Renders one world-space ray; rays missing the box return the
/// background with zero opacity.
pub fn render_ray<R: Real>(
    field: &RadianceField<R>,
    origin: &Vec3,
    direction: &Vec3,
    aabb: &Aabb,
    opts: &RenderOptions,
) -> Composite<R> {
    let Some(ray) = MarchRay::new(origin, &direction.normalize(), aabb) else {
        return Composite {
            color: opts.background.map(R::c),
            opacity: R::zero(),
        };
    };
    let mut batch = RayBatch::new();
    batch.forward(field, &[ray], opts, None);
    Composite {
        color: batch.colors[0],
        opacity: batch.opacity[0],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub image: ImageBuffer,
    /// Single-channel accumulated opacity.
    pub opacity: ImageBuffer,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

/// Renders every pixel (through its centre) with deterministic sampling.
pub fn render_view<R: Real>(
    field: &RadianceField<R>,
    k: &Intrinsics,
    pose: &Pose,
    aabb: &Aabb,
    opts: &RenderOptions,
) -> Result<RenderedView> {
    opts.validate()?;
    let (w, h) = (k.width as usize, k.height as usize);
    let pixels: Vec<Option<MarchRay<R>>> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            pixel_ray(k, pose, x as u32, y as u32, aabb).and_then(|r| MarchRay::new(&r.origin, &r.direction, aabb))
        })
        .collect();
    let results: Vec<([f32; 3], f32)> = pixels
        .par_chunks(RENDER_CHUNK)
        .map_init(RayBatch::new, |batch, chunk| {
            let rays: Vec<MarchRay<R>> = chunk.iter().flatten().copied().collect();
            batch.forward(field, &rays, opts, None);
            let mut hit = 0;
            chunk
                .iter()
                .map(|p| match p {
                    Some(_) => {
                        let c = batch.colors[hit];
                        let a = batch.opacity[hit];
                        hit += 1;
                        (c.map(|v| v.to_f64_lossy() as f32), a.to_f64_lossy() as f32)
                    }
                    None => (opts.background.map(|v| v as f32), 0.0),
                })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect();
    if results.iter().any(|(c, a)| !a.is_finite() || c.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numerical("non-finite pixel in rendered view".into()));
    }
    let image = ImageBuffer::from_clamped(w, h, 3, results.iter().flat_map(|(c, _)| *c).collect())?;
    let opacity = ImageBuffer::from_clamped(w, h, 1, results.iter().map(|(_, a)| *a).collect())?;
    Ok(RenderedView {
        image,
        opacity,
        intrinsics: *k,
        pose: *pose,
    })
}
