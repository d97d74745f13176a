//! Radiance field: hash encoding followed by a density MLP and a
//! view-dependent color MLP.
//!
//! Density net: `L*F -> W -> W -> 1 + G`, color net: `G + D_dir -> W -> 3`,
//! rectifiers on hidden layers. `sigma = exp(min(raw, 15))`, `rgb = logistic(raw)`.
//! Batched evaluation keeps per-layer activations in a [`FieldWorkspace`] so
//! the backward pass can reuse them.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashgrid::{GridGradient, HashGrid, HashGridConfig};
use crate::real::{gemm, Layout, Real};

static NON_UNIT_DIRECTIONS: AtomicU64 = AtomicU64::new(0);

/// Number of non-unit directions normalized by [`direction_encode`] so far.
pub fn non_unit_direction_count() -> u64 {
    NON_UNIT_DIRECTIONS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub grid: HashGridConfig,
    pub hidden_width: usize,
    pub geo_features: usize,
    pub dir_frequencies: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            grid: HashGridConfig::default(),
            hidden_width: 64,
            geo_features: 15,
            dir_frequencies: 4,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.hidden_width == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        Ok(())
    }

    pub fn dir_dim(&self) -> usize {
        3 + 6 * self.dir_frequencies
    }

    fn density_shapes(&self) -> Vec<(usize, usize)> {
        let w = self.hidden_width;
        vec![(self.grid.output_dim(), w), (w, w), (w, 1 + self.geo_features)]
    }

    fn color_shapes(&self) -> Vec<(usize, usize)> {
        vec![(self.geo_features + self.dir_dim(), self.hidden_width), (self.hidden_width, 3)]
    }
}

/// `d` followed by `sin(2^k d_i), cos(2^k d_i)` for each component `i` and
/// frequency `k < M`. Non-unit input is normalized and counted.
pub fn direction_encode<R: Real>(d: &[R; 3], frequencies: usize, out: &mut [R]) {
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let mut d = *d;
    if (norm - R::one()).abs() > R::c(1e-5) {
        NON_UNIT_DIRECTIONS.fetch_add(1, Ordering::Relaxed);
        if norm > R::zero() {
            d = d.map(|v| v / norm);
        }
    }
    out[..3].copy_from_slice(&d);
    let mut o = 3;
    for v in d {
        let mut f = R::one();
        for _ in 0..frequencies {
            out[o] = (f * v).sin();
            out[o + 1] = (f * v).cos();
            o += 2;
            f = f + f;
        }
    }
}

/// Largest raw density output before the exponential saturates.
pub const MAX_LOG_DENSITY: f64 = 15.0;

/// Exponential density. An opaque surface needs sigma in the hundreds, which
/// a linear-tailed activation only reaches after a long plateau.
pub fn density_activation<R: Real>(raw: R) -> R {
    raw.min(R::c(MAX_LOG_DENSITY)).exp()
}

/// Derivative of [`density_activation`]; zero past the clamp.
pub fn density_activation_grad<R: Real>(raw: R) -> R {
    if raw < R::c(MAX_LOG_DENSITY) {
        raw.exp()
    } else {
        R::zero()
    }
}

pub fn logistic<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

/// Fully connected stack with all weights and biases in one flat vector:
/// per layer an `out x in` row-major weight block followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<R> {
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    params: Vec<R>,
}

impl<R: Real> Mlp<R> {
    pub fn zeros(shapes: Vec<(usize, usize)>) -> Self {
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut n = 0;
        for &(i, o) in &shapes {
            offsets.push(n);
            n += i * o + o;
        }
        Mlp {
            shapes,
            offsets,
            params: vec![R::zero(); n],
        }
    }

    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    pub fn he_uniform(shapes: Vec<(usize, usize)>, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(shapes);
        for l in 0..m.shapes.len() {
            let (i, o) = m.shapes[l];
            let limit = (6.0 / i.max(1) as f64).sqrt();
            let off = m.offsets[l];
            for w in &mut m.params[off..off + i * o] {
                *w = R::c(rng.random_range(-limit..=limit));
            }
        }
        m
    }

    pub fn from_params(shapes: Vec<(usize, usize)>, params: Vec<R>) -> Result<Self> {
        let mut m = Self::zeros(shapes);
        if params.len() != m.params.len() {
            return Err(Error::Checkpoint(format!(
                "network expects {} parameters, found {}",
                m.params.len(),
                params.len()
            )));
        }
        m.params = params;
        Ok(m)
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn params(&self) -> &[R] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [R] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.shapes[0].0
    }

    pub fn output_dim(&self) -> usize {
        self.shapes[self.shapes.len() - 1].1
    }

    fn weight(&self, l: usize) -> &[R] {
        let (i, o) = self.shapes[l];
        &self.params[self.offsets[l]..self.offsets[l] + i * o]
    }

    fn bias(&self, l: usize) -> &[R] {
        let (i, o) = self.shapes[l];
        let s = self.offsets[l] + i * o;
        &self.params[s..s + o]
    }

    /// Forward over `n` rows of `input`. Layer outputs go to rows
    /// `row0..row0 + n` of `acts[l]` (rectified except the last layer).
    pub fn forward(&self, input: &[R], n: usize, acts: &mut [Vec<R>], row0: usize) {
        for l in 0..self.shapes.len() {
            let (i, o) = self.shapes[l];
            let (before, rest) = acts.split_at_mut(l);
            let out = &mut rest[0][row0 * o..(row0 + n) * o];
            for row in out.chunks_exact_mut(o) {
                row.copy_from_slice(self.bias(l));
            }
            let x = if l == 0 { input } else { &before[l - 1][row0 * i..(row0 + n) * i] };
            gemm(
                R::one(),
                x,
                Layout::row_major(n, i),
                self.weight(l),
                Layout::row_major(o, i).transposed(),
                R::one(),
                out,
                Layout::row_major(n, o),
            );
            if l + 1 < self.shapes.len() {
                for v in out.iter_mut() {
                    *v = v.max(R::zero());
                }
            }
        }
    }

    /// Reverse pass over `n` rows. `d_out` holds the output gradient and is
    /// used as scratch; parameter gradients are added to `grad` (same layout
    /// as the parameters) and the input gradient is written to `d_input`
    /// when requested.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        input: &[R],
        n: usize,
        acts: &[Vec<R>],
        d_out: &mut Vec<R>,
        scratch: &mut Vec<R>,
        grad: &mut [R],
        d_input: Option<&mut [R]>,
    ) {
        let layers = self.shapes.len();
        let mut d_input = d_input;
        for l in (0..layers).rev() {
            let (i, o) = self.shapes[l];
            let x = if l == 0 { input } else { &acts[l - 1][..n * i] };
            let dy = &d_out[..n * o];
            let off = self.offsets[l];
            let (gw, gb) = grad[off..off + i * o + o].split_at_mut(i * o);
            gemm(
                R::one(),
                dy,
                Layout::row_major(n, o).transposed(),
                x,
                Layout::row_major(n, i),
                R::one(),
                gw,
                Layout::row_major(o, i),
            );
            for row in dy.chunks_exact(o) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += *d;
                }
            }
            let dx: &mut [R] = if l == 0 {
                match d_input.take() {
                    Some(d) => d,
                    None => break,
                }
            } else {
                scratch.clear();
                scratch.resize(n * i, R::zero());
                scratch
            };
            gemm(
                R::one(),
                dy,
                Layout::row_major(n, o),
                self.weight(l),
                Layout::row_major(o, i),
                R::zero(),
                &mut dx[..n * i],
                Layout::row_major(n, i),
            );
            if l > 0 {
                // rectifier mask from the stored post-activation values
                for (d, a) in dx[..n * i].iter_mut().zip(&acts[l - 1][..n * i]) {
                    if *a <= R::zero() {
                        *d = R::zero();
                    }
                }
                std::mem::swap(d_out, scratch);
            }
        }
    }

    pub fn cast<S: Real>(&self) -> Mlp<S> {
        Mlp {
            shapes: self.shapes.clone(),
            offsets: self.offsets.clone(),
            params: self.params.iter().map(|v| S::c(v.to_f64_lossy())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOutput<R> {
    pub sigma: R,
    pub rgb: [R; 3],
}

/// Per-row activations of a batch evaluation.
#[derive(Debug, Clone, Default)]
pub struct FieldWorkspace<R> {
    pub rows: usize,
    pub encoded: Vec<R>,
    pub density_acts: Vec<Vec<R>>,
    pub color_input: Vec<R>,
    pub color_acts: Vec<Vec<R>>,
    pub sigma: Vec<R>,
    pub rgb: Vec<R>,
    // backward scratch
    d_color: Vec<R>,
    d_color_input: Vec<R>,
    d_density: Vec<R>,
    d_encoded: Vec<R>,
    scratch: Vec<R>,
}

impl<R: Real> FieldWorkspace<R> {
    /// Sizes every buffer for `rows` rows, keeping existing contents.
    pub fn reserve_rows(&mut self, field: &RadianceField<R>, rows: usize) {
        let grow = |v: &mut Vec<R>, width: usize| {
            if v.len() < rows * width {
                v.resize(rows * width, R::zero());
            }
        };
        self.density_acts.resize_with(field.density.shapes.len(), Vec::new);
        self.color_acts.resize_with(field.color.shapes.len(), Vec::new);
        grow(&mut self.encoded, field.grid.output_dim());
        for (a, s) in self.density_acts.iter_mut().zip(&field.density.shapes) {
            grow(a, s.1);
        }
        grow(&mut self.color_input, field.color.input_dim());
        for (a, s) in self.color_acts.iter_mut().zip(&field.color.shapes) {
            grow(a, s.1);
        }
        grow(&mut self.sigma, 1);
        grow(&mut self.rgb, 3);
        self.rows = self.rows.max(rows);
    }

    /// Gradient on the encodings left by the last backward pass.
    pub fn encoded_gradient(&self) -> &[R] {
        &self.d_encoded
    }
}

/// Parameter gradients of a field: dense MLP vectors plus the sparse grid
/// accumulator.
#[derive(Debug, Clone)]
pub struct FieldGradient<R> {
    pub density: Vec<R>,
    pub color: Vec<R>,
    pub grid: GridGradient<R>,
}

impl<R: Real> FieldGradient<R> {
    pub fn new(field: &RadianceField<R>) -> Self {
        FieldGradient {
            density: vec![R::zero(); field.density.params.len()],
            color: vec![R::zero(); field.color.params.len()],
            grid: GridGradient::new(&field.grid),
        }
    }

    pub fn clear(&mut self) {
        self.density.fill(R::zero());
        self.color.fill(R::zero());
        self.grid.clear();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadianceField<R> {
    pub config: FieldConfig,
    pub seed: u64,
    pub grid: HashGrid<R>,
    pub density: Mlp<R>,
    pub color: Mlp<R>,
}

impl<R: Real> RadianceField<R> {
    pub fn new(config: FieldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = HashGrid::new(config.grid, rng.random())?;
        let density = Mlp::he_uniform(config.density_shapes(), &mut rng);
        let color = Mlp::he_uniform(config.color_shapes(), &mut rng);
        Ok(RadianceField {
            config,
            seed,
            grid,
            density,
            color,
        })
    }

    pub fn zeros(config: FieldConfig) -> Result<Self> {
        config.validate()?;
        Ok(RadianceField {
            config,
            seed: 0,
            grid: HashGrid::zeros(config.grid)?,
            density: Mlp::zeros(config.density_shapes()),
            color: Mlp::zeros(config.color_shapes()),
        })
    }

    pub fn from_parts(config: FieldConfig, seed: u64, grid: Vec<R>, density: Vec<R>, color: Vec<R>) -> Result<Self> {
        config.validate()?;
        Ok(RadianceField {
            config,
            seed,
            grid: HashGrid::from_params(config.grid, grid)?,
            density: Mlp::from_params(config.density_shapes(), density)?,
            color: Mlp::from_params(config.color_shapes(), color)?,
        })
    }

    pub fn cast<S: Real>(&self) -> RadianceField<S> {
        RadianceField {
            config: self.config,
            seed: self.seed,
            grid: HashGrid::from_params(
                self.config.grid,
                self.grid.params().iter().map(|v| S::c(v.to_f64_lossy())).collect(),
            )
            .expect("same configuration"),
            density: self.density.cast(),
            color: self.color.cast(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.grid.params().len() + self.density.params.len() + self.color.params.len()
    }

    /// Encodes `xs` and runs the density net into rows `row0..` of `ws`,
    /// filling `ws.sigma`.
    pub fn density_rows(&self, xs: &[[R; 3]], ws: &mut FieldWorkspace<R>, row0: usize) {
        let n = xs.len();
        let e = self.grid.output_dim();
        let g = 1 + self.config.geo_features;
        self.grid.encode_batch(xs, &mut ws.encoded[row0 * e..(row0 + n) * e]);
        self.density
            .forward(&ws.encoded[row0 * e..(row0 + n) * e], n, &mut ws.density_acts, row0);
        let out = &ws.density_acts[2];
        for r in row0..row0 + n {
            ws.sigma[r] = density_activation(out[r * g]);
        }
    }

    /// Color net over rows `row0..row0 + n`, whose direction encodings are
    /// already in the tail of each `ws.color_input` row.
    pub fn color_rows(&self, n: usize, ws: &mut FieldWorkspace<R>, row0: usize) {
        let gf = self.config.geo_features;
        let g = 1 + gf;
        let ci = self.color.input_dim();
        for r in row0..row0 + n {
            let src = &ws.density_acts[2][r * g + 1..(r + 1) * g];
            ws.color_input[r * ci..r * ci + gf].copy_from_slice(src);
        }
        self.color
            .forward(&ws.color_input[row0 * ci..(row0 + n) * ci], n, &mut ws.color_acts, row0);
        let out = &ws.color_acts[1];
        for (d, s) in ws.rgb[row0 * 3..(row0 + n) * 3].iter_mut().zip(&out[row0 * 3..(row0 + n) * 3]) {
            *d = logistic(*s);
        }
    }

    /// Writes the direction encoding into the tail of row `r` of the color
    /// input.
    pub fn set_direction(&self, ws: &mut FieldWorkspace<R>, r: usize, encoded_dir: &[R]) {
        let ci = self.color.input_dim();
        let gf = self.config.geo_features;
        ws.color_input[r * ci + gf..(r + 1) * ci].copy_from_slice(encoded_dir);
    }

    /// Reverse pass over the first `n` rows of `ws` given gradients on
    /// `sigma` (`n`) and `rgb` (`n x 3`). Accumulates into `grad`.
    pub fn backward_rows(
        &self,
        xs: &[[R; 3]],
        d_sigma: &[R],
        d_rgb: &[R],
        ws: &mut FieldWorkspace<R>,
        grad: &mut FieldGradient<R>,
    ) {
        self.backward_mlps(xs.len(), d_sigma, d_rgb, ws, &mut grad.density, &mut grad.color);
        self.grid.backward_batch(xs, &ws.d_encoded[..xs.len() * self.grid.output_dim()], &mut grad.grid);
    }

    /// MLP half of [`Self::backward_rows`]; leaves the encoding gradient in
    /// the workspace for a later grid scatter.
    pub fn backward_mlps(
        &self,
        n: usize,
        d_sigma: &[R],
        d_rgb: &[R],
        ws: &mut FieldWorkspace<R>,
        g_density: &mut [R],
        g_color: &mut [R],
    ) {
        let g = 1 + self.config.geo_features;
        let gf = self.config.geo_features;
        let ci = self.color.input_dim();
        let e = self.grid.output_dim();

        ws.d_color.clear();
        ws.d_color.extend(d_rgb[..n * 3].iter().zip(&ws.rgb[..n * 3]).map(|(d, c)| *d * *c * (R::one() - *c)));
        ws.d_color_input.resize(n * ci, R::zero());
        let acts = std::mem::take(&mut ws.color_acts);
        self.color.backward(
            &ws.color_input[..n * ci],
            n,
            &acts,
            &mut ws.d_color,
            &mut ws.scratch,
            g_color,
            Some(&mut ws.d_color_input[..n * ci]),
        );
        ws.color_acts = acts;

        ws.d_density.clear();
        ws.d_density.resize(n * g, R::zero());
        let raw = &ws.density_acts[2];
        for r in 0..n {
            ws.d_density[r * g] = d_sigma[r] * density_activation_grad(raw[r * g]);
            ws.d_density[r * g + 1..(r + 1) * g].copy_from_slice(&ws.d_color_input[r * ci..r * ci + gf]);
        }
        ws.d_encoded.resize(n * e, R::zero());
        let acts = std::mem::take(&mut ws.density_acts);
        self.density.backward(
            &ws.encoded[..n * e],
            n,
            &acts,
            &mut ws.d_density,
            &mut ws.scratch,
            g_density,
            Some(&mut ws.d_encoded[..n * e]),
        );
        ws.density_acts = acts;
    }

    /// Single-point evaluation with a finiteness check after every layer.
    pub fn forward(&self, x: &[R; 3], d: &[R; 3]) -> Result<FieldOutput<R>> {
        let mut ws = FieldWorkspace::default();
        ws.reserve_rows(self, 1);
        self.density_rows(std::slice::from_ref(x), &mut ws, 0);
        let mut dir = vec![R::zero(); self.config.dir_dim()];
        direction_encode(d, self.config.dir_frequencies, &mut dir);
        self.set_direction(&mut ws, 0, &dir);
        self.color_rows(1, &mut ws, 0);
        let layers = ws
            .density_acts
            .iter()
            .enumerate()
            .map(|(i, a)| (format!("density layer {i}"), a))
            .chain(ws.color_acts.iter().enumerate().map(|(i, a)| (format!("color layer {i}"), a)));
        for (name, a) in layers {
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite activation in {name}")));
            }
        }
        Ok(FieldOutput {
            sigma: ws.sigma[0],
            rgb: [ws.rgb[0], ws.rgb[1], ws.rgb[2]],
        })
    }
}
