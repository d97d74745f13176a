//! Multi-resolution hash encoding.
//!
//! Each level owns a table of `min(T, (N_l + 1)^3)` entries with `F`
//! features. Coarse levels whose vertex lattice fits in the table are indexed
//! densely; finer levels use a prime-XOR spatial hash. A position is encoded
//! by trilinear interpolation of the eight surrounding vertex features at
//! every level, concatenated coarse to fine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];
const INIT_SCALE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HashGridConfig {
    pub levels: usize,
    pub min_resolution: u32,
    pub max_resolution: u32,
    /// Entries per level; a power of two.
    pub table_size: u32,
    pub features_per_level: usize,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig {
            levels: 16,
            min_resolution: 16,
            max_resolution: 2048,
            table_size: 1 << 17,
            features_per_level: 2,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.levels < 1 {
            return bad("grid needs at least one level".into());
        }
        if self.min_resolution < 1 || self.max_resolution < self.min_resolution {
            return bad(format!(
                "grid resolutions must satisfy 1 <= min <= max, got {}..{}",
                self.min_resolution, self.max_resolution
            ));
        }
        if !self.table_size.is_power_of_two() {
            return bad(format!("table size {} is not a power of two", self.table_size));
        }
        if self.features_per_level < 1 {
            return bad("grid needs at least one feature per level".into());
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    /// Per-level growth factor of the geometric resolution schedule.
    pub fn growth_factor(&self) -> f64 {
        if self.levels == 1 {
            return 1.0;
        }
        ((self.max_resolution as f64).ln() - (self.min_resolution as f64).ln()) / (self.levels - 1) as f64
    }
}

/// `floor(N_min * b^l)`; the small offset keeps exact powers from rounding
/// down.
pub fn level_resolution(config: &HashGridConfig, level: usize) -> u32 {
    if config.levels == 1 {
        return config.min_resolution;
    }
    let n = config.min_resolution as f64 * (config.growth_factor() * level as f64).exp();
    ((n + 1e-9).floor() as u32).clamp(config.min_resolution, config.max_resolution)
}

#[inline]
pub fn spatial_hash(ix: u32, iy: u32, iz: u32, table_size: u32) -> u32 {
    let h = ix.wrapping_mul(PRIMES[0]) ^ iy.wrapping_mul(PRIMES[1]) ^ iz.wrapping_mul(PRIMES[2]);
    if table_size.is_power_of_two() {
        h & (table_size - 1)
    } else {
        h % table_size
    }
}

/// True when the `(N + 1)^3` vertex lattice fits in the table.
pub fn is_dense(resolution: u32, table_size: u32) -> bool {
    (resolution as u64 + 1).pow(3) <= table_size as u64
}

pub fn vertex_index(resolution: u32, table_size: u32, v: [u32; 3]) -> u32 {
    if is_dense(resolution, table_size) {
        let side = resolution + 1;
        v[0] + v[1] * side + v[2] * side * side
    } else {
        spatial_hash(v[0], v[1], v[2], table_size)
    }
}

/// Table geometry of one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Level {
    pub resolution: u32,
    pub entries: u32,
    pub dense: bool,
    /// First entry of this level in the concatenated table.
    pub offset: usize,
}

impl Level {
    /// Global entry indices and trilinear weights of the eight corners
    /// around `x` (clamped to the unit cube).
    #[inline]
    pub fn corners<R: Real>(&self, x: &[R; 3]) -> [(usize, R); 8] {
        let n = R::from_u32(self.resolution).unwrap_or_else(R::one);
        let mut base = [0u32; 3];
        let mut w = [[R::zero(); 2]; 3];
        for i in 0..3 {
            let p = x[i].max(R::zero()).min(R::one()) * n;
            // Truncation equals floor on the clamped, non-negative coordinate.
            let cell = p.to_u32().unwrap_or(0).min(self.resolution - 1);
            let frac = p - R::from_u32(cell).unwrap_or_else(R::zero);
            base[i] = cell;
            w[i] = [R::one() - frac, frac];
        }
        // Per-axis contributions of the low and high corner, combined below
        // by addition (dense) or xor (hashed).
        let mut axis = [[0u32; 2]; 3];
        if self.dense {
            let side = self.resolution + 1;
            let stride = [1, side, side * side];
            for i in 0..3 {
                axis[i] = [base[i] * stride[i], (base[i] + 1) * stride[i]];
            }
        } else {
            for i in 0..3 {
                axis[i] = [base[i].wrapping_mul(PRIMES[i]), (base[i] + 1).wrapping_mul(PRIMES[i])];
            }
        }
        let mut out = [(0usize, R::zero()); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (bx, by, bz) = (c & 1, c >> 1 & 1, c >> 2 & 1);
            let weight = w[0][bx] * w[1][by] * w[2][bz];
            let local = if self.dense {
                axis[0][bx] + axis[1][by] + axis[2][bz]
            } else {
                let h = axis[0][bx] ^ axis[1][by] ^ axis[2][bz];
                if self.entries.is_power_of_two() {
                    h & (self.entries - 1)
                } else {
                    h % self.entries
                }
            };
            *slot = (self.offset + local as usize, weight);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashGrid<R> {
    config: HashGridConfig,
    levels: Vec<Level>,
    /// Entry-major, feature-minor values of all levels back to back.
    params: Vec<R>,
}

impl<R: Real> HashGrid<R> {
    /// Table values drawn uniformly from `[-1e-4, 1e-4]`.
    pub fn new(config: HashGridConfig, seed: u64) -> Result<Self> {
        let mut grid = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut grid.params {
            *p = R::c(rng.random_range(-INIT_SCALE..=INIT_SCALE));
        }
        Ok(grid)
    }

    pub fn zeros(config: HashGridConfig) -> Result<Self> {
        config.validate()?;
        let mut offset = 0;
        let levels: Vec<Level> = (0..config.levels)
            .map(|l| {
                let resolution = level_resolution(&config, l);
                let dense = is_dense(resolution, config.table_size);
                let entries = if dense {
                    (resolution + 1).pow(3)
                } else {
                    config.table_size
                };
                let level = Level {
                    resolution,
                    entries,
                    dense,
                    offset,
                };
                offset += entries as usize;
                level
            })
            .collect();
        Ok(HashGrid {
            config,
            levels,
            params: vec![R::zero(); offset * config.features_per_level],
        })
    }

    /// Builds a grid around existing values, checking the length.
    pub fn from_params(config: HashGridConfig, params: Vec<R>) -> Result<Self> {
        let mut grid = Self::zeros(config)?;
        if params.len() != grid.params.len() {
            return Err(Error::Checkpoint(format!(
                "grid expects {} values, found {}",
                grid.params.len(),
                params.len()
            )));
        }
        grid.params = params;
        Ok(grid)
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn entry_count(&self) -> usize {
        self.params.len() / self.config.features_per_level
    }

    pub fn params(&self) -> &[R] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [R] {
        &mut self.params
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn encode(&self, x: &[R; 3]) -> Vec<R> {
        let mut out = vec![R::zero(); self.output_dim()];
        self.encode_into(x, &mut out);
        out
    }

    pub fn encode_into(&self, x: &[R; 3], out: &mut [R]) {
        let f = self.config.features_per_level;
        for (l, level) in self.levels.iter().enumerate() {
            let dst = &mut out[l * f..(l + 1) * f];
            dst.fill(R::zero());
            for (idx, w) in level.corners(x) {
                let src = &self.params[idx * f..(idx + 1) * f];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * *s;
                }
            }
        }
    }

    /// Encodes every position into consecutive rows of `out`.
    /// Level-major so one level's table stays cache resident across the batch.
    pub fn encode_batch(&self, xs: &[[R; 3]], out: &mut [R]) {
        debug_assert_eq!(out.len(), xs.len() * self.output_dim());
        match self.config.features_per_level {
            1 => self.encode_batch_fixed::<1>(xs, out),
            2 => self.encode_batch_fixed::<2>(xs, out),
            4 => self.encode_batch_fixed::<4>(xs, out),
            8 => self.encode_batch_fixed::<8>(xs, out),
            _ => {
                for (x, row) in xs.iter().zip(out.chunks_exact_mut(self.output_dim())) {
                    self.encode_into(x, row);
                }
            }
        }
    }

    fn encode_batch_fixed<const F: usize>(&self, xs: &[[R; 3]], out: &mut [R]) {
        let d = self.output_dim();
        for (l, level) in self.levels.iter().enumerate() {
            let table = &self.params[level.offset * F..(level.offset + level.entries as usize) * F];
            for (x, row) in xs.iter().zip(out.chunks_exact_mut(d)) {
                let mut acc = [R::zero(); F];
                for (idx, w) in level.corners(x) {
                    let local = idx - level.offset;
                    let src: &[R; F] = table[local * F..local * F + F].try_into().expect("entry width");
                    for k in 0..F {
                        acc[k] += w * src[k];
                    }
                }
                row[l * F..l * F + F].copy_from_slice(&acc);
            }
        }
    }

    /// Scatters `upstream` (rows of length `L * F`, one per position) into
    /// `grad`. Levels are processed in parallel; within a level positions are
    /// visited in order, so the result does not depend on scheduling.
    pub fn backward_batch(&self, xs: &[[R; 3]], upstream: &[R], grad: &mut GridGradient<R>) {
        let f = self.config.features_per_level;
        let d = self.output_dim();
        debug_assert_eq!(upstream.len(), xs.len() * d);
        grad.levels.par_iter_mut().zip(&self.levels).enumerate().for_each(|(l, (lg, level))| {
            for (x, up) in xs.iter().zip(upstream.chunks_exact(d)) {
                let up = &up[l * f..(l + 1) * f];
                if up.iter().all(|v| *v == R::zero()) {
                    continue;
                }
                let offset = level.offset;
                for (idx, w) in level.corners(x) {
                    if w != R::zero() {
                        lg.add(idx - offset, w, up);
                    }
                }
            }
        });
    }
}

/// Per-level gradient accumulator: raw sums, the number of contributing
/// touches per entry, and the list of entries touched since the last clear.
#[derive(Debug, Clone)]
pub struct GridGradient<R> {
    features: usize,
    levels: Vec<LevelGradient<R>>,
}

#[derive(Debug, Clone)]
pub struct LevelGradient<R> {
    offset: usize,
    features: usize,
    sums: Vec<R>,
    counts: Vec<u32>,
    touched: Vec<u32>,
}

impl<R: Real> LevelGradient<R> {
    #[inline(always)]
    fn add(&mut self, local: usize, w: R, up: &[R]) {
        if self.counts[local] == 0 {
            self.touched.push(local as u32);
        }
        self.counts[local] += 1;
        let f = self.features;
        let dst = &mut self.sums[local * f..(local + 1) * f];
        if f == 2 {
            dst[0] += w * up[0];
            dst[1] += w * up[1];
        } else {
            for (d, u) in dst.iter_mut().zip(up) {
                *d += w * *u;
            }
        }
    }

    /// Global entry index, touch count and summed gradient of each touched
    /// entry, in first-touch order.
    pub fn iter_touched(&self) -> impl Iterator<Item = (usize, u32, &[R])> + '_ {
        self.touched.iter().map(move |&i| {
            let i = i as usize;
            (
                self.offset + i,
                self.counts[i],
                &self.sums[i * self.features..(i + 1) * self.features],
            )
        })
    }
}

impl<R: Real> GridGradient<R> {
    pub fn new(grid: &HashGrid<R>) -> Self {
        let f = grid.config.features_per_level;
        GridGradient {
            features: f,
            levels: grid
                .levels
                .iter()
                .map(|l| LevelGradient {
                    offset: l.offset,
                    features: f,
                    sums: vec![R::zero(); l.entries as usize * f],
                    counts: vec![0; l.entries as usize],
                    touched: Vec::new(),
                })
                .collect(),
        }
    }

    pub fn levels(&self) -> &[LevelGradient<R>] {
        &self.levels
    }

    /// Resets only the entries touched since the last clear.
    pub fn clear(&mut self) {
        let f = self.features;
        self.levels.par_iter_mut().for_each(|lg| {
            for &i in &lg.touched {
                let i = i as usize;
                lg.counts[i] = 0;
                lg.sums[i * f..(i + 1) * f].fill(R::zero());
            }
            lg.touched.clear();
        });
    }

    pub fn touched_entries(&self) -> usize {
        self.levels.iter().map(|l| l.touched.len()).sum()
    }

    /// Dense copy of the summed gradient (the exact derivative).
    pub fn raw(&self) -> Vec<R> {
        self.levels.iter().flat_map(|l| l.sums.iter().copied()).collect()
    }

    /// Dense copy of the collision-averaged gradient: each entry's sum divided
    /// by its number of contributing touches.
    pub fn averaged(&self) -> Vec<R> {
        let f = self.features;
        self.levels
            .iter()
            .flat_map(|l| {
                l.sums.chunks_exact(f).zip(&l.counts).flat_map(move |(s, &c)| {
                    let div = R::from_u32(c.max(1)).expect("count fits");
                    s.iter().map(move |v| *v / div)
                })
            })
            .collect()
    }
}
