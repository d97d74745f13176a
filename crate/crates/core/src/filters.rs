//! Corpus quality filters applied before reconstruction.
//!
//! Stages run in a fixed order and an image is attributed to the first stage
//! it fails: file size, shape, near-duplicate removal via a DCT perceptual
//! hash, grayscale detection, saturation-histogram outliers, and blur
//! (variance of the Laplacian).

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, to_grayscale, ImageBuffer};

/// Laplacian variance is compared on intensities scaled to the 8-bit range.
pub const BLUR_INTENSITY_SCALE: f64 = 255.0;

const HASH_SIZE: usize = 32;
const HASH_BLOCK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Minimum on-disk size in bytes; smaller files are rejected.
    pub min_file_bytes: u64,
    pub min_width: usize,
    pub min_height: usize,
    /// Maximum Hamming distance for two hashes to count as duplicates.
    pub phash_hamming_threshold: u32,
    /// Minimum variance of the Laplacian, measured on 0..255 intensities.
    pub blur_threshold: f64,
    pub histogram_std_multiplier: f64,
    pub histogram_pixel_fraction: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_file_bytes: 10 * 1024,
            min_width: 128,
            min_height: 128,
            phash_hamming_threshold: 5,
            blur_threshold: 100.0,
            histogram_std_multiplier: 1.0,
            histogram_pixel_fraction: 0.5,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_threshold >= 0.0) || !(self.histogram_std_multiplier >= 0.0) {
            return Err(Error::Config("filter thresholds must be nonnegative".into()));
        }
        if !(self.histogram_pixel_fraction > 0.0 && self.histogram_pixel_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "histogram_pixel_fraction {} must lie in (0, 1]",
                self.histogram_pixel_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    FileSize,
    Shape,
    Duplicate,
    Grayscale,
    ColorHistogram,
    Blur,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Load,
        Stage::FileSize,
        Stage::Shape,
        Stage::Duplicate,
        Stage::Grayscale,
        Stage::ColorHistogram,
        Stage::Blur,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::FileSize => "file_size",
            Stage::Shape => "shape",
            Stage::Duplicate => "duplicate",
            Stage::Grayscale => "grayscale",
            Stage::ColorHistogram => "color_histogram",
            Stage::Blur => "blur",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Kept,
    Rejected { stage: Stage, reason: String },
}

impl Verdict {
    pub fn is_kept(&self) -> bool {
        matches!(self, Verdict::Kept)
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Verdict::Kept => None,
            Verdict::Rejected { stage, .. } => Some(*stage),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRecord {
    pub path: PathBuf,
    pub verdict: Verdict,
    /// Metric of the deciding stage (sharpness for kept images).
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterReport {
    pub records: Vec<FilterRecord>,
    pub stage_counts: BTreeMap<Stage, usize>,
    /// Mean and population std of per-image mean saturation over the images
    /// that reached the histogram stage.
    pub saturation: Option<(f64, f64)>,
}

impl FilterReport {
    pub fn survivors(&self) -> Vec<&Path> {
        self.records
            .iter()
            .filter(|r| r.verdict.is_kept())
            .map(|r| r.path.as_path())
            .collect()
    }

    pub fn rejected_count(&self) -> usize {
        self.records.iter().filter(|r| !r.verdict.is_kept()).count()
    }

    pub fn to_table(&self) -> String {
        let width = self
            .records
            .iter()
            .map(|r| r.path.display().to_string().len())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:<8}  {:<15}  {:>12}  reason", "path", "verdict", "stage", "metric");
        for r in &self.records {
            let (verdict, stage, reason) = match &r.verdict {
                Verdict::Kept => ("kept", "-".to_string(), String::new()),
                Verdict::Rejected { stage, reason } => ("rejected", stage.to_string(), reason.clone()),
            };
            let metric = r.metric.map(|m| format!("{m:.4}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<width$}  {:<8}  {:<15}  {:>12}  {}",
                r.path.display(),
                verdict,
                stage,
                metric,
                reason
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "kept {} of {} images",
            self.records.len() - self.rejected_count(),
            self.records.len()
        );
        for (stage, count) in &self.stage_counts {
            let _ = writeln!(out, "  rejected at {stage}: {count}");
        }
        if let Some((m, s)) = self.saturation {
            let _ = writeln!(out, "saturation mean {m:.6} std {s:.6}");
        }
        out
    }

    /// One tab-separated `key=value` record per image.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let (verdict, stage) = match &r.verdict {
                Verdict::Kept => ("kept", "none".to_string()),
                Verdict::Rejected { stage, .. } => ("rejected", stage.to_string()),
            };
            let metric = r.metric.map(|m| format!("{m}")).unwrap_or_else(|| "nan".into());
            let _ = writeln!(
                out,
                "path={}\tverdict={verdict}\tstage={stage}\tmetric={metric}",
                r.path.display()
            );
        }
        out
    }
}

/// (a) Passes iff the file is at least `min_bytes` long.
pub fn filter_file_size(path: impl AsRef<Path>, min_bytes: u64) -> Result<bool> {
    let path = path.as_ref();
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    Ok(meta.len() >= min_bytes)
}

/// (b) Passes iff both dimensions meet the minimum.
pub fn filter_shape(img: &ImageBuffer, min_width: usize, min_height: usize) -> bool {
    img.width() >= min_width && img.height() >= min_height
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PerceptualHash(pub u64);

impl PerceptualHash {
    pub fn distance(self, other: PerceptualHash) -> u32 {
        (self.0 ^ other.0).count_ones()
    }
}

impl fmt::Display for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Area-weighted resampling of a single-channel image.
fn resize_area(src: &[f32], w: usize, h: usize, ow: usize, oh: usize) -> Vec<f64> {
    fn axis_weights(n: usize, on: usize) -> Vec<Vec<(usize, f64)>> {
        let scale = n as f64 / on as f64;
        (0..on)
            .map(|o| {
                let lo = o as f64 * scale;
                let hi = lo + scale;
                let mut taps = Vec::new();
                let mut i = lo.floor() as usize;
                while (i as f64) < hi && i < n {
                    let cover = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    if cover > 0.0 {
                        taps.push((i, cover / scale));
                    }
                    i += 1;
                }
                taps
            })
            .collect()
    }
    let wx = axis_weights(w, ow);
    let wy = axis_weights(h, oh);
    let mut rows = vec![0.0f64; h * ow];
    for y in 0..h {
        for (ox, taps) in wx.iter().enumerate() {
            rows[y * ow + ox] = taps.iter().map(|&(x, t)| t * src[y * w + x] as f64).sum();
        }
    }
    let mut out = vec![0.0f64; oh * ow];
    for (oy, taps) in wy.iter().enumerate() {
        for ox in 0..ow {
            out[oy * ow + ox] = taps.iter().map(|&(y, t)| t * rows[y * ow + ox]).sum();
        }
    }
    out
}

/// 64-bit DCT hash: luma, 32x32 area resize, 2-D DCT-II, the 63 non-DC
/// coefficients of the low-frequency 8x8 block compared against their
/// median. Bit `i` holds coefficient `i + 1` in row-major block order; the
/// top bit is always zero.
pub fn perceptual_hash(img: &ImageBuffer) -> PerceptualHash {
    let gray = to_grayscale(img);
    let small = resize_area(gray.data(), gray.width(), gray.height(), HASH_SIZE, HASH_SIZE);

    let n = HASH_SIZE as f64;
    let basis: Vec<f64> = (0..HASH_BLOCK)
        .flat_map(|k| {
            (0..HASH_SIZE).map(move |i| (std::f64::consts::PI / n * (i as f64 + 0.5) * k as f64).cos())
        })
        .collect();
    // rows: tmp[k][x] = sum_y basis[k][y] * small[y][x]
    let mut tmp = vec![0.0f64; HASH_BLOCK * HASH_SIZE];
    for k in 0..HASH_BLOCK {
        for y in 0..HASH_SIZE {
            let b = basis[k * HASH_SIZE + y];
            for x in 0..HASH_SIZE {
                tmp[k * HASH_SIZE + x] += b * small[y * HASH_SIZE + x];
            }
        }
    }
    let mut coeffs = Vec::with_capacity(HASH_BLOCK * HASH_BLOCK - 1);
    for ky in 0..HASH_BLOCK {
        for kx in 0..HASH_BLOCK {
            if ky == 0 && kx == 0 {
                continue;
            }
            let v: f64 = (0..HASH_SIZE)
                .map(|x| basis[kx * HASH_SIZE + x] * tmp[ky * HASH_SIZE + x])
                .sum();
            coeffs.push(v);
        }
    }
    let mut sorted = coeffs.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let bits = coeffs
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > median)
        .fold(0u64, |acc, (i, _)| acc | (1u64 << i));
    PerceptualHash(bits)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupeItem {
    pub id: String,
    pub hash: PerceptualHash,
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicateGroup {
    /// Member ids in scan order; the first founded the group.
    pub members: Vec<String>,
    pub kept: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DedupeResult {
    pub kept: Vec<String>,
    pub groups: Vec<DuplicateGroup>,
}

/// Greedy clustering in input order. An item joins the first group whose
/// founder lies within `threshold` bits, otherwise it founds a new group.
/// Each group keeps its largest image, ties going to the smallest id.
pub fn dedupe(items: &[DedupeItem], threshold: u32) -> DedupeResult {
    let mut founders: Vec<PerceptualHash> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, item) in items.iter().enumerate() {
        match founders.iter().position(|f| f.distance(item.hash) <= threshold) {
            Some(g) => members[g].push(i),
            None => {
                founders.push(item.hash);
                members.push(vec![i]);
            }
        }
    }
    let groups: Vec<DuplicateGroup> = members
        .into_iter()
        .map(|idx| {
            let best = idx
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    items[b]
                        .pixels
                        .cmp(&items[a].pixels)
                        .then_with(|| items[a].id.cmp(&items[b].id))
                })
                .expect("groups are nonempty");
            DuplicateGroup {
                members: idx.iter().map(|&i| items[i].id.clone()).collect(),
                kept: items[best].id.clone(),
            }
        })
        .collect();
    DedupeResult {
        kept: groups.iter().map(|g| g.kept.clone()).collect(),
        groups,
    }
}

const GRAY_TOLERANCE: f32 = 1.0 / 255.0 + 1e-6;

/// Largest per-pixel channel spread (0 for single-channel images).
pub fn max_channel_spread(img: &ImageBuffer) -> f32 {
    if img.channels() == 1 {
        return 0.0;
    }
    img.pixels()
        .map(|p| p[0].max(p[1]).max(p[2]) - p[0].min(p[1]).min(p[2]))
        .fold(0.0, f32::max)
}

/// (d) Single channel, or three channels equal to within one 8-bit step.
pub fn is_grayscale(img: &ImageBuffer) -> bool {
    max_channel_spread(img) <= GRAY_TOLERANCE
}

/// HSV saturation `(max - min) / max`, zero for black.
pub fn saturation(rgb: &[f32]) -> f64 {
    let max = rgb[0].max(rgb[1]).max(rgb[2]) as f64;
    let min = rgb[0].min(rgb[1]).min(rgb[2]) as f64;
    if max <= 0.0 {
        0.0
    } else {
        (max - min) / max
    }
}

fn mean_saturation(img: &ImageBuffer) -> Result<f64> {
    if img.channels() != 3 {
        return Err(Error::Argument("saturation needs a 3-channel image".into()));
    }
    let n = img.pixel_count().max(1) as f64;
    Ok(img.pixels().map(saturation).sum::<f64>() / n)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population std of the per-image mean saturation.
pub fn saturation_statistics(corpus: &[ImageBuffer]) -> Result<(f64, f64)> {
    if corpus.is_empty() {
        return Err(Error::Argument("saturation statistics need a nonempty corpus".into()));
    }
    let means = corpus.iter().map(mean_saturation).collect::<Result<Vec<_>>>()?;
    Ok(mean_std(&means))
}

/// Fraction of pixels whose saturation falls outside `mean +- k * std`.
pub fn saturation_outlier_fraction(img: &ImageBuffer, stats: (f64, f64), k: f64) -> f64 {
    if img.channels() != 3 || img.pixel_count() == 0 {
        return 0.0;
    }
    let (lo, hi) = (stats.0 - k * stats.1, stats.0 + k * stats.1);
    let outside = img
        .pixels()
        .map(saturation)
        .filter(|s| *s < lo || *s > hi)
        .count();
    outside as f64 / img.pixel_count() as f64
}

/// (e) Rejects when more than `fraction` of the pixels are saturation outliers.
pub fn filter_color_histogram(img: &ImageBuffer, stats: (f64, f64), k: f64, fraction: f64) -> bool {
    saturation_outlier_fraction(img, stats, k) <= fraction
}

/// Population variance of the 4-neighbour Laplacian over the valid region
/// of the luma image, in squared `[0, 1]` intensity units.
pub fn laplacian_variance(img: &ImageBuffer) -> Result<f64> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(Error::Argument(format!(
            "laplacian needs at least 3x3 pixels, got {w}x{h}"
        )));
    }
    let g = to_grayscale(img);
    let d = g.data();
    let at = |x: usize, y: usize| d[y * w + x] as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let count = ((w - 2) * (h - 2)) as f64;
    let mut responses = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let r = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y);
            sum += r;
            responses.push(r);
        }
    }
    let mean = sum / count;
    for r in responses {
        sum_sq += (r - mean).powi(2);
    }
    Ok(sum_sq / count)
}

/// Blur statistic on the 8-bit intensity scale, compared against `blur_threshold`.
pub fn sharpness(img: &ImageBuffer) -> Result<f64> {
    Ok(laplacian_variance(img)? * BLUR_INTENSITY_SCALE * BLUR_INTENSITY_SCALE)
}

/// Per-image measurements gathered in one parallel pass.
struct Probe {
    bytes: u64,
    width: usize,
    height: usize,
    hash: PerceptualHash,
    spread: f32,
    mean_saturation: Option<f64>,
    sharpness: Option<f64>,
}

fn probe(path: &Path) -> std::result::Result<Probe, (Stage, String)> {
    let bytes = std::fs::metadata(path)
        .map_err(|e| (Stage::Load, format!("stat failed: {e}")))?
        .len();
    let img = load_image(path).map_err(|e| (Stage::Load, e.to_string()))?;
    Ok(Probe {
        bytes,
        width: img.width(),
        height: img.height(),
        hash: perceptual_hash(&img),
        spread: max_channel_spread(&img),
        mean_saturation: mean_saturation(&img).ok(),
        sharpness: sharpness(&img).ok(),
    })
}

/// Runs all stages over `paths`. Unreadable files are rejected at the load
/// stage; the batch never aborts on a single bad file.
pub fn run_filter_bank(paths: &[PathBuf], config: &FilterConfig) -> Result<FilterReport> {
    config.validate()?;
    let probes: Vec<_> = paths.par_iter().map(|p| probe(p)).collect();

    let mut verdicts: Vec<Option<(Verdict, Option<f64>)>> = vec![None; paths.len()];
    let reject = |v: &mut Option<(Verdict, Option<f64>)>, stage, reason: String, metric| {
        *v = Some((Verdict::Rejected { stage, reason }, metric));
    };

    for (i, p) in probes.iter().enumerate() {
        match p {
            Err((stage, reason)) => reject(&mut verdicts[i], *stage, reason.clone(), None),
            Ok(p) if p.bytes < config.min_file_bytes => reject(
                &mut verdicts[i],
                Stage::FileSize,
                format!("{} bytes < {}", p.bytes, config.min_file_bytes),
                Some(p.bytes as f64),
            ),
            Ok(p) if p.width < config.min_width || p.height < config.min_height => reject(
                &mut verdicts[i],
                Stage::Shape,
                format!(
                    "{}x{} below {}x{}",
                    p.width, p.height, config.min_width, config.min_height
                ),
                Some((p.width * p.height) as f64),
            ),
            Ok(_) => {}
        }
    }

    // (c) duplicates among the survivors, in manifest order
    let alive: Vec<usize> = (0..paths.len()).filter(|&i| verdicts[i].is_none()).collect();
    let items: Vec<DedupeItem> = alive
        .iter()
        .map(|&i| {
            let p = probes[i].as_ref().unwrap_or_else(|_| unreachable!("alive implies probed"));
            DedupeItem {
                id: paths[i].display().to_string(),
                hash: p.hash,
                pixels: p.width * p.height,
            }
        })
        .collect();
    let dd = dedupe(&items, config.phash_hamming_threshold);
    for group in &dd.groups {
        let kept_pos = items.iter().position(|it| it.id == group.kept).expect("kept is a member");
        for member in &group.members {
            if *member == group.kept {
                continue;
            }
            let pos = items.iter().position(|it| &it.id == member).expect("member exists");
            let dist = items[pos].hash.distance(items[kept_pos].hash);
            reject(
                &mut verdicts[alive[pos]],
                Stage::Duplicate,
                format!("near-duplicate of {}", group.kept),
                Some(dist as f64),
            );
        }
    }

    // (d) grayscale
    for i in 0..paths.len() {
        if verdicts[i].is_some() {
            continue;
        }
        let p = probes[i].as_ref().unwrap_or_else(|_| unreachable!("alive implies probed"));
        if p.spread <= GRAY_TOLERANCE {
            reject(
                &mut verdicts[i],
                Stage::Grayscale,
                "no chromatic content".into(),
                Some(p.spread as f64),
            );
        }
    }

    // (e) saturation histogram against statistics of the current survivors
    let alive: Vec<usize> = (0..paths.len()).filter(|&i| verdicts[i].is_none()).collect();
    let means: Vec<f64> = alive
        .iter()
        .filter_map(|&i| probes[i].as_ref().ok().and_then(|p| p.mean_saturation))
        .collect();
    let saturation = (!means.is_empty()).then(|| mean_std(&means));
    // one reference image, or identical means, give no spread to measure against
    let usable = saturation.filter(|s| means.len() >= 2 && s.1 > 0.0);
    if saturation.is_some() && usable.is_none() {
        log::info!("saturation stage skipped: reference spread is zero");
    }
    if let Some(stats) = usable {
        let fractions: Vec<std::result::Result<f64, String>> = alive
            .par_iter()
            .map(|&i| {
                load_image(&paths[i])
                    .map(|img| saturation_outlier_fraction(&img, stats, config.histogram_std_multiplier))
                    .map_err(|e| e.to_string())
            })
            .collect();
        for (&i, frac) in alive.iter().zip(fractions) {
            match frac {
                Err(e) => reject(&mut verdicts[i], Stage::Load, e, None),
                Ok(f) if f > config.histogram_pixel_fraction => reject(
                    &mut verdicts[i],
                    Stage::ColorHistogram,
                    format!("{:.1}% saturation outliers", f * 100.0),
                    Some(f),
                ),
                Ok(_) => {}
            }
        }
    }

    // (f) blur
    for i in 0..paths.len() {
        if verdicts[i].is_some() {
            continue;
        }
        let p = probes[i].as_ref().unwrap_or_else(|_| unreachable!("alive implies probed"));
        match p.sharpness {
            None => reject(&mut verdicts[i], Stage::Blur, "too small for a laplacian".into(), None),
            Some(s) if s < config.blur_threshold => reject(
                &mut verdicts[i],
                Stage::Blur,
                format!("sharpness {s:.2} < {}", config.blur_threshold),
                Some(s),
            ),
            Some(s) => verdicts[i] = Some((Verdict::Kept, Some(s))),
        }
    }

    let mut stage_counts = BTreeMap::new();
    let records: Vec<FilterRecord> = paths
        .iter()
        .zip(verdicts)
        .map(|(path, v)| {
            let (verdict, metric) = v.expect("every image gets a verdict");
            if let Some(stage) = verdict.stage() {
                *stage_counts.entry(stage).or_insert(0) += 1;
            }
            FilterRecord {
                path: path.clone(),
                verdict,
                metric,
            }
        })
        .collect();
    Ok(FilterReport {
        records,
        stage_counts,
        saturation,
    })
}

/// Reads a manifest with one image path per line; blank lines and `#`
/// comments are skipped. Relative paths resolve against the manifest's
/// directory.
pub fn read_path_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect())
}
