//! A 20-image corpus with one designed outcome per file:
//!
//! | files | content | verdict |
//! |---|---|---|
//! | 10 | clean frames | kept |
//! | 3 | one frame under three colour filters | first kept, two duplicates |
//! | 1 | single-channel frame | grayscale |
//! | 1 | RGB frame with R = G = B | grayscale |
//! | 1 | frame at saturation 0.95 | colour histogram |
//! | 2 | Gaussian-blurred frames | blur |
//! | 1 | 100x100 thumbnail | shape |
//! | 1 | flat 160x160 frame, a few hundred bytes | file size |

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use marf::filters::Stage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIZE: u32 = 160;
pub const CLEAN_SATURATION: f64 = 0.35;

pub struct CorpusEntry {
    pub path: PathBuf,
    pub label: &'static str,
    /// `None` means the image should survive.
    pub expected: Option<Stage>,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32;
    let f = h6 - i as f64;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Value channel: a smooth random 4x4 layout plus fine noise for texture.
fn value_field(seed: u64, size: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid: Vec<f64> = (0..25).map(|_| rng.random_range(0.45..0.85)).collect();
    let n = size as usize;
    let mut out = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let gx = x as f64 / (n - 1) as f64 * 4.0;
            let gy = y as f64 / (n - 1) as f64 * 4.0;
            let (ix, iy) = ((gx as usize).min(3), (gy as usize).min(3));
            let (fx, fy) = (gx - ix as f64, gy - iy as f64);
            let at = |i: usize, j: usize| grid[j * 5 + i];
            let smooth = at(ix, iy) * (1.0 - fx) * (1.0 - fy)
                + at(ix + 1, iy) * fx * (1.0 - fy)
                + at(ix, iy + 1) * (1.0 - fx) * fy
                + at(ix + 1, iy + 1) * fx * fy;
            out.push((smooth + rng.random_range(-0.08..0.08)).clamp(0.3, 0.95));
        }
    }
    out
}

fn frame(seed: u64, saturation: f64, size: u32) -> Vec<[f64; 3]> {
    let hue = (seed as f64 * 0.137).fract();
    value_field(seed, size)
        .into_iter()
        .map(|v| hsv(hue, saturation, v))
        .collect()
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save_rgb(pixels: &[[f64; 3]], size: u32, path: &Path) {
    let img = RgbImage::from_fn(size, size, |x, y| {
        Rgb(pixels[(y * size + x) as usize].map(to_u8))
    });
    img.save(path).unwrap();
}

fn gaussian_blur(pixels: &[[f64; 3]], size: u32, sigma: f64) -> Vec<[f64; 3]> {
    let r = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let n = size as i64;
    let pass = |src: &[[f64; 3]], horizontal: bool| -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; src.len()];
        for y in 0..n {
            for x in 0..n {
                let mut acc = [0.0; 3];
                for (k, w) in (-r..=r).zip(&kernel) {
                    let (sx, sy) = if horizontal {
                        ((x + k).clamp(0, n - 1), y)
                    } else {
                        (x, (y + k).clamp(0, n - 1))
                    };
                    let p = src[(sy * n + sx) as usize];
                    for c in 0..3 {
                        acc[c] += w * p[c];
                    }
                }
                out[(y * n + x) as usize] = acc.map(|a| a / norm);
            }
        }
        out
    };
    pass(&pass(pixels, true), false)
}

/// Writes the corpus into `dir` and returns it in manifest order.
pub fn build(dir: &Path) -> Vec<CorpusEntry> {
    std::fs::create_dir_all(dir).unwrap();
    let mut out = Vec::new();
    let mut add = |name: &str, label: &'static str, expected: Option<Stage>| {
        let path = dir.join(name);
        out.push(CorpusEntry {
            path: path.clone(),
            label,
            expected,
        });
        path
    };

    for i in 0..10 {
        let p = add(&format!("clean_{i:02}.png"), "clean", None);
        save_rgb(&frame(100 + i, CLEAN_SATURATION, SIZE), SIZE, &p);
    }

    let source = frame(200, CLEAN_SATURATION, SIZE);
    for (j, gains) in [[1.0, 1.0, 1.0], [0.92, 1.0, 0.96], [1.0, 0.9, 0.95]].iter().enumerate() {
        let expected = if j == 0 { None } else { Some(Stage::Duplicate) };
        let p = add(&format!("filtered_{j}.png"), "color-filtered duplicate", expected);
        let filtered: Vec<[f64; 3]> = source
            .iter()
            .map(|px| [px[0] * gains[0], px[1] * gains[1], px[2] * gains[2]])
            .collect();
        save_rgb(&filtered, SIZE, &p);
    }

    let p = add("gray_single_channel.png", "single-channel grayscale", Some(Stage::Grayscale));
    let v = value_field(300, SIZE);
    GrayImage::from_fn(SIZE, SIZE, |x, y| Luma([to_u8(v[(y * SIZE + x) as usize])]))
        .save(&p)
        .unwrap();

    let p = add("gray_rgb.png", "R=G=B grayscale", Some(Stage::Grayscale));
    let v = value_field(301, SIZE);
    let gray: Vec<[f64; 3]> = v.iter().map(|&g| [g; 3]).collect();
    save_rgb(&gray, SIZE, &p);

    let p = add("oversaturated.png", "saturation outlier", Some(Stage::ColorHistogram));
    save_rgb(&frame(400, 0.95, SIZE), SIZE, &p);

    for (j, seed) in [500, 501].into_iter().enumerate() {
        let p = add(&format!("blurred_{j}.png"), "Gaussian-blurred", Some(Stage::Blur));
        save_rgb(&gaussian_blur(&frame(seed, CLEAN_SATURATION, SIZE), SIZE, 2.5), SIZE, &p);
    }

    let p = add("thumbnail.png", "thumbnail", Some(Stage::Shape));
    save_rgb(&frame(600, CLEAN_SATURATION, 100), 100, &p);

    let p = add("undersized.png", "undersized file", Some(Stage::FileSize));
    save_rgb(&vec![hsv(0.1, CLEAN_SATURATION, 0.6); (SIZE * SIZE) as usize], SIZE, &p);

    out
}
