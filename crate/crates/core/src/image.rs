//! Normalized floating-point image buffers and PNG/JPEG codecs.
//!
//! Every intensity lives in `[0, 1]`; 8-bit sources are divided by 255 on
//! load and rounded back on save. Alpha channels are dropped.

use std::path::Path;

use ::image::{DynamicImage, GrayImage, ImageReader, RgbImage};

use crate::error::{Error, Result};

/// Rec. 601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Row-major `height x width x channels` intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Format(format!(
                "{channels} channels; only 1 or 3 are supported"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Argument(format!(
                "buffer of {} values does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a buffer, clamping every value into `[0, 1]` (NaN maps to 0).
    pub fn from_clamped(width: usize, height: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(width, height, channels, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.channels)
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Applies `f` to every intensity and clamps the result into `[0, 1]`.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> ImageBuffer {
        let data = self
            .data
            .iter()
            .map(|&v| f(v).clamp(0.0, 1.0))
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }

    /// Per-channel gains, clamped. Only meaningful for 3-channel images.
    pub fn scale_channels(&self, gains: [f32; 3]) -> ImageBuffer {
        let mut data = self.data.clone();
        if self.channels == 3 {
            for px in data.chunks_exact_mut(3) {
                for c in 0..3 {
                    px[c] = (px[c] * gains[c]).clamp(0.0, 1.0);
                }
            }
        } else {
            for v in &mut data {
                *v = (*v * gains[0]).clamp(0.0, 1.0);
            }
        }
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }

    fn to_dynamic(&self) -> DynamicImage {
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("length checked"))
        } else {
            DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("length checked"))
        }
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decodes a PNG or JPEG file into a normalized buffer.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let decode_err = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    from_dynamic(img).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Decodes an in-memory PNG or JPEG.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer> {
    let img = ::image::load_from_memory(bytes).map_err(|e| Error::Decode {
        path: "<memory>".into(),
        message: e.to_string(),
    })?;
    from_dynamic(img)
}

fn from_dynamic(img: DynamicImage) -> Result<ImageBuffer> {
    use ::image::ColorType;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let color = img.color();
    let (channels, raw): (usize, Vec<f32>) = match color {
        ColorType::L8 | ColorType::La8 => {
            (1, img.to_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
        }
        ColorType::Rgb8 | ColorType::Rgba8 => {
            (3, img.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
        }
        ColorType::L16 | ColorType::La16 => (
            1,
            img.to_luma16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        ),
        ColorType::Rgb16 | ColorType::Rgba16 => (
            3,
            img.to_rgb16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        ),
        other => return Err(Error::Format(format!("unsupported channel layout {other:?}"))),
    };
    ImageBuffer::new(w, h, channels, raw)
}

/// Writes the buffer as an 8-bit PNG (grayscale or RGB).
pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.to_dynamic()
        .save_with_format(path, ::image::ImageFormat::Png)
        .map_err(|e| match e {
            ::image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::io(path, std::io::Error::other(other.to_string())),
        })
}

/// Luma conversion with Rec. 601 weights; single-channel input is copied.
pub fn to_grayscale(img: &ImageBuffer) -> ImageBuffer {
    if img.channels == 1 {
        return img.clone();
    }
    let [wr, wg, wb] = LUMA_WEIGHTS;
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| (wr * p[0] + wg * p[1] + wb * p[2]).clamp(0.0, 1.0))
        .collect();
    ImageBuffer {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    }
}
