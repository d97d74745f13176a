//! Binary checkpoint container: `MARF` magic, format version, the training
//! configuration as length-prefixed TOML, step and running PSNR, then named
//! parameter sections with shape headers. Little-endian throughout.

use std::io::{Read, Write};
use std::path::Path;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::field::RadianceField;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MARF";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub psnr: f64,
    pub field: RadianceField<f32>,
}

struct Section<'a> {
    name: String,
    dims: Vec<u32>,
    data: &'a [f32],
}

fn sections(field: &RadianceField<f32>) -> Vec<Section<'_>> {
    let mut out = Vec::new();
    let f = field.config.grid.features_per_level;
    for (l, level) in field.grid.levels().iter().enumerate() {
        out.push(Section {
            name: format!("grid.{l}"),
            dims: vec![level.entries, f as u32],
            data: &field.grid.params()[level.offset * f..(level.offset + level.entries as usize) * f],
        });
    }
    for (net, mlp) in [("density", &field.density), ("color", &field.color)] {
        let mut off = 0;
        for (l, &(i, o)) in mlp.shapes().iter().enumerate() {
            out.push(Section {
                name: format!("{net}.{l}.weight"),
                dims: vec![o as u32, i as u32],
                data: &mlp.params()[off..off + i * o],
            });
            off += i * o;
            out.push(Section {
                name: format!("{net}.{l}.bias"),
                dims: vec![o as u32],
                data: &mlp.params()[off..off + o],
            });
            off += o;
        }
    }
    out
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = self.config.to_toml();
        b.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        b.extend_from_slice(cfg.as_bytes());
        b.extend_from_slice(&self.step.to_le_bytes());
        b.extend_from_slice(&self.psnr.to_le_bytes());
        let secs = sections(&self.field);
        b.extend_from_slice(&(secs.len() as u32).to_le_bytes());
        for s in secs {
            b.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
            b.extend_from_slice(s.name.as_bytes());
            b.extend_from_slice(&(s.dims.len() as u32).to_le_bytes());
            for d in &s.dims {
                b.extend_from_slice(&d.to_le_bytes());
            }
            b.reserve(s.data.len() * 4);
            for v in s.data {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let n = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(n)?).map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
        let config = TrainConfig::from_toml(text).map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let step = r.u64()?;
        let psnr = f64::from_le_bytes(r.array()?);
        let mut field = RadianceField::<f32>::zeros(config.field).map_err(|e| Error::Checkpoint(e.to_string()))?;
        field.seed = config.seed;
        let expected: Vec<(String, Vec<u32>)> = sections(&field).into_iter().map(|s| (s.name, s.dims)).collect();
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter sections, found {count}",
                expected.len()
            )));
        }
        let mut grid = Vec::with_capacity(field.grid.params().len());
        let mut density = Vec::with_capacity(field.density.params().len());
        let mut color = Vec::with_capacity(field.color.params().len());
        for (want_name, want_dims) in expected {
            let n = r.u32()? as usize;
            let name = String::from_utf8_lossy(r.take(n)?).into_owned();
            let nd = r.u32()? as usize;
            let dims = (0..nd).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            if name != want_name || dims != want_dims {
                return Err(Error::Checkpoint(format!(
                    "section {name} {dims:?} does not match configuration ({want_name} {want_dims:?})"
                )));
            }
            let len = dims.iter().map(|d| *d as usize).product::<usize>();
            let raw = r.take(len * 4)?;
            let dst = if name.starts_with("grid.") {
                &mut grid
            } else if name.starts_with("density.") {
                &mut density
            } else {
                &mut color
            };
            dst.extend(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if grid.iter().chain(&density).chain(&color).any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        let field = RadianceField::from_parts(config.field, config.seed, grid, density, color)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Checkpoint {
            config,
            step,
            psnr,
            field,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
