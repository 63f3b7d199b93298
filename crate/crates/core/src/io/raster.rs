//! Precomputed per-pixel feature rasters.
//!
//! Layout (little-endian): magic `COFF2D`, `u32` height, `u32` width,
//! `u32` dim, then `height·width·dim` `f32` values in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const RASTER_MAGIC: &[u8; 6] = b"COFF2D";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRaster {
    pub height: u32,
    pub width: u32,
    pub dim: u32,
    pub data: Vec<f32>,
}

impl FeatureRaster {
    pub fn new(height: u32, width: u32, dim: u32, data: Vec<f32>) -> Result<Self> {
        let expected = height as usize * width as usize * dim as usize;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "feature raster values",
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let d = self.dim as usize;
        let o = (y as usize * self.width as usize + x as usize) * d;
        &self.data[o..o + d]
    }
}

pub fn encode_raster(r: &FeatureRaster) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + r.data.len() * 4);
    out.extend_from_slice(RASTER_MAGIC);
    for v in [r.height, r.width, r.dim] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &r.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raster(bytes: &[u8], path: &Path) -> Result<FeatureRaster> {
    let bad = |msg: &str| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < 18 || &bytes[..6] != RASTER_MAGIC {
        return Err(bad("missing COFF2D header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap());
    let (height, width, dim) = (word(0), word(1), word(2));
    let count = height as usize * width as usize * dim as usize;
    let body = &bytes[18..];
    if body.len() != count * 4 {
        return Err(Error::DimensionMismatch {
            what: "feature raster payload bytes",
            expected: count * 4,
            got: body.len(),
        });
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureRaster {
        height,
        width,
        dim,
        data,
    })
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<FeatureRaster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raster(&bytes, path)
}

pub fn save_raster(path: impl AsRef<Path>, r: &FeatureRaster) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_raster(r)).map_err(|e| Error::io(path, e))
}
