//! Row-major rasters: colour images in `[0, 1]` and depth maps where zero
//! marks an invalid pixel.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::checkpoint::write_atomic;

/// H×W×C image, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn pixel(&self, col: usize, row: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, col: usize, row: usize) -> &mut [f64] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Bilinear sample at a continuous position; pixel centres sit at
    /// `k + 0.5` and samples beyond the border read as zero.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f64]) {
        let u = x - 0.5;
        let v = y - 0.5;
        let j0 = u.floor();
        let i0 = v.floor();
        let (fu, fv) = (u - j0, v - i0);
        out.fill(0.0);
        for (di, wi) in [(0, 1.0 - fv), (1, fv)] {
            for (dj, wj) in [(0, 1.0 - fu), (1, fu)] {
                let w = wi * wj;
                if w == 0.0 {
                    continue;
                }
                let (r, c) = (i0 as i64 + di, j0 as i64 + dj);
                if r < 0 || c < 0 || r >= self.height as i64 || c >= self.width as i64 {
                    continue;
                }
                for (o, p) in out.iter_mut().zip(self.pixel(c as usize, r as usize)) {
                    *o += w * p;
                }
            }
        }
    }

    /// Mean over channels.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks(self.channels)
            .map(|p| p.iter().sum::<f64>() / self.channels as f64)
            .collect()
    }

    /// Binary 8-bit PPM (`P6`); single-channel images are replicated.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in self.data.chunks(self.channels) {
            for k in 0..3 {
                let v = p[k.min(self.channels - 1)];
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let bad = |d: &str| Error::Format {
            what: "PPM image",
            detail: d.to_string(),
        };
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?.to_string());
        }
        pos += 1;
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(bad("only 8-bit P6 is supported"));
        }
        let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
        let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
        let body = bytes.get(pos..pos + width * height * 3).ok_or_else(|| bad("truncated pixels"))?;
        Ok(Self {
            width,
            height,
            channels: 3,
            data: body.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_ppm())
    }

    pub fn load_ppm(path: &Path) -> Result<Self> {
        Self::from_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// H×W depth map.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

pub const DEPTH_MAGIC: &[u8; 4] = b"RMD1";

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Depth of the pixel containing a continuous position, `0` outside.
    pub fn at(&self, x: f64, y: f64) -> f64 {
        if !(x >= 0.0 && y >= 0.0) {
            return 0.0;
        }
        let (c, r) = (x as usize, y as usize);
        if c >= self.width || r >= self.height {
            return 0.0;
        }
        self.get(c, r)
    }

    /// 16-byte header (magic, H, W as `u32`, four reserved zero bytes) then
    /// little-endian `f64` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = DEPTH_MAGIC.to_vec();
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&[0u8; 4]);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: &str| Error::Format {
            what: "depth map",
            detail: d.to_string(),
        };
        if bytes.len() < 16 || &bytes[..4] != DEPTH_MAGIC {
            return Err(bad("bad magic"));
        }
        let height = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let width = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() != width * height * 8 {
            return Err(bad("payload size does not match header"));
        }
        Ok(Self {
            width,
            height,
            data: body
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
