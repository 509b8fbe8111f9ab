//! Binary stacks of gridded fields.
//!
//! Layout, little-endian: magic `GRDS`, `u32` version, `u32` channel count,
//! `u64` T, H, W, `u32` provenance length and that many UTF-8 bytes, then
//! `T*C*H*W` `f64` values ordered `[t][c][y][x]`. NaN marks a missing cell.
//! Row `y = 0` is the southern edge of the grid.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const GRIDSTACK_MAGIC: &[u8; 4] = b"GRDS";
pub const GRIDSTACK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    pub channels: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    /// Free text recording how the stack was produced.
    pub provenance: String,
    data: Vec<f64>,
}

impl GridStack {
    pub fn new(channels: usize, t: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("grid stack needs channels, H, W >= 1, got {channels}x{h}x{w}")));
        }
        if data.len() != channels * t * h * w {
            return Err(Error::Shape(format!(
                "grid stack {t}x{channels}x{h}x{w} needs {} values, got {}",
                channels * t * h * w,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            t,
            h,
            w,
            provenance: String::new(),
            data,
        })
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    /// Stacks same-shaped `[H*W]` frames per time step, `frames[t][c]`.
    pub fn from_frames(h: usize, w: usize, frames: &[Vec<&[f64]>]) -> Result<Self> {
        let channels = frames.first().map_or(1, Vec::len);
        let mut data = Vec::with_capacity(frames.len() * channels * h * w);
        for (t, step) in frames.iter().enumerate() {
            if step.len() != channels {
                return Err(Error::Shape(format!("step {t} has {} channels, expected {channels}", step.len())));
            }
            for f in step {
                if f.len() != h * w {
                    return Err(Error::Shape(format!("step {t} frame has {} cells, expected {}", f.len(), h * w)));
                }
                data.extend_from_slice(f);
            }
        }
        Self::new(channels, frames.len(), h, w, data)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// The `[H*W]` frame of channel `c` at step `t`.
    pub fn frame(&self, t: usize, c: usize) -> Result<&[f64]> {
        if t >= self.t || c >= self.channels {
            return Err(Error::Shape(format!(
                "frame (t={t}, c={c}) out of range for {} steps x {} channels",
                self.t, self.channels
            )));
        }
        let start = (t * self.channels + c) * self.plane();
        Ok(&self.data[start..start + self.plane()])
    }

    /// Every step of one channel, concatenated.
    pub fn channel(&self, c: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.t * self.plane());
        for t in 0..self.t {
            out.extend_from_slice(self.frame(t, c)?);
        }
        Ok(out)
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let prov = self.provenance.as_bytes();
        let mut buf = Vec::with_capacity(48 + prov.len() + 8 * self.data.len());
        buf.extend_from_slice(GRIDSTACK_MAGIC);
        buf.extend_from_slice(&GRIDSTACK_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.channels as u32).to_le_bytes());
        for d in [self.t, self.h, self.w] {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&(prov.len() as u32).to_le_bytes());
        buf.extend_from_slice(prov);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != GRIDSTACK_MAGIC {
            return Err(Error::Format("not a grid stack (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != GRIDSTACK_VERSION {
            return Err(Error::Format(format!("unsupported grid stack version {version}")));
        }
        let channels = r.u32()? as usize;
        let (t, h, w) = (r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
        let prov_len = r.u32()? as usize;
        let provenance = String::from_utf8(r.take(prov_len)?.to_vec())
            .map_err(|_| Error::Format("grid stack provenance is not UTF-8".into()))?;
        let count = channels
            .checked_mul(t)
            .and_then(|n| n.checked_mul(h))
            .and_then(|n| n.checked_mul(w))
            .ok_or_else(|| Error::Format("grid stack dimensions overflow".into()))?;
        let body = r.take(count.checked_mul(8).ok_or_else(|| Error::Format("grid stack too large".into()))?)?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after grid stack", bytes.len() - r.pos)));
        }
        let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self::new(channels, t, h, w, data)?.with_provenance(provenance))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("grid stack truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
