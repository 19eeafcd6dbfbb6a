//! Binary dump of angle-domain channel tensors.
//!
//! Layout (all little-endian): a 16-byte header of four `u32` values
//! `n_r, n_t, taps, count`, followed by `count` tensors of
//! `n_r·n_t·taps` complex64 entries (`f32` real then `f32` imaginary).
//! Within a tensor the receive index varies fastest, then transmit, then tap.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::C64;

pub const HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelArtifact {
    pub n_r: usize,
    pub n_t: usize,
    pub taps: usize,
    pub tensors: Vec<Vec<C64>>,
}

impl ChannelArtifact {
    pub fn tensor_len(&self) -> usize {
        self.n_r * self.n_t * self.taps
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let len = self.tensor_len();
        if let Some(t) = self.tensors.iter().find(|t| t.len() != len) {
            return Err(Error::DimensionMismatch(format!("tensor of {} entries, expected {len}", t.len())));
        }
        let dims = [self.n_r, self.n_t, self.taps, self.tensors.len()];
        for d in dims {
            let d = u32::try_from(d).map_err(|_| Error::DimensionMismatch(format!("dimension {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(8 * len);
        for t in &self.tensors {
            buf.clear();
            for v in t {
                buf.extend_from_slice(&(v.re as f32).to_le_bytes());
                buf.extend_from_slice(&(v.im as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_BYTES];
        r.read_exact(&mut header)?;
        let dim = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
        let (n_r, n_t, taps, count) = (dim(0), dim(1), dim(2), dim(3));
        let len = n_r * n_t * taps;
        let mut tensors = Vec::with_capacity(count);
        let mut buf = vec![0u8; 8 * len];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            let t = buf
                .chunks_exact(8)
                .map(|c| {
                    let re = f32::from_le_bytes(c[..4].try_into().expect("4 bytes"));
                    let im = f32::from_le_bytes(c[4..].try_into().expect("4 bytes"));
                    C64::new(re as f64, im as f64)
                })
                .collect();
            tensors.push(t);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::Io("trailing bytes after the last tensor".into()));
        }
        Ok(ChannelArtifact { n_r, n_t, taps, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
