//! Adapter file format (`PRDL`), little-endian:
//!
//! ```text
//! "PRDL" | version u8 | rank u32 | target count u16
//! per target: tag u8 (1 = W1, 2 = W2) | m u32 | n u32 | scaling f32
//!             | B f32[m*r] row-major | A f32[r*n] row-major
//! ```
//!
//! Adapters are stored unmerged, next to (not inside) the base snapshot.

use std::path::Path;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lora::{LoraAdapter, LoraFactor, LoraTarget};

pub const ADAPTER_MAGIC: &[u8; 4] = b"PRDL";
const ADAPTER_VERSION: u8 = 1;

impl LoraAdapter {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(ADAPTER_MAGIC);
        w.u8(ADAPTER_VERSION);
        w.u32(self.rank as u32);
        w.u16(self.factors.len() as u16);
        for f in &self.factors {
            w.u8(f.target.tag());
            w.u32(f.b.rows() as u32);
            w.u32(f.a.cols() as u32);
            w.f32(f.scaling as f32);
            w.f64_as_f32(f.b.data());
            w.f64_as_f32(f.a.data());
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4, "magic")? != ADAPTER_MAGIC {
            return Err(Error::malformed(0, "bad adapter magic"));
        }
        let version = r.u8("version")?;
        if version != ADAPTER_VERSION {
            return Err(r.malformed(format!("unsupported adapter version {version}")));
        }
        let rank = r.u32("rank")? as usize;
        let count = r.u16("target count")?;
        let mut factors: Vec<LoraFactor> = Vec::with_capacity(count.min(2) as usize);
        for _ in 0..count {
            let at = r.offset();
            let tag = r.u8("target tag")?;
            let target = LoraTarget::from_tag(tag)
                .ok_or_else(|| Error::malformed(at, format!("unknown target tag {tag}")))?;
            if factors.iter().any(|f| f.target == target) {
                return Err(Error::malformed(at, format!("duplicate target {target:?}")));
            }
            let m = r.u32("rows")? as usize;
            let n = r.u32("cols")? as usize;
            if rank == 0 || rank > m.min(n) {
                return Err(r.malformed(format!("rank {rank} invalid for {m}x{n} target")));
            }
            let at = r.offset();
            let scaling = r.f32("scaling")?;
            if !(scaling > 0.0 && scaling.is_finite()) {
                return Err(Error::malformed(at, format!("scaling {scaling} not positive")));
            }
            let cells = m
                .checked_mul(rank)
                .and_then(|b| n.checked_mul(rank).and_then(|a| a.checked_add(b)))
                .ok_or_else(|| r.malformed("factor size overflow"))?;
            if cells.saturating_mul(4) > r.remaining() {
                return Err(r.malformed("truncated factor data"));
            }
            let b = Matrix::from_vec(m, rank, r.f32_vec_as_f64(m * rank, "B")?);
            let a = Matrix::from_vec(rank, n, r.f32_vec_as_f64(rank * n, "A")?);
            factors.push(LoraFactor {
                target,
                b,
                a,
                scaling: scaling as f64,
            });
        }
        r.expect_end()?;
        Ok(LoraAdapter { rank, factors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
