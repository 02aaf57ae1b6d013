//! Field checkpoints.
//!
//! Layout, all little-endian: magic `LIFTFLD1`; u32 hidden, resolution,
//! mlp_width, additive flag, level count, then one u32 per level; f64
//! init_noise; six f64 bounds (lo xyz, hi xyz); u64 parameter count; the
//! parameters as f64 (planes row-major per plane, then MLP weights).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{DistortionField, FieldConfig};
use crate::geom::Vec3;

const MAGIC: &[u8; 8] = b"LIFTFLD1";

pub fn write_field_to(w: &mut impl Write, f: &DistortionField) -> Result<()> {
    let c = &f.config;
    let mut buf = Vec::with_capacity(64 + f.params.len() * 8);
    buf.extend_from_slice(MAGIC);
    let u = |v: usize| u32::try_from(v).map_err(|_| Error::format("checkpoint", "dimension exceeds u32"));
    for v in [c.hidden, c.resolution, c.mlp_width, c.additive_scale as usize, c.levels.len()] {
        buf.extend_from_slice(&u(v)?.to_le_bytes());
    }
    for l in &c.levels {
        buf.extend_from_slice(&u(*l)?.to_le_bytes());
    }
    buf.extend_from_slice(&c.init_noise.to_le_bytes());
    for v in f.bounds.0.iter().chain(f.bounds.1.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(f.params.len() as u64).to_le_bytes());
    for p in &f.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.0.len() < N {
            return Err(Error::format("checkpoint", "truncated"));
        }
        let (a, b) = self.0.split_at(N);
        self.0 = b;
        Ok(a.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn read_field_from(r: &mut impl Read) -> Result<DistortionField> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor(&bytes);
    if &c.take::<8>()? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let hidden = c.u32()?;
    let resolution = c.u32()?;
    let mlp_width = c.u32()?;
    let additive = match c.u32()? {
        0 => false,
        1 => true,
        v => return Err(Error::format("checkpoint", format!("bad additive flag {v}"))),
    };
    let n_levels = c.u32()?;
    if n_levels > 64 {
        return Err(Error::format("checkpoint", "too many levels"));
    }
    let levels = (0..n_levels).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let init_noise = c.f64()?;
    let mut b = [0.0; 6];
    for v in &mut b {
        *v = c.f64()?;
    }
    let count = u64::from_le_bytes(c.take()?) as usize;
    if c.0.len() != count.saturating_mul(8) {
        return Err(Error::format("checkpoint", format!("expected {count} parameters, found {} bytes", c.0.len())));
    }
    let params = c.0.chunks_exact(8).map(|v| f64::from_le_bytes(v.try_into().unwrap())).collect();
    let config = FieldConfig {
        hidden,
        resolution,
        levels,
        mlp_width,
        additive_scale: additive,
        init_noise,
    };
    DistortionField::from_parts(config, (Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5])), params)
        .map_err(|e| Error::format("checkpoint", e.to_string()))
}

pub fn write_field(path: &Path, f: &DistortionField) -> Result<()> {
    super::create_parent(path)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_field_to(&mut w, f)?;
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<DistortionField> {
    read_field_from(&mut std::fs::File::open(path)?)
}
