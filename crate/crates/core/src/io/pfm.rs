//! Portable float maps: `PF` (RGB) or `Pf` (gray) header, little-endian
//! samples announced by a negative scale, rows stored bottom-up.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::imaging::{DepthKind, DepthMap, PointMap};

/// Samples are row-major from the top row, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Pfm {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::format("pfm", format!("{channels} channels")));
        }
        if data.len() != width * height * channels {
            return Err(Error::format("pfm", format!("{} samples for {width}x{height}x{channels}", data.len())));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Bitwise comparison, so NaN samples compare equal to themselves.
    pub fn bit_eq(&self, other: &Pfm) -> bool {
        (self.width, self.height, self.channels) == (other.width, other.height, other.channels)
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub fn write_pfm_to(w: &mut impl Write, pfm: &Pfm) -> Result<()> {
    let tag = if pfm.channels == 3 { "PF" } else { "Pf" };
    write!(w, "{tag}\n{} {}\n-1.0\n", pfm.width, pfm.height)?;
    let row = pfm.width * pfm.channels;
    let mut buf = Vec::with_capacity(pfm.data.len() * 4);
    for y in (0..pfm.height).rev() {
        for v in &pfm.data[y * row..(y + 1) * row] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn header_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = Vec::new();
    loop {
        let mut b = [0u8];
        if r.read(&mut b)? == 0 {
            break;
        }
        if b[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(b[0]);
    }
    if tok.is_empty() {
        return Err(Error::format("pfm", "truncated header"));
    }
    String::from_utf8(tok).map_err(|_| Error::format("pfm", "non-ascii header"))
}

pub fn read_pfm_from(r: &mut impl BufRead) -> Result<Pfm> {
    let channels = match header_token(r)?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        t => return Err(Error::format("pfm", format!("bad magic {t:?}"))),
    };
    let parse = |s: String| s.parse::<usize>().map_err(|_| Error::format("pfm", format!("bad dimension {s:?}")));
    let width = parse(header_token(r)?)?;
    let height = parse(header_token(r)?)?;
    let scale: f64 = header_token(r)?
        .parse()
        .map_err(|_| Error::format("pfm", "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format("pfm", "zero scale"));
    }
    let little = scale < 0.0;
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::format("pfm", "dimensions overflow"))?;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw).map_err(|_| Error::format("pfm", "truncated data"))?;
    let row = width * channels;
    let mut data = vec![0f32; n];
    for (k, b) in raw.chunks_exact(4).enumerate() {
        let b = [b[0], b[1], b[2], b[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (file_row, col) = (k / row.max(1), k % row.max(1));
        data[(height - 1 - file_row) * row + col] = v;
    }
    Pfm::new(width, height, channels, data)
}

pub fn write_pfm(path: &Path, pfm: &Pfm) -> Result<()> {
    super::create_parent(path)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_pfm_to(&mut w, pfm)?;
    w.flush()?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<Pfm> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_pfm_from(&mut r)
}

/// Invalid pixels become NaN.
pub fn depth_to_pfm(d: &DepthMap) -> Pfm {
    let data = d
        .data
        .iter()
        .zip(&d.valid)
        .map(|(v, ok)| if *ok { *v as f32 } else { f32::NAN })
        .collect();
    Pfm {
        width: d.width,
        height: d.height,
        channels: 1,
        data,
    }
}

/// NaN pixels become invalid; so do non-positive ones unless `kind` is relative.
pub fn depth_from_pfm(p: &Pfm, kind: DepthKind) -> Result<DepthMap> {
    if p.channels != 1 {
        return Err(Error::format("pfm", "depth maps have one channel"));
    }
    let valid: Vec<bool> = p
        .data
        .iter()
        .map(|v| v.is_finite() && (kind == DepthKind::Relative || *v > 0.0))
        .collect();
    let data = p
        .data
        .iter()
        .zip(&valid)
        .map(|(v, ok)| if *ok { *v as f64 } else { 0.0 })
        .collect();
    DepthMap::with_mask(p.width, p.height, data, valid, kind)
}

/// Points as a 3-channel map and confidences as a 1-channel map.
pub fn pointmap_to_pfm(pm: &PointMap) -> (Pfm, Pfm) {
    let points = pm.points.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect();
    let conf = pm.confidence.iter().map(|c| *c as f32).collect();
    (
        Pfm {
            width: pm.width,
            height: pm.height,
            channels: 3,
            data: points,
        },
        Pfm {
            width: pm.width,
            height: pm.height,
            channels: 1,
            data: conf,
        },
    )
}

pub fn pointmap_from_pfm(points: &Pfm, conf: &Pfm) -> Result<PointMap> {
    if points.channels != 3 || conf.channels != 1 || (points.width, points.height) != (conf.width, conf.height) {
        return Err(Error::format("pfm", "pointmap needs a 3-channel map and a matching 1-channel confidence"));
    }
    let pts = points
        .data
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect();
    let mut confidence: Vec<f64> = conf.data.iter().map(|c| *c as f64).collect();
    for (c, p) in confidence.iter_mut().zip(points.data.chunks_exact(3)) {
        if !c.is_finite() || p.iter().any(|v| !v.is_finite()) {
            *c = 0.0;
        }
    }
    PointMap::new(points.width, points.height, pts, confidence)
}
