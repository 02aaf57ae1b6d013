//! Binary little-endian PLY for Gaussian scenes and colored point clouds.
//!
//! Gaussian files use the common 3DGS vertex layout (`x y z nx ny nz f_dc_0..2
//! opacity scale_0..2 rot_0..3`, all float) with log-scales and opacity logits.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::geom::Vec3;
use crate::matching::MergedPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// Vertex table of a parsed file: property names and rows of values.
struct Vertices {
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Vertices {
    fn column(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::format("ply", format!("missing property {name}")))
    }
}

fn read_line(r: &mut impl BufRead) -> Result<String> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(Error::format("ply", "truncated header"));
    }
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

fn read_vertices(r: &mut impl BufRead) -> Result<Vertices> {
    if read_line(r)? != "ply" {
        return Err(Error::format("ply", "missing magic"));
    }
    let mut vertex_count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = read_line(r)?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", f, ..] => return Err(Error::format("ply", format!("unsupported format {f}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                vertex_count = Some(n.parse::<usize>().map_err(|_| Error::format("ply", "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", name, n] => {
                if *n != "0" {
                    return Err(Error::format("ply", format!("unsupported element {name}")));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::format("ply", "list properties on vertices are not supported"))
            }
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| Error::format("ply", format!("unknown type {ty}")))?;
                props.push((name.to_string(), s));
            }
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(Error::format("ply", format!("bad header line {line:?}"))),
        }
    }
    let n = vertex_count.ok_or_else(|| Error::format("ply", "no vertex element"))?;
    let stride: usize = props.iter().map(|p| p.1.size()).sum();
    let mut raw = vec![0u8; n.checked_mul(stride).ok_or_else(|| Error::format("ply", "size overflow"))?];
    r.read_exact(&mut raw).map_err(|_| Error::format("ply", "truncated vertex data"))?;
    let rows = raw
        .chunks_exact(stride.max(1))
        .take(n)
        .map(|rec| {
            let mut off = 0;
            props
                .iter()
                .map(|(_, s)| {
                    let v = s.read(&rec[off..]);
                    off += s.size();
                    v
                })
                .collect()
        })
        .collect();
    Ok(Vertices {
        names: props.into_iter().map(|p| p.0).collect(),
        rows,
    })
}

fn header(w: &mut impl Write, n: usize, props: &[(&str, &str)]) -> Result<()> {
    writeln!(w, "ply\nformat binary_little_endian 1.0\nelement vertex {n}")?;
    for (ty, name) in props {
        writeln!(w, "property {ty} {name}")?;
    }
    writeln!(w, "end_header")?;
    Ok(())
}

const GAUSSIAN_PROPS: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0",
    "rot_1", "rot_2", "rot_3",
];

pub fn write_gaussians_to(w: &mut impl Write, g: &GaussianCloud) -> Result<()> {
    let props: Vec<(&str, &str)> = GAUSSIAN_PROPS.iter().map(|n| ("float", *n)).collect();
    header(w, g.len(), &props)?;
    let mut buf = Vec::with_capacity(g.len() * 17 * 4);
    for i in 0..g.len() {
        let c = g.centers[i];
        let s = g.log_scales[i];
        let f = g.sh_dc[i];
        let q = g.rotations[i];
        let vals = [
            c.x,
            c.y,
            c.z,
            0.0,
            0.0,
            0.0,
            f.x,
            f.y,
            f.z,
            g.opacity_logits[i],
            s.x,
            s.y,
            s.z,
            q[0],
            q[1],
            q[2],
            q[3],
        ];
        for v in vals {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads any binary little-endian PLY carrying the 3DGS vertex properties;
/// extra properties (higher SH bands, normals) are ignored.
pub fn read_gaussians_from(r: &mut impl BufRead) -> Result<GaussianCloud> {
    let v = read_vertices(r)?;
    let col: Vec<usize> = GAUSSIAN_PROPS
        .iter()
        .filter(|n| !n.starts_with('n'))
        .map(|n| v.column(n))
        .collect::<Result<_>>()?;
    let mut g = GaussianCloud::with_capacity(v.rows.len());
    for row in &v.rows {
        let at = |k: usize| row[col[k]];
        g.centers.push(Vec3::new(at(0), at(1), at(2)));
        g.sh_dc.push(Vec3::new(at(3), at(4), at(5)));
        g.opacity_logits.push(at(6));
        g.log_scales.push(Vec3::new(at(7), at(8), at(9)));
        g.rotations.push([at(10), at(11), at(12), at(13)]);
    }
    Ok(g)
}

pub fn write_gaussians(path: &Path, g: &GaussianCloud) -> Result<()> {
    super::create_parent(path)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_gaussians_to(&mut w, g)?;
    w.flush()?;
    Ok(())
}

pub fn read_gaussians(path: &Path) -> Result<GaussianCloud> {
    read_gaussians_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Positions as double, colors as 8-bit, plus confidence and source frame.
pub fn write_points_to(w: &mut impl Write, points: &[MergedPoint]) -> Result<()> {
    header(
        w,
        points.len(),
        &[
            ("double", "x"),
            ("double", "y"),
            ("double", "z"),
            ("uchar", "red"),
            ("uchar", "green"),
            ("uchar", "blue"),
            ("float", "confidence"),
            ("uint", "frame_id"),
        ],
    )?;
    let mut buf = Vec::with_capacity(points.len() * 35);
    for p in points {
        for v in p.position.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for c in p.color {
            buf.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        buf.extend_from_slice(&(p.confidence as f32).to_le_bytes());
        let id = u32::try_from(p.frame_id).map_err(|_| Error::format("ply", "frame id exceeds u32"))?;
        buf.extend_from_slice(&id.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a point cloud; colors default to mid gray, confidence to 1, frame to 0.
pub fn read_points_from(r: &mut impl BufRead) -> Result<Vec<MergedPoint>> {
    let v = read_vertices(r)?;
    let (x, y, z) = (v.column("x")?, v.column("y")?, v.column("z")?);
    let rgb = ["red", "green", "blue"].map(|n| v.column(n).ok());
    let conf = v.column("confidence").ok();
    let frame = v.column("frame_id").ok();
    Ok(v.rows
        .iter()
        .map(|row| MergedPoint {
            position: Vec3::new(row[x], row[y], row[z]),
            color: rgb.map(|c| c.map_or(0.5, |k| row[k] as f32 / 255.0)),
            confidence: conf.map_or(1.0, |k| row[k]),
            frame_id: frame.map_or(0, |k| row[k] as usize),
        })
        .collect())
}

pub fn write_points(path: &Path, points: &[MergedPoint]) -> Result<()> {
    super::create_parent(path)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_points_to(&mut w, points)?;
    w.flush()?;
    Ok(())
}

pub fn read_points(path: &Path) -> Result<Vec<MergedPoint>> {
    read_points_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}
