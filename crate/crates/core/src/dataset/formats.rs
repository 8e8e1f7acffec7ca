//! On-disk formats: `.xyz` and `.uv` text point lists, binary PGM
//! silhouettes, camera JSON and boundary caches.
//!
//! Reals are written with 17 significant digits, which parses back to the
//! same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, CameraTransform, PointCloud};
use crate::silhouette::{BoundarySet, SilhouetteImage};

fn parse_rows<const D: usize>(text: &str, what: &'static str) -> Result<Vec<[f64; D]>> {
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = [0.0f64; D];
        let mut fields = line.split_whitespace();
        for v in row.iter_mut() {
            let field = fields
                .next()
                .ok_or_else(|| Error::format(what, format!("line {}: expected {D} values", line_no + 1)))?;
            *v = field
                .parse()
                .map_err(|_| Error::format(what, format!("line {}: bad number {field:?}", line_no + 1)))?;
            if !v.is_finite() {
                return Err(Error::format(what, format!("line {}: non-finite value", line_no + 1)));
            }
        }
        if fields.next().is_some() {
            return Err(Error::format(what, format!("line {}: expected {D} values", line_no + 1)));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn format_rows<const D: usize>(rows: &[[f64; D]]) -> String {
    let mut out = String::with_capacity(rows.len() * D * 25);
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{v:.16e}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

pub fn xyz_to_string(cloud: &PointCloud) -> String {
    format_rows(cloud.points())
}

pub fn xyz_from_str(text: &str) -> Result<PointCloud> {
    let rows = parse_rows::<3>(text, "xyz")?;
    if rows.is_empty() {
        return Err(Error::format("xyz", "no points"));
    }
    PointCloud::new(rows)
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    Ok(fs::write(path, xyz_to_string(cloud))?)
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    xyz_from_str(&fs::read_to_string(path)?)
}

pub fn uv_to_string(points: &[[f64; 2]]) -> String {
    format_rows(points)
}

pub fn uv_from_str(text: &str) -> Result<Vec<[f64; 2]>> {
    parse_rows::<2>(text, "uv")
}

pub fn write_uv(path: &Path, points: &[[f64; 2]]) -> Result<()> {
    Ok(fs::write(path, uv_to_string(points))?)
}

pub fn read_uv(path: &Path) -> Result<Vec<[f64; 2]>> {
    uv_from_str(&fs::read_to_string(path)?)
}

/// Binary PGM (`P5`, maxval 255): foreground 255, background 0.
pub fn pgm_to_bytes(s: &SilhouetteImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", s.width(), s.height()).into_bytes();
    out.extend(s.mask().iter().map(|&m| if m != 0 { 255 } else { 0 }));
    out
}

/// Reads a `P5` PGM with any maxval up to 255; pixels above half of maxval
/// are foreground. Header comments are skipped.
pub fn pgm_from_bytes(bytes: &[u8]) -> Result<SilhouetteImage> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("pgm", "truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::format("pgm", "non-ascii header"))?);
    }
    if tokens[0] != "P5" {
        return Err(Error::format("pgm", format!("magic {:?}, expected P5", tokens[0])));
    }
    let num = |t: &str| t.parse::<usize>().map_err(|_| Error::format("pgm", format!("bad header field {t:?}")));
    let (w, h, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::format("pgm", format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() != w * h {
        return Err(Error::format("pgm", format!("expected {} pixels, found {}", w * h, data.len())));
    }
    let mask = data.iter().map(|&v| (2 * v as usize > maxval) as u8).collect();
    SilhouetteImage::new(w, h, mask).map_err(|e| Error::format("pgm", e.to_string()))
}

pub fn write_pgm(path: &Path, s: &SilhouetteImage) -> Result<()> {
    Ok(fs::write(path, pgm_to_bytes(s))?)
}

pub fn read_pgm(path: &Path) -> Result<SilhouetteImage> {
    pgm_from_bytes(&fs::read(path)?)
}

#[derive(Serialize, Deserialize)]
struct CameraFile {
    model: CameraModel,
    #[serde(rename = "T")]
    t: Vec<f64>,
    width: usize,
    height: usize,
}

pub fn camera_to_string(cam: &CameraTransform) -> String {
    let file = CameraFile { model: cam.model(), t: cam.rows().to_vec(), width: cam.width(), height: cam.height() };
    let mut text = serde_json::to_string_pretty(&file).expect("camera serializes");
    text.push('\n');
    text
}

pub fn camera_from_str(text: &str) -> Result<CameraTransform> {
    let file: CameraFile = serde_json::from_str(text).map_err(|e| Error::format("camera", e.to_string()))?;
    let rows: [f64; 16] = file
        .t
        .try_into()
        .map_err(|t: Vec<f64>| Error::format("camera", format!("T has {} entries, expected 16", t.len())))?;
    CameraTransform::new(rows, file.model, file.width, file.height)
}

pub fn write_camera(path: &Path, cam: &CameraTransform) -> Result<()> {
    Ok(fs::write(path, camera_to_string(cam))?)
}

pub fn read_camera(path: &Path) -> Result<CameraTransform> {
    camera_from_str(&fs::read_to_string(path)?)
}

/// Boundary cache: one `x y` integer pair per line, row-major order.
pub fn boundary_to_string(b: &BoundarySet) -> String {
    let mut out = String::with_capacity(b.len() * 8);
    for [x, y] in &b.pixels {
        writeln!(out, "{x} {y}").expect("write to string");
    }
    out
}

pub fn boundary_from_str(text: &str) -> Result<BoundarySet> {
    let mut pixels = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Vec<usize> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format("boundary", format!("line {}: bad integer", line_no + 1)))?;
        match parsed[..] {
            [x, y] => pixels.push([x, y]),
            _ => return Err(Error::format("boundary", format!("line {}: expected 2 values", line_no + 1))),
        }
    }
    Ok(BoundarySet { pixels })
}

pub fn write_boundary(path: &Path, b: &BoundarySet) -> Result<()> {
    Ok(fs::write(path, boundary_to_string(b))?)
}

pub fn read_boundary(path: &Path) -> Result<BoundarySet> {
    boundary_from_str(&fs::read_to_string(path)?)
}
