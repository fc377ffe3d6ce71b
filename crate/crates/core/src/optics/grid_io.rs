//! Near-field grid files.
//!
//! Binary layout, all little-endian:
//!
//! | offset | size        | content                                  |
//! |--------|-------------|------------------------------------------|
//! | 0      | 8           | magic `NFGRID01`                         |
//! | 8      | 4           | `nx` (u32)                               |
//! | 12     | 4           | `ny` (u32)                               |
//! | 16     | 8           | `dx_um` (f64)                            |
//! | 24     | 8           | `dy_um` (f64)                            |
//! | 32     | 16 · nx · ny | `(re, im)` f64 pairs, row-major (x fastest) |
//!
//! CSV layout: a `nx,ny,dx_um,dy_um` header line, one line with those four
//! values, a `re,im` header line and then `nx · ny` rows in the same order.

use std::path::Path;

use num_complex::Complex64;

use super::farfield::FieldGrid;
use crate::error::{Error, Result};

pub const GRID_MAGIC: &[u8; 8] = b"NFGRID01";
const HEADER_LEN: usize = 32;

pub fn encode_binary(grid: &FieldGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * grid.amplitudes.len());
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&(grid.nx as u32).to_le_bytes());
    out.extend_from_slice(&(grid.ny as u32).to_le_bytes());
    out.extend_from_slice(&grid.dx_um.to_le_bytes());
    out.extend_from_slice(&grid.dy_um.to_le_bytes());
    for a in &grid.amplitudes {
        out.extend_from_slice(&a.re.to_le_bytes());
        out.extend_from_slice(&a.im.to_le_bytes());
    }
    out
}

fn f64_at(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

pub fn decode_binary(bytes: &[u8], source_name: &str) -> Result<FieldGrid> {
    let bad = |m: String| Error::parse(source_name, 0, m);
    if bytes.len() < HEADER_LEN || &bytes[..8] != GRID_MAGIC {
        return Err(bad("missing NFGRID01 header".into()));
    }
    let nx = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let ny = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let dx = f64_at(bytes, 16);
    let dy = f64_at(bytes, 24);
    let expected = nx
        .checked_mul(ny)
        .and_then(|n| n.checked_mul(16))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| bad(format!("grid size {nx} x {ny} overflows")))?;
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for a {nx} x {ny} grid, found {}",
            bytes.len()
        )));
    }
    let amplitudes = bytes[HEADER_LEN..]
        .chunks_exact(16)
        .map(|c| Complex64::new(f64_at(c, 0), f64_at(c, 8)))
        .collect();
    FieldGrid::new(nx, ny, dx, dy, amplitudes)
}

pub fn encode_csv(grid: &FieldGrid) -> String {
    let mut s = format!("nx,ny,dx_um,dy_um\n{},{},{:e},{:e}\nre,im\n", grid.nx, grid.ny, grid.dx_um, grid.dy_um);
    for a in &grid.amplitudes {
        s.push_str(&format!("{:e},{:e}\n", a.re, a.im));
    }
    s
}

pub fn decode_csv(text: &str, source_name: &str) -> Result<FieldGrid> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::parse(source_name, 0, format!("missing {what}")));

    let (ln, header) = next("header")?;
    if header.replace(' ', "") != "nx,ny,dx_um,dy_um" {
        return Err(Error::parse(source_name, ln, format!("expected `nx,ny,dx_um,dy_um`, found `{header}`")));
    }
    let (ln, dims) = next("grid dimensions")?;
    let f: Vec<&str> = dims.split(',').map(str::trim).collect();
    if f.len() != 4 {
        return Err(Error::parse(source_name, ln, "expected 4 values: nx,ny,dx_um,dy_um"));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|e| Error::parse(source_name, ln, format!("`{s}`: {e}")));
    let float = |s: &str, ln: usize| s.parse::<f64>().map_err(|e| Error::parse(source_name, ln, format!("`{s}`: {e}")));
    let (nx, ny, dx, dy) = (int(f[0])?, int(f[1])?, float(f[2], ln)?, float(f[3], ln)?);
    let (ln, col_header) = next("`re,im` header")?;
    if col_header.replace(' ', "") != "re,im" {
        return Err(Error::parse(source_name, ln, format!("expected `re,im`, found `{col_header}`")));
    }
    let n = nx.saturating_mul(ny);
    let mut amplitudes = Vec::with_capacity(n.min(1 << 24));
    for (ln, line) in lines {
        let mut it = line.split(',').map(str::trim);
        let (Some(re), Some(im), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::parse(source_name, ln, "expected two values `re,im`"));
        };
        amplitudes.push(Complex64::new(float(re, ln)?, float(im, ln)?));
    }
    if amplitudes.len() != n {
        return Err(Error::parse(
            source_name,
            0,
            format!("expected {n} samples for a {nx} x {ny} grid, found {}", amplitudes.len()),
        ));
    }
    FieldGrid::new(nx, ny, dx, dy, amplitudes)
}

/// Reads a grid, choosing the format from the magic bytes.
pub fn read_grid(path: &Path) -> Result<FieldGrid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    if bytes.starts_with(GRID_MAGIC) {
        decode_binary(&bytes, &name)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::parse(&name, 0, "neither a binary grid nor UTF-8 CSV"))?;
        decode_csv(&text, &name)
    }
}
