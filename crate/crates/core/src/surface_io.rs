//! CSV encodings of bound surfaces and oracle values.
//!
//! Floats are written with 17 significant digits, which round-trips every
//! f64 exactly. Only non-skipped tiles get a row.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::bounds::{BoundSurface, TileBound};
use crate::domain::HypothesisMask;
use crate::error::{Error, Result};

fn num(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").unwrap();
}

pub fn surface_header(dim: usize) -> String {
    let mut cols = vec!["tile_index".to_string()];
    cols.extend((0..dim).map(|i| format!("center_{i}")));
    cols.extend((0..dim).map(|i| format!("half_{i}")));
    cols.extend(
        ["null_sig", "n_sims", "false_rej", "delta_I", "delta_II", "delta_III", "total"].map(String::from),
    );
    cols.join(",")
}

pub fn oracle_header(dim: usize) -> String {
    let mut cols = vec!["tile_index".to_string()];
    cols.extend((0..dim).map(|i| format!("center_{i}")));
    cols.push("f".into());
    cols.join(",")
}

/// One parsed surface.csv row.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceRow {
    pub center: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub null_sig: HypothesisMask,
    pub bound: TileBound,
}

pub fn surface_to_csv(surface: &BoundSurface) -> String {
    let grid = surface.grid();
    let mut out = surface_header(grid.dim());
    out.push('\n');
    for (tile, b) in surface.rows() {
        write!(out, "{}", tile.index).unwrap();
        for &x in tile.center.iter().chain(&tile.half_widths) {
            out.push(',');
            num(&mut out, x);
        }
        write!(
            out,
            ",{},{},{}",
            tile.null_signature.to_bit_string(grid.n_hypotheses()),
            b.n_sims,
            b.false_rej
        )
        .unwrap();
        for x in [b.delta_i, b.delta_ii, b.delta_iii, b.total] {
            out.push(',');
            num(&mut out, x);
        }
        out.push('\n');
    }
    out
}

pub fn write_surface(surface: &BoundSurface, mut w: impl Write) -> Result<()> {
    w.write_all(surface_to_csv(surface).as_bytes())?;
    Ok(())
}

fn field<T: std::str::FromStr>(s: &str, line: usize, name: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Surface(format!("line {line}: bad {name} value {s:?}")))
}

/// Dimension implied by a header with `tail` columns after the per-axis ones.
fn header_dim(header: &str, tail: usize) -> Result<usize> {
    let n = header.split(',').count();
    let per_axis = if tail == 1 { 1 } else { 2 };
    let bad = || Error::Surface(format!("unexpected header {header:?}"));
    let axis_cols = n.checked_sub(1 + tail).ok_or_else(bad)?;
    if axis_cols == 0 || axis_cols % per_axis != 0 {
        return Err(bad());
    }
    Ok(axis_cols / per_axis)
}

/// Parse a surface.csv produced by [`surface_to_csv`].
pub fn parse_surface(r: impl BufRead) -> Result<Vec<SurfaceRow>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Surface("empty file".into()))??;
    let dim = header_dim(&header, 7)?;
    if header.trim() != surface_header(dim) {
        return Err(Error::Surface(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = n + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 1 + 2 * dim + 7 {
            return Err(Error::Surface(format!("line {lineno}: expected {} fields", 1 + 2 * dim + 7)));
        }
        let floats = |r: std::ops::Range<usize>, name: &str| -> Result<Vec<f64>> {
            f[r].iter().map(|s| field(s, lineno, name)).collect()
        };
        let center = floats(1..1 + dim, "center")?;
        let half_widths = floats(1 + dim..1 + 2 * dim, "half")?;
        let k = 1 + 2 * dim;
        let d = floats(k + 3..k + 7, "delta")?;
        rows.push(SurfaceRow {
            center,
            half_widths,
            null_sig: HypothesisMask::from_bit_string(f[k].trim())?,
            bound: TileBound {
                tile_index: field(f[0], lineno, "tile_index")?,
                n_sims: field(f[k + 1], lineno, "n_sims")?,
                false_rej: field(f[k + 2], lineno, "false_rej")?,
                delta_i: d[0],
                delta_ii: d[1],
                delta_iii: d[2],
                total: d[3],
            },
        });
    }
    Ok(rows)
}

/// Rows of `(tile_index, center, f)`.
pub fn oracle_to_csv(rows: &[(u64, Vec<f64>, f64)]) -> String {
    let dim = rows.first().map_or(0, |r| r.1.len());
    let mut out = oracle_header(dim);
    out.push('\n');
    for (i, c, f) in rows {
        write!(out, "{i}").unwrap();
        for &x in c.iter().chain(std::iter::once(f)) {
            out.push(',');
            num(&mut out, x);
        }
        out.push('\n');
    }
    out
}

pub fn parse_oracle(r: impl BufRead) -> Result<Vec<(u64, Vec<f64>, f64)>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Surface("empty file".into()))??;
    let dim = header_dim(&header, 1)?;
    if header.trim() != oracle_header(dim) {
        return Err(Error::Surface(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != dim + 2 {
            return Err(Error::Surface(format!("line {}: expected {} fields", n + 2, dim + 2)));
        }
        let center = f[1..=dim].iter().map(|s| field(s, n + 2, "center")).collect::<Result<_>>()?;
        rows.push((field(f[0], n + 2, "tile_index")?, center, field(f[dim + 1], n + 2, "f")?));
    }
    Ok(rows)
}
