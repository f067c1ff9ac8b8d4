//! Adobe/IRIDAS `.cube` text LUTs. Data rows enumerate the lattice with the
//! red index varying fastest, then green, then blue.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lut::Lut3D;
use crate::scalar::Real;

pub fn write_cube<T: Real, W: Write>(lut: &Lut3D<T>, title: &str, mut out: W) -> Result<()> {
    let m = lut.size();
    writeln!(out, "TITLE \"{}\"", title.replace('"', "'"))?;
    writeln!(out, "LUT_3D_SIZE {m}")?;
    writeln!(out, "DOMAIN_MIN 0.0 0.0 0.0")?;
    writeln!(out, "DOMAIN_MAX 1.0 1.0 1.0")?;
    for b in 0..m {
        for g in 0..m {
            for r in 0..m {
                let [x, y, z] = lut.output_at(r, g, b);
                writeln!(out, "{:.6} {:.6} {:.6}", x.to_f64_lossless(), y.to_f64_lossless(), z.to_f64_lossless())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_cube_file<T: Real>(lut: &Lut3D<T>, title: &str, path: &Path) -> Result<()> {
    write_cube(lut, title, BufWriter::new(File::create(path)?))
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Cube { line, msg: msg.into() }
}

fn parse_triple(line: usize, fields: &[&str]) -> Result<[f64; 3]> {
    if fields.len() != 3 {
        return Err(err(line, format!("expected 3 values, found {}", fields.len())));
    }
    let mut v = [0.0f64; 3];
    for (dst, f) in v.iter_mut().zip(fields) {
        *dst = f.parse().map_err(|_| err(line, format!("invalid number {f:?}")))?;
        if !dst.is_finite() {
            return Err(err(line, format!("non-finite value {f:?}")));
        }
    }
    Ok(v)
}

/// Parses a `.cube` file. Comments, blank lines, any whitespace and a
/// missing `TITLE` are accepted; only the unit domain is supported.
pub fn read_cube<R: BufRead>(input: R) -> Result<Lut3D<f32>> {
    let mut size: Option<usize> = None;
    let mut rows: Vec<[f64; 3]> = Vec::new();
    let mut last_line = 0;
    for (n, line) in input.lines().enumerate() {
        let line_no = n + 1;
        last_line = line_no;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let key = fields[0];
        if key.starts_with(|c: char| c.is_ascii_alphabetic()) {
            match key {
                "TITLE" => {}
                "LUT_3D_SIZE" => {
                    if size.is_some() {
                        return Err(err(line_no, "duplicate LUT_3D_SIZE"));
                    }
                    if !rows.is_empty() {
                        return Err(err(line_no, "LUT_3D_SIZE after data"));
                    }
                    let m = match fields.as_slice() {
                        [_, v] => v.parse::<usize>().ok().filter(|m| *m >= 2),
                        _ => None,
                    };
                    size = Some(m.ok_or_else(|| err(line_no, format!("malformed size line {content:?}")))?);
                }
                "DOMAIN_MIN" | "DOMAIN_MAX" => {
                    let want = if key == "DOMAIN_MIN" { 0.0 } else { 1.0 };
                    let v = parse_triple(line_no, &fields[1..])?;
                    if v.iter().any(|x| *x != want) {
                        return Err(err(line_no, format!("unsupported domain {content:?}")));
                    }
                }
                "LUT_1D_SIZE" => return Err(err(line_no, "1D LUTs are not supported")),
                other => log::warn!("cube line {line_no}: ignoring keyword {other}"),
            }
            continue;
        }
        if size.is_none() {
            return Err(err(line_no, "data before LUT_3D_SIZE"));
        }
        rows.push(parse_triple(line_no, &fields)?);
    }
    let m = size.ok_or_else(|| err(last_line, "missing LUT_3D_SIZE"))?;
    if rows.len() != m * m * m {
        return Err(err(last_line, format!("expected {} data rows, found {}", m * m * m, rows.len())));
    }
    Lut3D::from_fn(m, |r, g, b| {
        let v = rows[(b * m + g) * m + r];
        [v[0] as f32, v[1] as f32, v[2] as f32]
    })
}

pub fn read_cube_file(path: &Path) -> Result<Lut3D<f32>> {
    read_cube(BufReader::new(File::open(path)?))
}
