//! Dataset manifests: one `input_path<TAB>target_path` pair per line, paths
//! relative to the manifest's directory. Blank lines and `#` comments are
//! skipped.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::image_io::read_image;
use crate::trainer::SamplePair;

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            [a, b] if !a.trim().is_empty() && !b.trim().is_empty() => {
                out.push((base.join(a.trim()), base.join(b.trim())));
            }
            _ => {
                return Err(Error::Manifest {
                    line: n + 1,
                    msg: format!("expected input<TAB>target, found {} field(s)", fields.len()),
                })
            }
        }
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("")))
}

fn load_pair(input: &Path, target: &Path) -> Result<SamplePair<f32>> {
    let (x, _) = read_image(input)?;
    let (y, _) = read_image(target)?;
    SamplePair::new(x, y)
}

/// Loads every pair the manifest lists. Unreadable pairs are skipped with a
/// warning; it is an error if none can be read.
pub fn load_dataset(path: &Path) -> Result<Vec<SamplePair<f32>>> {
    let entries = read_manifest(path)?;
    let mut out = Vec::with_capacity(entries.len());
    for (input, target) in &entries {
        match load_pair(input, target) {
            Ok(pair) => out.push(pair),
            Err(e) => log::warn!("skipping {} / {}: {e}", input.display(), target.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}
