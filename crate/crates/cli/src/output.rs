use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<PathBuf> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<PathBuf> {
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(path.to_path_buf())
}

/// `"9/128"` when `value * denominator` is an integer to 1e-9, else the
/// decimal value.
pub fn fraction(value: f64, denominator: u32) -> String {
    let scaled = value * denominator as f64;
    if (scaled - scaled.round()).abs() < 1e-9 {
        format!("{}/{denominator}", scaled.round() as i64)
    } else {
        format!("{value}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions() {
        assert_eq!(fraction(9.0 / 128.0, 128), "9/128");
        assert_eq!(fraction(0.1, 128), "0.1");
    }
}
