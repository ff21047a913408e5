//! Binary environment files.
//!
//! Layout (little-endian): magic `DHL1`, `d: u32`, `N: u32`, `h: f64`,
//! `model: u32`, `seed: u64`, then `λ[N^d]`, `Λ[N^d]` and the lower triangle
//! of `a` per cell (row by row), all `f64`. The full spec is stored next to
//! the binary file as JSON with the extension replaced by `.json`, either bare
//! or under a top-level `spec` key (the run summary of the pipeline).

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use super::{EnvironmentSpec, FieldSample};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DHL1";

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// The binary payload of [`write_sample`] (without the JSON sidecar).
pub fn encode_sample(sample: &FieldSample) -> Vec<u8> {
    let d = sample.dimension();
    let tri = d * (d + 1) / 2;
    let mut w = Vec::with_capacity(32 + 8 * sample.num_cells() * (2 + tri));
    w.extend_from_slice(MAGIC);
    w.extend_from_slice(&(d as u32).to_le_bytes());
    w.extend_from_slice(&(sample.grid.n as u32).to_le_bytes());
    w.extend_from_slice(&sample.grid.h.to_le_bytes());
    w.extend_from_slice(&sample.spec.model.id().to_le_bytes());
    w.extend_from_slice(&sample.spec.seed.to_le_bytes());
    for v in sample.lower.iter().chain(&sample.upper) {
        w.extend_from_slice(&v.to_le_bytes());
    }
    for cell in 0..sample.num_cells() {
        let a = sample.a(cell);
        for i in 0..d {
            for j in 0..=i {
                w.extend_from_slice(&a[i * d + j].to_le_bytes());
            }
        }
    }
    w
}

pub fn write_sample(sample: &FieldSample, path: &Path) -> Result<()> {
    fs::write(path, encode_sample(sample))?;
    fs::write(sidecar(path), serde_json::to_string_pretty(&sample.spec)?)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take<const K: usize>(&mut self) -> Result<[u8; K]> {
        let end = self.pos + K;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| format_err(self.path, format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length"))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn read_sample(path: &Path) -> Result<FieldSample> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut c = Cursor {
        buf: &buf,
        pos: 0,
        path,
    };
    if &c.take::<4>()? != MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    let d = c.u32()? as usize;
    let n = c.u32()? as usize;
    let h = c.f64()?;
    let model_id = c.u32()?;
    let seed = c.u64()?;

    let side = sidecar(path);
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&side).map_err(|e| {
        format_err(&side, format!("missing spec sidecar: {e}"))
    })?)?;
    if let Some(inner) = json.get_mut("spec") {
        json = inner.take();
    }
    let spec: EnvironmentSpec = serde_json::from_value(json)?;
    if spec.dimension != d
        || spec.cells_per_side != n
        || spec.cell_size != h
        || spec.model.id() != model_id
        || spec.seed != seed
    {
        return Err(format_err(path, "header disagrees with sidecar spec"));
    }
    let cells = n
        .checked_pow(d as u32)
        .ok_or_else(|| format_err(path, "grid too large"))?;
    let expected = 32 + 8 * cells * (2 + d * (d + 1) / 2);
    if buf.len() != expected {
        return Err(format_err(
            path,
            format!("expected {expected} bytes, found {}", buf.len()),
        ));
    }
    let mut lower = Vec::with_capacity(cells);
    for _ in 0..cells {
        lower.push(c.f64()?);
    }
    let mut upper = Vec::with_capacity(cells);
    for _ in 0..cells {
        upper.push(c.f64()?);
    }
    let mut conductivity = vec![0.0; cells * d * d];
    for cell in 0..cells {
        let a = &mut conductivity[cell * d * d..(cell + 1) * d * d];
        for i in 0..d {
            for j in 0..=i {
                let v = c.f64()?;
                a[i * d + j] = v;
                a[j * d + i] = v;
            }
        }
    }
    FieldSample::from_parts(spec, lower, upper, conductivity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_environment, Model};

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.bin");
        for spec in [
            EnvironmentSpec::new(2, 8, Model::IidCellPareto, 7),
            EnvironmentSpec::new(3, 4, Model::Lognormal { sigma: 0.5, correlation_length: 1.5 }, 2),
        ] {
            let s = generate_environment(&spec).unwrap();
            write_sample(&s, &path).unwrap();
            let back = read_sample(&path).unwrap();
            assert_eq!(s, back);
        }
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.bin");
        let s = generate_environment(&EnvironmentSpec::new(2, 4, Model::Constant, 0)).unwrap();
        write_sample(&s, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_sample(&path), Err(Error::Format { .. })));
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_sample(&path), Err(Error::Format { .. })));
    }
}
