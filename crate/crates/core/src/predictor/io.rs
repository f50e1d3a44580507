//! Model file format.
//!
//! A text header of `key value` lines terminated by a line reading `data`,
//! followed by a little-endian binary payload:
//!
//! ```text
//! pegsim-model 1
//! kind knn                 | kind ridge
//! k 5                      | lambda 0.001
//! weighting uniform        |
//! features 2049            | features 2049
//! records 20000            | records 20000
//! data
//! ```
//!
//! k-NN payload: `records * features` `f32` feature values in record order,
//! then `records * 4` `f64` labels `(dx, dy, dz, dpsi)`. Ridge payload:
//! `features * 5` `f64` weights row-major, then 5 `f64` biases. `records` is
//! informational for ridge models.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::DeltaPose;

use super::knn::{KnnModel, Weighting};
use super::ridge::{RidgeModel, OUTPUTS};
use super::PredictionModel;

pub const MODEL_VERSION: u32 = 1;
const MAGIC: &str = "pegsim-model";

/// Serializes a model. `records` is the training-set size recorded in the
/// header (the k-NN size is always used for k-NN models).
pub fn write_model<W: Write>(model: &PredictionModel, records: usize, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{MAGIC} {MODEL_VERSION}")?;
    match model {
        PredictionModel::Knn(m) => {
            writeln!(out, "kind knn")?;
            writeln!(out, "k {}", m.k())?;
            writeln!(out, "weighting {}", m.weighting().name())?;
            writeln!(out, "features {}", m.feature_len())?;
            writeln!(out, "records {}", m.len())?;
            writeln!(out, "data")?;
            let mut buf = Vec::with_capacity(m.len() * (m.feature_len() * 4 + 32));
            for i in 0..m.len() {
                for v in m.row(i) {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            for l in m.labels() {
                for v in l.to_array() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            out.write_all(&buf)
        }
        PredictionModel::Ridge(m) => {
            writeln!(out, "kind ridge")?;
            writeln!(out, "lambda {:?}", m.lambda())?;
            writeln!(out, "features {}", m.feature_len())?;
            writeln!(out, "records {records}")?;
            writeln!(out, "data")?;
            let w = m.weights();
            let mut buf = Vec::with_capacity((w.len() + OUTPUTS) * 8);
            for i in 0..w.nrows() {
                for k in 0..OUTPUTS {
                    buf.extend_from_slice(&w[(i, k)].to_le_bytes());
                }
            }
            for b in m.bias().iter() {
                buf.extend_from_slice(&b.to_le_bytes());
            }
            out.write_all(&buf)
        }
    }
}

pub fn save_model(model: &PredictionModel, records: usize, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, records, &mut buf).expect("writing to memory");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<PredictionModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&bytes, &path.display().to_string())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::ModelParse { path: self.name.to_string(), offset, msg: msg.into() }
    }

    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let Some(n) = rest.iter().position(|&b| b == b'\n') else {
            return Err(self.err(start, "unexpected end of header"));
        };
        let text = std::str::from_utf8(&rest[..n]).map_err(|_| self.err(start, "header is not UTF-8"))?;
        self.pos = start + n + 1;
        Ok((start, text))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (at, line) = self.line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok((at + k.len() + 1, v)),
            _ => Err(self.err(at, format!("expected '{key} <value>', found '{line}'"))),
        }
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (at, v) = self.field(key)?;
        v.parse().map_err(|_| self.err(at, format!("invalid {key} '{v}'")))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(self.bytes.len(), format!("payload truncated while reading {what}"))),
        }
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.pos;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err(start, "payload size overflow"))?, what)?;
        let vals: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(self.err(start + 8 * i, format!("non-finite value in {what}")));
        }
        Ok(vals)
    }
}

pub fn read_model(bytes: &[u8], name: &str) -> Result<PredictionModel> {
    let mut c = Cursor { bytes, pos: 0, name };
    if bytes.is_empty() {
        return Err(c.err(0, "empty file"));
    }
    let (at, first) = c.line()?;
    let version = match first.split_once(' ') {
        Some((MAGIC, v)) => v,
        _ => return Err(c.err(at, "not a model file")),
    };
    if version != MODEL_VERSION.to_string() {
        return Err(Error::Version { what: "model", found: version.to_string(), expected: MODEL_VERSION });
    }
    let (at, kind) = c.field("kind")?;
    let model = match kind {
        "knn" => {
            let k: usize = c.number("k")?;
            let (at, w) = c.field("weighting")?;
            let weighting = Weighting::parse(w).ok_or_else(|| c.err(at, format!("unknown weighting '{w}'")))?;
            let dim: usize = c.number("features")?;
            let n: usize = c.number("records")?;
            let (at, data) = c.line()?;
            if data != "data" {
                return Err(c.err(at, "expected 'data'"));
            }
            let start = c.pos;
            let size = n
                .checked_mul(dim)
                .and_then(|v| v.checked_mul(4))
                .ok_or_else(|| c.err(start, "payload size overflow"))?;
            let raw = c.take(size, "features")?;
            let rows: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            if let Some(i) = rows.iter().position(|v| !v.is_finite()) {
                return Err(c.err(start + 4 * i, "non-finite feature"));
            }
            let label_start = c.pos;
            let flat = c.f64s(n * 4, "labels")?;
            let labels = flat
                .chunks_exact(4)
                .enumerate()
                .map(|(i, l)| {
                    DeltaPose::new(l[0], l[1], l[2], l[3]).map_err(|e| c.err(label_start + 32 * i, e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            KnnModel::from_raw(k, weighting, dim, rows, labels)
                .map(PredictionModel::Knn)
                .map_err(|e| c.err(start, e.to_string()))?
        }
        "ridge" => {
            let lambda: f64 = c.number("lambda")?;
            let dim: usize = c.number("features")?;
            let _records: usize = c.number("records")?;
            let (at, data) = c.line()?;
            if data != "data" {
                return Err(c.err(at, "expected 'data'"));
            }
            let start = c.pos;
            let w = c.f64s(dim * OUTPUTS, "weights")?;
            let b = c.f64s(OUTPUTS, "bias")?;
            RidgeModel::from_parts(lambda, DMatrix::from_row_slice(dim, OUTPUTS, &w), DVector::from_vec(b))
                .map(PredictionModel::Ridge)
                .map_err(|e| c.err(start, e.to_string()))?
        }
        other => return Err(c.err(at, format!("unknown model kind '{other}'"))),
    };
    if c.pos != bytes.len() {
        return Err(c.err(c.pos, format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(model)
}
