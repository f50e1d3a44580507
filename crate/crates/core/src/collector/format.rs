//! Line-delimited dataset files.
//!
//! ```text
//! #pegsim-dataset version=1 raster=32 fov=0.16
//! <episode> <step> <F|C> <contact 0|1> <current x y z psi> <goal x y z psi> <label dx dy dz dpsi> <gripper_height> A <raster_a> B <raster_b>
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a file
//! reproduces every value exactly. Rasters are row-major and run-length
//! coded: a token is either `value` or `count*value`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{DeltaPose, Pose4};
use crate::observation::{Observation, RasterSpec};

use super::{DatasetRecord, Provenance};

pub const DATASET_VERSION: u32 = 1;
const MAGIC: &str = "#pegsim-dataset";

fn push_raster(out: &mut String, cells: &[f64]) {
    let mut i = 0;
    while i < cells.len() {
        let v = cells[i];
        let mut j = i + 1;
        while j < cells.len() && cells[j].to_bits() == v.to_bits() {
            j += 1;
        }
        let n = j - i;
        if n == 1 {
            write!(out, " {v:?}").unwrap();
        } else {
            write!(out, " {n}*{v:?}").unwrap();
        }
        i = j;
    }
}

fn push_record(out: &mut String, r: &DatasetRecord) {
    write!(out, "{} {} {} {}", r.episode_id, r.step, r.provenance.code(), r.contact as u8).unwrap();
    for v in r.current.to_array().iter().chain(&r.goal.to_array()).chain(&r.label.to_array()) {
        write!(out, " {v:?}").unwrap();
    }
    write!(out, " {:?} A", r.observation.gripper_height).unwrap();
    push_raster(out, &r.observation.raster_a);
    out.push_str(" B");
    push_raster(out, &r.observation.raster_b);
    out.push('\n');
}

/// Serializes records for a raster spec. All observations must share it.
pub fn write_dataset_to(records: &[DatasetRecord], raster: &RasterSpec) -> Result<String> {
    let mut out = format!("{MAGIC} version={DATASET_VERSION} raster={} fov={:?}\n", raster.size, raster.fov);
    for r in records {
        if r.observation.spec != *raster {
            return Err(Error::Dataset(format!(
                "record {}/{} has raster {:?}, dataset uses {:?}",
                r.episode_id, r.step, r.observation.spec, raster
            )));
        }
        push_record(&mut out, r);
    }
    Ok(out)
}

pub fn write_dataset(records: &[DatasetRecord], raster: &RasterSpec, path: &Path) -> Result<()> {
    let text = write_dataset_to(records, raster)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<(RasterSpec, Vec<DatasetRecord>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

struct Line<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
    path: &'a str,
    line: usize,
}

impl<'a> Line<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { path: self.path.to_string(), line: self.line, msg: msg.into() }
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.tokens.next().ok_or_else(|| self.err(format!("truncated line: missing {what}")))
    }

    fn int(&mut self, what: &str) -> Result<u64> {
        let t = self.next(what)?;
        t.parse().map_err(|_| self.err(format!("invalid {what} '{t}'")))
    }

    fn float(&mut self, what: &str) -> Result<f64> {
        let t = self.next(what)?;
        parse_float(t).ok_or_else(|| self.err(format!("invalid {what} '{t}'")))
    }

    fn pose(&mut self, what: &str) -> Result<Pose4> {
        let v = [self.float(what)?, self.float(what)?, self.float(what)?, self.float(what)?];
        Pose4::new(v[0], v[1], v[2], v[3]).map_err(|e| self.err(format!("{what}: {e}")))
    }

    fn raster(&mut self, tag: &str, n: usize) -> Result<Vec<f64>> {
        let t = self.next(tag)?;
        if t != tag {
            return Err(self.err(format!("expected raster tag '{tag}', found '{t}'")));
        }
        let mut cells = Vec::with_capacity(n);
        while cells.len() < n {
            let t = self.next("raster cell")?;
            let (count, value) = match t.split_once('*') {
                Some((c, v)) => (c.parse::<usize>().map_err(|_| self.err(format!("invalid run '{t}'")))?, v),
                None => (1, t),
            };
            let v = parse_float(value).ok_or_else(|| self.err(format!("invalid raster cell '{t}'")))?;
            if v < 0.0 {
                return Err(self.err(format!("negative height {v}")));
            }
            if count == 0 || cells.len() + count > n {
                return Err(self.err(format!("raster run '{t}' overflows {n} cells")));
            }
            cells.extend(std::iter::repeat_n(v, count));
        }
        Ok(cells)
    }
}

fn parse_float(t: &str) -> Option<f64> {
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_header(line: &str, path: &str) -> Result<RasterSpec> {
    let err = |msg: String| Error::Parse { path: path.to_string(), line: 1, msg };
    let mut parts = line.split_ascii_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(err("missing dataset header".into()));
    }
    let (mut version, mut size, mut fov) = (None, None, None);
    for p in parts {
        match p.split_once('=') {
            Some(("version", v)) => version = Some(v),
            Some(("raster", v)) => size = v.parse::<usize>().ok(),
            Some(("fov", v)) => fov = parse_float(v),
            _ => return Err(err(format!("unknown header field '{p}'"))),
        }
    }
    match version {
        Some(v) if v == DATASET_VERSION.to_string() => {}
        Some(v) => return Err(Error::Version { what: "dataset", found: v.to_string(), expected: DATASET_VERSION }),
        None => return Err(err("header lacks version".into())),
    }
    let spec = RasterSpec {
        size: size.ok_or_else(|| err("header lacks a valid raster size".into()))?,
        fov: fov.ok_or_else(|| err("header lacks a valid fov".into()))?,
    };
    spec.validate().map_err(|e| err(e.to_string()))?;
    Ok(spec)
}

pub fn parse_dataset(text: &str, path: &str) -> Result<(RasterSpec, Vec<DatasetRecord>)> {
    let mut lines = text.split('\n');
    let header = lines.next().unwrap_or("");
    let spec = parse_header(header, path)?;
    let n = spec.size * spec.size;
    let mut out = Vec::new();
    for (i, raw) in lines.enumerate() {
        let line_no = i + 2;
        if raw.trim().is_empty() {
            continue;
        }
        let mut l = Line { tokens: raw.split_ascii_whitespace(), path, line: line_no };
        let episode_id = l.int("episode")?;
        let step = l.int("step")?;
        let provenance = match l.next("provenance")? {
            "F" => Provenance::FreeSpace,
            "C" => Provenance::CloseContact,
            t => return Err(l.err(format!("invalid provenance '{t}'"))),
        };
        let contact = match l.next("contact flag")? {
            "0" => false,
            "1" => true,
            t => return Err(l.err(format!("invalid contact flag '{t}'"))),
        };
        let current = l.pose("current pose")?;
        let goal = l.pose("goal pose")?;
        let d = [l.float("label")?, l.float("label")?, l.float("label")?, l.float("label")?];
        let label = DeltaPose::new(d[0], d[1], d[2], d[3]).map_err(|e| l.err(format!("label: {e}")))?;
        if label != crate::geometry::delta(&goal, &current) {
            return Err(l.err("label is not the delta from current to goal"));
        }
        let gripper_height = l.float("gripper height")?;
        let raster_a = l.raster("A", n)?;
        let raster_b = l.raster("B", n)?;
        if let Some(t) = l.tokens.next() {
            return Err(l.err(format!("unexpected trailing token '{t}'")));
        }
        out.push(DatasetRecord {
            episode_id,
            step,
            observation: Observation { spec, raster_a, raster_b, gripper_height },
            current,
            goal,
            label,
            provenance,
            contact,
        });
    }
    Ok((spec, out))
}
