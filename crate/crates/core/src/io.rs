//! File formats: measurement CSV, map-estimate files and map grids.
//!
//! Measurement CSV:
//!
//! ```text
//! # psdmap-measurements/1
//! # quantizer uniform 0 0.25 0.5 0.75 1
//! sensor_index,x1,..,xd,phi1,..,phiM,q_index,y,eps,raw,is_virtual
//! ```
//!
//! The quantizer comment line is optional. `q_index` and `raw` may be empty.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::batch::MapEstimate;
use crate::error::{Error, Result};
use crate::kernels::{BasisSpec, KernelSpec};
use crate::model::{Location, MeasurementRecord};
use crate::quantize::{QuantizerKind, QuantizerSpec};

pub const MEASUREMENTS_TAG: &str = "psdmap-measurements/1";
pub const ESTIMATE_TAG: &str = "psdmap-estimate/1";

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Format(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(Error::from)
}

fn kind_name(kind: QuantizerKind) -> &'static str {
    match kind {
        QuantizerKind::Uniform => "uniform",
        QuantizerKind::Cpq => "cpq",
        QuantizerKind::Explicit => "explicit",
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn measurements_to_csv(records: &[MeasurementRecord], quantizer: Option<&QuantizerSpec>) -> Result<String> {
    let first = records.first().ok_or(Error::EmptyInput("records"))?;
    let (d, m) = (first.location.dim(), first.channels());
    let mut out = format!("# {MEASUREMENTS_TAG}\n");
    if let Some(q) = quantizer {
        out.push_str("# quantizer ");
        out.push_str(kind_name(q.kind()));
        for b in q.boundaries() {
            out.push(' ');
            out.push_str(&num(*b));
        }
        out.push('\n');
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sensor_index".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("phi{i}")));
    header.extend(["q_index", "y", "eps", "raw", "is_virtual"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for (i, r) in records.iter().enumerate() {
        if r.location.dim() != d || r.channels() != m {
            return Err(Error::Format(format!("record {i} has a different shape than record 0")));
        }
        let mut row = vec![r.sensor_index.to_string()];
        row.extend(r.location.coords().iter().map(|&v| num(v)));
        row.extend(r.phi.iter().map(|&v| num(v)));
        row.push(r.q_index.map(|q| q.to_string()).unwrap_or_default());
        row.push(num(r.y));
        row.push(num(r.eps));
        row.push(r.raw.map(num).unwrap_or_default());
        row.push(r.is_virtual.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    out.push_str(std::str::from_utf8(&body).map_err(|e| Error::Format(e.to_string()))?);
    Ok(out)
}

fn parse_f64(s: &str, line: usize, col: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Format(format!("line {line}, column {col}: not a number: {s:?}")))
}

/// Parses a measurement CSV into records and the quantizer, if recorded.
pub fn measurements_from_csv(text: &str) -> Result<(Vec<MeasurementRecord>, Option<QuantizerSpec>)> {
    let mut quantizer = None;
    let mut body_start = 0;
    let mut comment_lines = 0;
    for raw_line in text.split_inclusive('\n') {
        let Some(rest) = raw_line.trim_end_matches(['\r', '\n']).strip_prefix('#') else { break };
        body_start += raw_line.len();
        comment_lines += 1;
        let mut parts = rest.split_whitespace();
        if parts.next() == Some("quantizer") {
            let kind = match parts.next() {
                Some("uniform") => QuantizerKind::Uniform,
                Some("cpq") => QuantizerKind::Cpq,
                Some("explicit") => QuantizerKind::Explicit,
                other => return Err(Error::Format(format!("unknown quantizer kind {other:?}"))),
            };
            let bounds = parts
                .map(|p| parse_f64(p, comment_lines, "quantizer"))
                .collect::<Result<Vec<f64>>>()?;
            quantizer = Some(QuantizerSpec::new(bounds, kind)?);
        }
    }
    let body = &text[body_start..];
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let d = header.iter().filter(|h| is_indexed(h, "x")).count();
    let m = header.iter().filter(|h| is_indexed(h, "phi")).count();
    let mut expected = vec!["sensor_index".to_string()];
    expected.extend((1..=d).map(|i| format!("x{i}")));
    expected.extend((1..=m).map(|i| format!("phi{i}")));
    expected.extend(["q_index", "y", "eps", "raw", "is_virtual"].map(String::from));
    if header != expected || d == 0 || m == 0 {
        return Err(Error::Format(format!("unexpected measurement header: {}", header.join(","))));
    }
    let mut records = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let line = comment_lines + k + 2;
        let field = |i: usize| row.get(i).unwrap_or("");
        let sensor_index = field(0)
            .parse()
            .map_err(|_| Error::Format(format!("line {line}, column sensor_index: not an index")))?;
        let coords = (0..d).map(|j| parse_f64(field(1 + j), line, &header[1 + j])).collect::<Result<Vec<_>>>()?;
        let phi = (0..m).map(|j| parse_f64(field(1 + d + j), line, &header[1 + d + j])).collect::<Result<Vec<_>>>()?;
        let base = 1 + d + m;
        let q_index = match field(base) {
            "" => None,
            s => Some(s.parse().map_err(|_| Error::Format(format!("line {line}, column q_index: not an index")))?),
        };
        let y = parse_f64(field(base + 1), line, "y")?;
        let eps = parse_f64(field(base + 2), line, "eps")?;
        let raw = match field(base + 3) {
            "" => None,
            s => Some(parse_f64(s, line, "raw")?),
        };
        let is_virtual = match field(base + 4) {
            "true" | "1" => true,
            "false" | "0" => false,
            s => return Err(Error::Format(format!("line {line}, column is_virtual: not a boolean: {s:?}"))),
        };
        if !(eps >= 0.0) {
            return Err(Error::Format(format!("line {line}, column eps: must be nonnegative")));
        }
        records.push(MeasurementRecord {
            sensor_index,
            location: Location::new(coords),
            phi: DVector::from_vec(phi),
            q_index,
            y,
            eps,
            raw,
            is_virtual,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("measurement file"));
    }
    Ok((records, quantizer))
}

fn is_indexed(h: &str, prefix: &str) -> bool {
    h.strip_prefix(prefix).is_some_and(|r| !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()))
}

/// On-disk form of a [`MapEstimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateFile {
    format: String,
    lambda: f64,
    channels: usize,
    /// Anchor coordinates, one array per anchor.
    anchors: Vec<Vec<f64>>,
    /// Expansion coefficients, anchor-major.
    c: Vec<f64>,
    theta: Vec<f64>,
    kernel: KernelSpec,
    basis: BasisSpec,
}

pub fn estimate_to_string(est: &MapEstimate) -> Result<String> {
    let file = EstimateFile {
        format: ESTIMATE_TAG.into(),
        lambda: est.lambda,
        channels: est.channels(),
        anchors: est.anchors.iter().map(|a| a.coords().to_vec()).collect(),
        c: est.c.iter().copied().collect(),
        theta: est.theta.iter().copied().collect(),
        kernel: est.kernel.clone(),
        basis: est.basis.clone(),
    };
    toml::to_string(&file).map_err(|e| Error::Format(e.to_string()))
}

pub fn estimate_from_str(text: &str) -> Result<MapEstimate> {
    let file: EstimateFile = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    if file.format != ESTIMATE_TAG {
        return Err(Error::Format(format!("expected format \"{ESTIMATE_TAG}\", got \"{}\"", file.format)));
    }
    file.kernel.validate()?;
    let m = file.kernel.channels();
    if m != file.channels {
        return Err(Error::DimensionMismatch { context: "estimate channels", expected: file.channels, got: m });
    }
    file.basis.validate(m)?;
    if file.c.len() != file.anchors.len() * m {
        return Err(Error::DimensionMismatch { context: "estimate c", expected: file.anchors.len() * m, got: file.c.len() });
    }
    if file.theta.len() != file.basis.count() * m {
        return Err(Error::DimensionMismatch { context: "estimate theta", expected: file.basis.count() * m, got: file.theta.len() });
    }
    Ok(MapEstimate {
        anchors: file.anchors.into_iter().map(Location::new).collect(),
        c: DVector::from_vec(file.c),
        theta: DVector::from_vec(file.theta),
        kernel: file.kernel,
        basis: file.basis,
        lambda: file.lambda,
    })
}

/// Regular grid over the box `[lo, hi]` with `n` points per axis; the last
/// axis varies fastest.
pub fn region_grid(lo: &[f64], hi: &[f64], n: usize) -> Vec<Location> {
    let d = lo.len();
    let total = n.pow(d as u32);
    let step = |j: usize| if n > 1 { (hi[j] - lo[j]) / (n - 1) as f64 } else { 0.0 };
    (0..total)
        .map(|mut k| {
            let mut x = vec![0.0; d];
            for j in (0..d).rev() {
                x[j] = lo[j] + step(j) * (k % n) as f64;
                k /= n;
            }
            Location::new(x)
        })
        .collect()
}

/// Grid CSV with columns `x1..xd, l1..lM`.
pub fn grid_to_csv<F: Fn(&Location) -> DVector<f64>>(points: &[Location], f: F) -> Result<String> {
    let first = points.first().ok_or(Error::EmptyInput("grid points"))?;
    let d = first.dim();
    let rows: Vec<DVector<f64>> = points.iter().map(&f).collect();
    let m = rows[0].len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.extend((1..=m).map(|i| format!("l{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (p, l) in points.iter().zip(&rows) {
        let mut row: Vec<String> = p.coords().iter().map(|&v| num(v)).collect();
        row.extend(l.iter().map(|&v| format!("{v:.12e}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).map_err(|e| Error::Format(e.to_string()))
}
