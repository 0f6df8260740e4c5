//! Campaign log CSV format and outlier filtering.
//!
//! The format is strict: UTF-8, `\n` line endings, the exact header below, and
//! seven unquoted columns per row. Reals are written in Rust's shortest
//! round-trip decimal form, so `read_csv(write_csv(d)) == d` bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::geometry::{Layout, Point2D};
use crate::simulator::{EnvState, RangingRecord};
use crate::{Error, Result};

pub const CSV_HEADER: &str =
    "timestamp_ms,node_id,rp_x_m,rp_y_m,measured_distance_m,temperature_c,humidity_pct";

const COLUMNS: [&str; 7] = [
    "timestamp_ms",
    "node_id",
    "rp_x_m",
    "rp_y_m",
    "measured_distance_m",
    "temperature_c",
    "humidity_pct",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<RangingRecord>,
    pub source: String,
}

impl Dataset {
    pub fn synthetic(records: Vec<RangingRecord>) -> Self {
        Dataset {
            records,
            source: "synthetic".to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            validate_record(r).map_err(|(col, message)| Error::Parse {
                source_name: self.source.clone(),
                line: i + 2,
                column: col + 1,
                field: COLUMNS[col].to_string(),
                message,
            })?;
        }
        Ok(())
    }
}

fn validate_record(r: &RangingRecord) -> std::result::Result<(), (usize, String)> {
    if r.node_id == 0 {
        return Err((1, "node id must be in [1, 255]".into()));
    }
    let reals = [
        r.rp.x,
        r.rp.y,
        r.measured_distance_m,
        r.env.temperature_c,
        r.env.humidity_pct,
    ];
    if let Some(k) = reals.iter().position(|v| !v.is_finite()) {
        return Err((k + 2, "value must be finite".into()));
    }
    if !(0.0..=100.0).contains(&r.env.humidity_pct) {
        return Err((6, format!("humidity {} outside [0, 100]", r.env.humidity_pct)));
    }
    Ok(())
}

/// Renders a dataset in the log format, header included.
pub fn format_csv(dataset: &Dataset) -> String {
    let mut out = String::with_capacity(64 * (dataset.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &dataset.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.timestamp_ms,
            r.node_id,
            r.rp.x,
            r.rp.y,
            r.measured_distance_m,
            r.env.temperature_c,
            r.env.humidity_pct
        );
    }
    out
}

/// Writes the dataset to `destination` and returns the number of bytes written.
pub fn write_csv(dataset: &Dataset, destination: impl AsRef<Path>) -> Result<usize> {
    dataset.validate()?;
    let path = destination.as_ref();
    let text = format_csv(dataset);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(text.len())
}

/// A log record with the model's predicted error and the remaining residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensatedRecord {
    pub record: RangingRecord,
    pub predicted_error_m: f64,
    pub residual_error_m: f64,
}

/// The log header with `predicted_error_m,residual_error_m` appended.
pub fn compensated_header() -> String {
    format!("{CSV_HEADER},predicted_error_m,residual_error_m")
}

pub fn format_compensated_csv(records: &[CompensatedRecord]) -> String {
    let mut out = compensated_header();
    out.push('\n');
    for c in records {
        let r = &c.record;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.timestamp_ms,
            r.node_id,
            r.rp.x,
            r.rp.y,
            r.measured_distance_m,
            r.env.temperature_c,
            r.env.humidity_pct,
            c.predicted_error_m,
            c.residual_error_m
        );
    }
    out
}

pub fn write_compensated_csv(records: &[CompensatedRecord], destination: impl AsRef<Path>) -> Result<usize> {
    let path = destination.as_ref();
    let text = format_compensated_csv(records);
    fs::write(path, &text).map_err(|e| Error::io(path, e))?;
    Ok(text.len())
}

pub fn read_csv(source: impl AsRef<Path>) -> Result<Dataset> {
    let path = source.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, &path.display().to_string())
}

/// Parses log text; errors carry the 1-based line and column of the first violation.
pub fn parse_csv(text: &str, source_name: &str) -> Result<Dataset> {
    let err = |line: usize, column: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        column,
        field: COLUMNS
            .get(column.wrapping_sub(1))
            .copied()
            .unwrap_or("<row>")
            .to_string(),
        message,
    };

    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut lines = body.split('\n');
    match lines.next() {
        Some(CSV_HEADER) => {}
        Some(other) => {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                line: 1,
                column: 1,
                field: "<header>".into(),
                message: format!("expected header `{CSV_HEADER}`, found `{other}`"),
            })
        }
        None => unreachable!("split yields at least one item"),
    }

    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != COLUMNS.len() {
            return Err(err(
                line_no,
                COLUMNS.len().min(fields.len()) + 1,
                format!("expected {} columns, found {}", COLUMNS.len(), fields.len()),
            ));
        }
        let timestamp_ms: u64 = fields[0].parse().map_err(|_| {
            err(line_no, 1, format!("`{}` is not a non-negative integer", fields[0]))
        })?;
        let node_id: u8 = fields[1]
            .parse()
            .map_err(|_| err(line_no, 2, format!("`{}` is not an integer in [1, 255]", fields[1])))?;
        let mut reals = [0.0; 5];
        for (k, slot) in reals.iter_mut().enumerate() {
            let raw = fields[k + 2];
            *slot = parse_real(raw).ok_or_else(|| err(line_no, k + 3, format!("`{raw}` is not a decimal number")))?;
        }
        let record = RangingRecord {
            timestamp_ms,
            node_id,
            rp: Point2D {
                x: reals[0],
                y: reals[1],
            },
            measured_distance_m: reals[2],
            env: EnvState {
                temperature_c: reals[3],
                humidity_pct: reals[4],
            },
        };
        validate_record(&record).map_err(|(col, message)| err(line_no, col + 1, message))?;
        records.push(record);
    }

    Ok(Dataset {
        records,
        source: source_name.to_string(),
    })
}

/// Plain decimal only: no exponents, infinities, NaN, or surrounding whitespace.
fn parse_real(raw: &str) -> Option<f64> {
    let digits = raw.strip_prefix('-').unwrap_or(raw);
    let valid = !digits.is_empty()
        && digits.bytes().all(|b| b.is_ascii_digit() || b == b'.')
        && digits.bytes().filter(|&b| b == b'.').count() <= 1
        && digits.bytes().any(|b| b.is_ascii_digit());
    if !valid {
        return None;
    }
    raw.parse().ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierMethod {
    #[default]
    Iqr,
    None,
}

/// Per-RP Tukey fences on the absolute ranging error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierPolicy {
    pub method: OutlierMethod,
    pub iqr_multiplier: f64,
}

impl Default for OutlierPolicy {
    fn default() -> Self {
        OutlierPolicy {
            method: OutlierMethod::Iqr,
            iqr_multiplier: 1.5,
        }
    }
}

impl OutlierPolicy {
    pub fn none() -> Self {
        OutlierPolicy {
            method: OutlierMethod::None,
            ..OutlierPolicy::default()
        }
    }
}

/// Quantile by linear interpolation between closest ranks; `sorted` must be ascending.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Drops records whose absolute error lies outside `[Q1 − k·IQR, Q3 + k·IQR]`
/// of their RP group, recomputing the fences until no record falls outside.
///
/// Returns the kept records in their original order and the number removed.
/// Because trimming runs to a fixed point, filtering twice removes nothing new.
pub fn filter_outliers(
    dataset: &Dataset,
    layout: &Layout,
    policy: &OutlierPolicy,
) -> Result<(Dataset, usize)> {
    if policy.method == OutlierMethod::None {
        return Ok((dataset.clone(), 0));
    }
    if !(policy.iqr_multiplier > 0.0) {
        return Err(Error::invalid("IQR multiplier must be positive"));
    }

    let rp_count = layout.reference_points().len();
    let mut group_of = Vec::with_capacity(dataset.len());
    let mut errors = Vec::with_capacity(dataset.len());
    for r in &dataset.records {
        let g = layout
            .index_of(&r.rp)
            .ok_or(Error::UnknownReferencePoint { x: r.rp.x, y: r.rp.y })?;
        group_of.push(g);
        errors.push((r.measured_distance_m - layout.distance_to_base(&r.rp)?).abs());
    }

    let mut keep = vec![true; dataset.len()];
    loop {
        let mut groups: Vec<Vec<f64>> = vec![Vec::new(); rp_count];
        for ((&g, &e), _) in group_of.iter().zip(&errors).zip(&keep).filter(|(_, &k)| k) {
            groups[g].push(e);
        }
        let fences: Vec<(f64, f64)> = groups
            .iter_mut()
            .map(|errs| {
                if errs.is_empty() {
                    return (f64::NEG_INFINITY, f64::INFINITY);
                }
                errs.sort_by(f64::total_cmp);
                let q1 = quantile(errs, 0.25);
                let q3 = quantile(errs, 0.75);
                let spread = policy.iqr_multiplier * (q3 - q1);
                (q1 - spread, q3 + spread)
            })
            .collect();

        let mut changed = false;
        for ((k, &g), &e) in keep.iter_mut().zip(&group_of).zip(&errors) {
            if *k && !(e >= fences[g].0 && e <= fences[g].1) {
                *k = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let kept: Vec<RangingRecord> = dataset
        .records
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| *r)
        .collect();
    let removed = dataset.len() - kept.len();
    Ok((
        Dataset {
            records: kept,
            source: dataset.source.clone(),
        },
        removed,
    ))
}
