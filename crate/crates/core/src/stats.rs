//! Per-record and per-RP ranging error statistics, plus plot-data export.
//!
//! The per-record error is `e_i = |measured_i − truth_i|`, where the truth is
//! the 2D distance from the record's RP to the base station. Records are
//! grouped by exact RP coordinates. Each group reports the mean of `e_i` and
//! its sample standard deviation (divisor `n − 1`, or 0 when `n = 1`).

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datastore::Dataset;
use crate::geometry::{Layout, Point2D};
use crate::simulator::EnvState;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub abs_error_m: f64,
    pub env: EnvState,
    pub rp: Point2D,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpStats {
    pub rp: Point2D,
    pub n: usize,
    pub mean_abs_error_m: f64,
    pub std_abs_error_m: f64,
}

/// Absolute ranging error of every record, in input order.
pub fn per_record_errors(dataset: &Dataset, layout: &Layout) -> Result<Vec<ErrorSample>> {
    dataset
        .records
        .iter()
        .map(|r| {
            let truth = layout.distance_to_base(&r.rp)?;
            Ok(ErrorSample {
                abs_error_m: (r.measured_distance_m - truth).abs(),
                env: r.env,
                rp: r.rp,
            })
        })
        .collect()
}

fn rp_order(a: &Point2D, b: &Point2D) -> Ordering {
    // Adding 0.0 folds -0.0 into +0.0 so equal coordinates compare equal.
    (a.x + 0.0)
        .total_cmp(&(b.x + 0.0))
        .then((a.y + 0.0).total_cmp(&(b.y + 0.0)))
}

/// Mean and sample standard deviation; the std of a single value is 0.
pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Groups samples by RP and returns one entry per RP, sorted by (x, y).
pub fn per_rp_stats(samples: &[ErrorSample]) -> Result<Vec<RpStats>> {
    if samples.is_empty() {
        return Err(Error::Empty("no error samples to aggregate".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    // Stable, so each group keeps input order and sums match a plain loop.
    order.sort_by(|&a, &b| rp_order(&samples[a].rp, &samples[b].rp));

    let mut out = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let rp = samples[order[start]].rp;
        let end = start
            + order[start..]
                .iter()
                .take_while(|&&i| rp_order(&samples[i].rp, &rp) == Ordering::Equal)
                .count();
        let errors: Vec<f64> = order[start..end]
            .iter()
            .map(|&i| samples[i].abs_error_m)
            .collect();
        let (mean, std) = mean_and_sample_std(&errors);
        out.push(RpStats {
            rp,
            n: errors.len(),
            mean_abs_error_m: mean,
            std_abs_error_m: std,
        });
        start = end;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandAxis {
    Temperature,
    Humidity,
}

impl BandAxis {
    pub fn value(&self, env: &EnvState) -> f64 {
        match self {
            BandAxis::Temperature => env.temperature_c,
            BandAxis::Humidity => env.humidity_pct,
        }
    }
}

/// Error statistics in equal-width bins along one environmental axis.
///
/// Empty bins have `count = 0` and `null` mean/std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSummary {
    pub axis: BandAxis,
    pub bin_edges: Vec<f64>,
    pub bin_means: Vec<Option<f64>>,
    pub bin_stds: Vec<Option<f64>>,
    pub bin_counts: Vec<usize>,
}

pub fn band_summary(samples: &[ErrorSample], axis: BandAxis, bin_count: usize) -> Result<BandSummary> {
    if bin_count == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    if samples.is_empty() {
        return Err(Error::Empty("no error samples to bin".into()));
    }
    let values: Vec<f64> = samples.iter().map(|s| axis.value(&s.env)).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bin_count as f64;
    let mut bin_edges: Vec<f64> = (0..bin_count).map(|i| lo + i as f64 * width).collect();
    bin_edges.push(hi);

    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); bin_count];
    for (v, s) in values.iter().zip(samples) {
        let idx = if width > 0.0 {
            (((v - lo) / width) as usize).min(bin_count - 1)
        } else {
            0
        };
        bins[idx].push(s.abs_error_m);
    }

    let mut summary = BandSummary {
        axis,
        bin_edges,
        bin_means: Vec::with_capacity(bin_count),
        bin_stds: Vec::with_capacity(bin_count),
        bin_counts: Vec::with_capacity(bin_count),
    };
    for bin in &bins {
        summary.bin_counts.push(bin.len());
        if bin.is_empty() {
            summary.bin_means.push(None);
            summary.bin_stds.push(None);
        } else {
            let (mean, std) = mean_and_sample_std(bin);
            summary.bin_means.push(Some(mean));
            summary.bin_stds.push(Some(std));
        }
    }
    Ok(summary)
}

#[derive(Serialize)]
struct RpBarEntry {
    x_m: f64,
    y_m: f64,
    n: usize,
    mean_abs_error_m: f64,
    std_abs_error_m: f64,
}

#[derive(Serialize)]
struct ScatterEntry {
    temperature_c: f64,
    humidity_pct: f64,
    abs_error_m: f64,
    rp_x_m: f64,
    rp_y_m: f64,
}

pub const BAND_BINS: usize = 12;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `rp_bar.json`, `scatter.json`, `bands_temperature.json` and
/// `bands_humidity.json` into `dir` and returns their paths.
pub fn export_plot_data(stats: &[RpStats], samples: &[ErrorSample], dir: &Path) -> Result<Vec<PathBuf>> {
    if samples.is_empty() || stats.is_empty() {
        return Err(Error::Empty("no samples to export".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut sorted = stats.to_vec();
    sorted.sort_by(|a, b| rp_order(&a.rp, &b.rp));
    let bars: Vec<RpBarEntry> = sorted
        .iter()
        .map(|s| RpBarEntry {
            x_m: s.rp.x,
            y_m: s.rp.y,
            n: s.n,
            mean_abs_error_m: s.mean_abs_error_m,
            std_abs_error_m: s.std_abs_error_m,
        })
        .collect();
    let scatter: Vec<ScatterEntry> = samples
        .iter()
        .map(|s| ScatterEntry {
            temperature_c: s.env.temperature_c,
            humidity_pct: s.env.humidity_pct,
            abs_error_m: s.abs_error_m,
            rp_x_m: s.rp.x,
            rp_y_m: s.rp.y,
        })
        .collect();

    let files = [
        ("rp_bar.json", serde_json::to_value(&bars)),
        ("scatter.json", serde_json::to_value(&scatter)),
        (
            "bands_temperature.json",
            serde_json::to_value(band_summary(samples, BandAxis::Temperature, BAND_BINS)?),
        ),
        (
            "bands_humidity.json",
            serde_json::to_value(band_summary(samples, BandAxis::Humidity, BAND_BINS)?),
        ),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, value) in files {
        let path = dir.join(name);
        let value = value.map_err(|source| Error::Json {
            context: name.to_string(),
            source,
        })?;
        write_json(&path, &value)?;
        written.push(path);
    }
    Ok(written)
}
