//! Deadzone-trapping diagnostics: occupancy, boundary accumulation, code
//! flip rates and threshold-normalized weight histograms.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::WeightMatrix;
use crate::quantizer::QuantizedTensor;

pub const DEFAULT_BAND: f64 = 0.1;
pub const DEFAULT_BINS: usize = 120;
pub const HISTOGRAM_RANGE: f64 = 3.0;
pub const DEFAULT_SNAPSHOT_EVERY: usize = 50;
pub const DEFAULT_HISTORY_LEN: usize = 8;

/// Schema version of the exported report JSON.
pub const REPORT_FORMAT_VERSION: u32 = 1;

fn check_shapes(w: &WeightMatrix, q: &QuantizedTensor) -> Result<()> {
    if w.shape() != q.shape() {
        return Err(Error::shape(format!(
            "weights {:?} vs quantized {:?}",
            w.shape(),
            q.shape()
        )));
    }
    Ok(())
}

/// Calls `f(|w|, delta)` for every element with its group threshold.
fn for_each_with_delta(w: &WeightMatrix, q: &QuantizedTensor, mut f: impl FnMut(f64, f64)) {
    let layout = q.layout();
    for r in 0..w.rows() {
        let row = w.row(r);
        for s in 0..layout.segments_per_row() {
            let delta = q.thresholds()[layout.group_of_segment(r, s)];
            for &v in &row[layout.segment_range(s)] {
                f(v, delta);
            }
        }
    }
}

/// Number of weights strictly inside their group's deadzone.
pub fn deadzone_count(w: &WeightMatrix, q: &QuantizedTensor) -> Result<usize> {
    check_shapes(w, q)?;
    let mut n = 0;
    for_each_with_delta(w, q, |v, d| n += usize::from(v.abs() < d));
    Ok(n)
}

pub fn deadzone_fraction(w: &WeightMatrix, q: &QuantizedTensor) -> Result<f64> {
    Ok(deadzone_count(w, q)? as f64 / (w.rows() * w.cols()) as f64)
}

fn check_band(band: f64) -> Result<()> {
    if !(band > 0.0 && band < 1.0) {
        return Err(Error::InvalidParam(format!("band {band} must lie in (0, 1)")));
    }
    Ok(())
}

/// Number of weights with `|w|` in `[(1 - band) delta, (1 + band) delta]`.
pub fn boundary_count(w: &WeightMatrix, q: &QuantizedTensor, band: f64) -> Result<usize> {
    check_shapes(w, q)?;
    check_band(band)?;
    let mut n = 0;
    for_each_with_delta(w, q, |v, d| {
        let a = v.abs();
        n += usize::from(a >= (1.0 - band) * d && a <= (1.0 + band) * d);
    });
    Ok(n)
}

pub fn boundary_fraction(w: &WeightMatrix, q: &QuantizedTensor, band: f64) -> Result<f64> {
    Ok(boundary_count(w, q, band)? as f64 / (w.rows() * w.cols()) as f64)
}

/// Ring buffer of the most recent code snapshots of the monitored weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeHistory {
    capacity: usize,
    snapshots: VecDeque<Vec<i8>>,
}

impl CodeHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            snapshots: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn push(&mut self, codes: Vec<i8>) -> Result<()> {
        if let Some(first) = self.snapshots.front() {
            if first.len() != codes.len() {
                return Err(Error::shape(format!(
                    "snapshot of {} codes, history holds {}",
                    codes.len(),
                    first.len()
                )));
            }
        }
        if self.snapshots.len() == self.capacity {
            self.snapshots.pop_front();
        }
        self.snapshots.push_back(codes);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &[i8]> {
        self.snapshots.iter().map(Vec::as_slice)
    }
}

/// Mean number of code changes per weight per snapshot interval.
pub fn flip_rate(history: &CodeHistory) -> Result<f64> {
    let n = history.len();
    if n < 2 {
        return Err(Error::InsufficientHistory(n));
    }
    let weights = history.snapshots[0].len();
    if weights == 0 {
        return Ok(0.0);
    }
    let flips: usize = history
        .snapshots
        .iter()
        .zip(history.snapshots.iter().skip(1))
        .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y).count())
        .sum();
    Ok(flips as f64 / (weights as f64 * (n - 1) as f64))
}

/// Histogram with an underflow bin first and an overflow bin last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` strictly increasing edges of the interior bins.
    pub edges: Vec<f64>,
    /// `bins + 2` counts: underflow, interior bins, overflow.
    pub counts: Vec<u64>,
    /// True when values are divided by their group threshold.
    pub normalized: bool,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize, normalized: bool) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidParam(format!("need at least 2 bins, got {bins}")));
        }
        if !(hi > lo) {
            return Err(Error::InvalidParam(format!("empty histogram range [{lo}, {hi}]")));
        }
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
        edges.push(hi);
        Ok(Self {
            edges,
            counts: vec![0; bins + 2],
            normalized,
        })
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// Slot in `counts` for value `v`; interior bins are half-open `[e_i, e_{i+1})`.
    pub fn slot(&self, v: f64) -> usize {
        let lo = self.edges[0];
        let hi = self.edges[self.bins()];
        if v.is_nan() {
            return self.bins() / 2 + 1;
        }
        if v < lo {
            return 0;
        }
        if v >= hi {
            return self.bins() + 1;
        }
        let width = (hi - lo) / self.bins() as f64;
        let mut i = (((v - lo) / width).floor() as usize).min(self.bins() - 1);
        // Guard the floor against rounding at the edges.
        while i > 0 && v < self.edges[i] {
            i -= 1;
        }
        while i + 1 < self.bins() && v >= self.edges[i + 1] {
            i += 1;
        }
        i + 1
    }

    pub fn add(&mut self, v: f64) {
        let s = self.slot(v);
        self.counts[s] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if self.edges != other.edges || self.normalized != other.normalized {
            return Err(Error::InvalidParam("histograms have different bins".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Histogram of `w / delta` over `[-3, 3]`. Elements of a zero-threshold
/// group land in the overflow (positive), underflow (negative) or the bin
/// holding 0 (zero). Fails when every threshold is zero.
pub fn weight_histogram(w: &WeightMatrix, q: &QuantizedTensor, bins: usize) -> Result<Histogram> {
    check_shapes(w, q)?;
    let mut h = Histogram::new(-HISTOGRAM_RANGE, HISTOGRAM_RANGE, bins, true)?;
    if q.thresholds().iter().all(|&d| d == 0.0) {
        return Err(Error::DegenerateNormalization);
    }
    for_each_with_delta(w, q, |v, d| {
        let x = if d > 0.0 {
            v / d
        } else if v > 0.0 {
            f64::INFINITY
        } else if v < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        h.add(x);
    });
    Ok(h)
}

/// Like [`weight_histogram`], but falls back to a raw-value histogram over
/// `[-max|w|, max|w|]` (flagged `normalized = false`) when every threshold is zero.
pub fn weight_histogram_or_raw(w: &WeightMatrix, q: &QuantizedTensor, bins: usize) -> Result<Histogram> {
    match weight_histogram(w, q, bins) {
        Err(Error::DegenerateNormalization) => {
            let m = w.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let m = if m > 0.0 { m } else { 1.0 };
            let mut h = Histogram::new(-m, m, bins, false)?;
            w.as_slice().iter().for_each(|&v| h.add(v));
            Ok(h)
        }
        other => other,
    }
}

/// Trapping metrics of all monitored weights at one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapReport {
    pub step: usize,
    pub deadzone_fraction: f64,
    pub boundary_fraction: f64,
    pub band: f64,
    /// Zero until the history holds two snapshots.
    pub mean_flip_rate: f64,
    pub histogram: Histogram,
    pub loss: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportFile {
    format_version: u32,
    reports: Vec<TrapReport>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CsvRow {
    step: usize,
    loss: f64,
    deadzone_fraction: f64,
    boundary_fraction: f64,
    mean_flip_rate: f64,
}

impl From<&TrapReport> for CsvRow {
    fn from(r: &TrapReport) -> Self {
        Self {
            step: r.step,
            loss: r.loss,
            deadzone_fraction: r.deadzone_fraction,
            boundary_fraction: r.boundary_fraction,
            mean_flip_rate: r.mean_flip_rate,
        }
    }
}

pub const TRAP_CSV: &str = "trap.csv";
pub const TRAP_JSON: &str = "trap.json";

/// Writes `trap.csv` (scalar metrics, one row per report) and `trap.json`
/// (everything, including histograms) into `dir`.
pub fn export_report(reports: &[TrapReport], dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    if reports.is_empty() {
        return Err(Error::InvalidParam("no trap reports to export".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(TRAP_CSV);
    let json_path = dir.join(TRAP_JSON);

    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in reports {
        wtr.serialize(CsvRow::from(r))
            .map_err(|e| Error::io(&csv_path, std::io::Error::other(e)))?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::io(&csv_path, std::io::Error::other(e.to_string())))?;
    fs::write(&csv_path, bytes).map_err(|e| Error::io(&csv_path, e))?;

    let file = ReportFile {
        format_version: REPORT_FORMAT_VERSION,
        reports: reports.to_vec(),
    };
    let json = serde_json::to_vec_pretty(&file).expect("reports serialize");
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok((csv_path, json_path))
}

/// Reads back what [`export_report`] wrote, checking that the CSV and JSON agree.
pub fn read_report(dir: impl AsRef<Path>) -> Result<Vec<TrapReport>> {
    let dir = dir.as_ref();
    let json_path = dir.join(TRAP_JSON);
    let csv_path = dir.join(TRAP_CSV);
    let raw = fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let file: ReportFile = serde_json::from_slice(&raw)
        .map_err(|e| Error::format(e.column() as u64, format!("{}: {e}", json_path.display())))?;
    if file.format_version != REPORT_FORMAT_VERSION {
        return Err(Error::format(0, format!("unsupported report version {}", file.format_version)));
    }
    let mut rdr = csv::Reader::from_path(&csv_path)
        .map_err(|e| Error::io(&csv_path, std::io::Error::other(e)))?;
    let rows: Vec<CsvRow> = rdr
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(0, format!("{}: {e}", csv_path.display())))?;
    let expected: Vec<CsvRow> = file.reports.iter().map(CsvRow::from).collect();
    if rows != expected {
        return Err(Error::format(0, "trap.csv and trap.json disagree"));
    }
    Ok(file.reports)
}
