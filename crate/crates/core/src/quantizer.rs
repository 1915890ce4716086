//! Ternary quantization of weight matrices.
//!
//! A weight `w` with threshold `delta` maps to a code in `{-1, 0, +1}`,
//! evaluated top-down: `w >= delta` gives `+1`, `|w| < delta` gives `0`,
//! otherwise `-1`. Each group of weights carries its own scale `alpha` and
//! threshold `delta`; the dequantized value is `code * alpha`.
//!
//! Groups are contiguous runs of `group_size` columns inside one row. The last
//! group of a row is short when `cols` is not a multiple of the group size and
//! its statistics use only its own elements. Per-tensor granularity is a single
//! group spanning the whole matrix.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, WeightMatrix};

/// Default group size for group-wise quantization.
pub const DEFAULT_GROUP_SIZE: usize = 128;

/// Default reactivation strength for the deadzone bias.
pub const DEFAULT_LAMBDA: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Granularity {
    PerTensor,
    PerChannel,
    PerGroup { group_size: usize },
}

impl Default for Granularity {
    fn default() -> Self {
        Granularity::PerGroup {
            group_size: DEFAULT_GROUP_SIZE,
        }
    }
}

impl Granularity {
    /// Normal form for a matrix with `cols` columns: per-channel and any group
    /// at least as wide as a row both become `PerGroup { group_size: cols }`.
    pub fn canonical(self, cols: usize) -> Result<Granularity> {
        match self {
            Granularity::PerTensor => Ok(Granularity::PerTensor),
            Granularity::PerChannel => Ok(Granularity::PerGroup { group_size: cols }),
            Granularity::PerGroup { group_size: 0 } => {
                Err(Error::InvalidParam("group_size must be >= 1".into()))
            }
            Granularity::PerGroup { group_size } => Ok(Granularity::PerGroup {
                group_size: group_size.min(cols),
            }),
        }
    }

    /// Parses `per-tensor`, `per-channel` or `per-group`; `group_size` is only
    /// consulted for the latter.
    pub fn parse(kind: &str, group_size: usize) -> Result<Granularity> {
        match kind {
            "per-tensor" | "tensor" => Ok(Granularity::PerTensor),
            "per-channel" | "channel" => Ok(Granularity::PerChannel),
            "per-group" | "group" => {
                if group_size == 0 {
                    return Err(Error::InvalidParam("group_size must be >= 1".into()));
                }
                Ok(Granularity::PerGroup { group_size })
            }
            other => Err(Error::InvalidParam(format!("unknown granularity `{other}`"))),
        }
    }

    pub fn layout(self, rows: usize, cols: usize) -> Result<GroupLayout> {
        GroupLayout::new(self, rows, cols)
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Granularity::PerTensor => f.write_str("per-tensor"),
            Granularity::PerChannel => f.write_str("per-channel"),
            Granularity::PerGroup { group_size } => write!(f, "per-group({group_size})"),
        }
    }
}

/// Resolved mapping from matrix positions to group indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupLayout {
    rows: usize,
    cols: usize,
    /// Width of a row segment; the whole row for per-tensor.
    segment: usize,
    per_tensor: bool,
}

impl GroupLayout {
    pub fn new(g: Granularity, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!("empty {rows}x{cols} matrix")));
        }
        let (segment, per_tensor) = match g.canonical(cols)? {
            Granularity::PerTensor => (cols, true),
            Granularity::PerGroup { group_size } => (group_size, false),
            Granularity::PerChannel => unreachable!("canonical form has no per-channel"),
        };
        Ok(Self {
            rows,
            cols,
            segment,
            per_tensor,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of row segments, i.e. groups per row for group-wise layouts.
    #[inline]
    pub fn segments_per_row(&self) -> usize {
        self.cols.div_ceil(self.segment)
    }

    #[inline]
    pub fn segment_width(&self) -> usize {
        self.segment
    }

    #[inline]
    pub fn is_per_tensor(&self) -> bool {
        self.per_tensor
    }

    pub fn num_groups(&self) -> usize {
        if self.per_tensor {
            1
        } else {
            self.rows * self.segments_per_row()
        }
    }

    /// Column range `[start, end)` of segment `s` in any row.
    #[inline]
    pub fn segment_range(&self, s: usize) -> std::ops::Range<usize> {
        let start = s * self.segment;
        start..(start + self.segment).min(self.cols)
    }

    #[inline]
    pub fn group_of_segment(&self, r: usize, s: usize) -> usize {
        if self.per_tensor {
            0
        } else {
            r * self.segments_per_row() + s
        }
    }

    #[inline]
    pub fn group_of(&self, r: usize, c: usize) -> usize {
        self.group_of_segment(r, c / self.segment)
    }

    /// Calls `f(group, values)` once per group. Per-tensor yields the whole
    /// matrix as one slice.
    fn for_each_group<'a>(&self, data: &'a [f64], mut f: impl FnMut(usize, &'a [f64])) {
        if self.per_tensor {
            f(0, data);
            return;
        }
        for r in 0..self.rows {
            let row = &data[r * self.cols..(r + 1) * self.cols];
            for s in 0..self.segments_per_row() {
                f(self.group_of_segment(r, s), &row[self.segment_range(s)]);
            }
        }
    }
}

/// Statistic used to derive `(alpha, delta)` for a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantScheme {
    Absmean,
    Twn,
}

impl QuantScheme {
    pub fn params(self, w: &[f64]) -> Result<(f64, f64)> {
        match self {
            QuantScheme::Absmean => absmean_params(w),
            QuantScheme::Twn => twn_params(w),
        }
    }
}

impl FromStr for QuantScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absmean" => Ok(QuantScheme::Absmean),
            "twn" => Ok(QuantScheme::Twn),
            other => Err(Error::UnsupportedScheme(other.to_string())),
        }
    }
}

impl fmt::Display for QuantScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantScheme::Absmean => "absmean",
            QuantScheme::Twn => "twn",
        })
    }
}

/// `alpha = mean |w|`, `delta = alpha / 2`.
pub fn absmean_params(w: &[f64]) -> Result<(f64, f64)> {
    if w.is_empty() {
        return Err(Error::shape("absmean of an empty array"));
    }
    let alpha = w.iter().map(|v| v.abs()).sum::<f64>() / w.len() as f64;
    Ok((alpha, alpha / 2.0))
}

/// `delta = 0.75 * mean |w|`; `alpha` is the mean magnitude of the weights
/// with `|w| >= delta`, the least-squares optimal scale for that threshold.
pub fn twn_params(w: &[f64]) -> Result<(f64, f64)> {
    if w.is_empty() {
        return Err(Error::shape("twn statistics of an empty array"));
    }
    let mean = w.iter().map(|v| v.abs()).sum::<f64>() / w.len() as f64;
    let delta = 0.75 * mean;
    let (sum, count) = w
        .iter()
        .map(|v| v.abs())
        .filter(|&a| a >= delta)
        .fold((0.0, 0usize), |(s, n), a| (s + a, n + 1));
    let alpha = if count == 0 { 0.0 } else { sum / count as f64 };
    Ok((alpha, delta))
}

#[inline]
pub fn ternarize_one(w: f64, delta: f64) -> i8 {
    if w >= delta {
        1
    } else if w.abs() < delta {
        0
    } else {
        -1
    }
}

pub fn ternarize(w: &[f64], delta: f64) -> Result<Vec<i8>> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidThreshold(delta));
    }
    Ok(w.iter().map(|&v| ternarize_one(v, delta)).collect())
}

/// Ternary codes with one `(alpha, delta)` pair per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    codes: Vec<i8>,
    scales: Vec<f64>,
    thresholds: Vec<f64>,
    granularity: Granularity,
}

impl QuantizedTensor {
    /// Builds a tensor from raw parts, checking every invariant.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        codes: Vec<i8>,
        scales: Vec<f64>,
        thresholds: Vec<f64>,
        granularity: Granularity,
    ) -> Result<Self> {
        let granularity = granularity.canonical(cols)?;
        let layout = GroupLayout::new(granularity, rows, cols)?;
        if codes.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} codes for a {rows}x{cols} tensor",
                codes.len()
            )));
        }
        if scales.len() != layout.num_groups() || thresholds.len() != layout.num_groups() {
            return Err(Error::shape(format!(
                "expected {} scales and thresholds, got {} and {}",
                layout.num_groups(),
                scales.len(),
                thresholds.len()
            )));
        }
        if let Some(c) = codes.iter().find(|c| !(-1..=1).contains(*c)) {
            return Err(Error::InvalidCode(format!("code {c} outside {{-1, 0, 1}}")));
        }
        if scales.iter().chain(&thresholds).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParam(
                "scales and thresholds must be finite and non-negative".into(),
            ));
        }
        let q = Self {
            rows,
            cols,
            codes,
            scales,
            thresholds,
            granularity,
        };
        for r in 0..rows {
            for c in 0..cols {
                if q.scale_at(r, c) == 0.0 && q.code(r, c) != 0 {
                    return Err(Error::InvalidCode(format!(
                        "nonzero code at ({r}, {c}) in a zero-scale group"
                    )));
                }
            }
        }
        Ok(q)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    #[inline]
    pub fn code(&self, r: usize, c: usize) -> i8 {
        self.codes[r * self.cols + c]
    }

    #[inline]
    pub fn code_row(&self, r: usize) -> &[i8] {
        &self.codes[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    #[inline]
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    #[inline]
    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn layout(&self) -> GroupLayout {
        GroupLayout::new(self.granularity, self.rows, self.cols)
            .expect("validated at construction")
    }

    #[inline]
    pub fn scale_at(&self, r: usize, c: usize) -> f64 {
        self.scales[self.layout().group_of(r, c)]
    }

    #[inline]
    pub fn threshold_at(&self, r: usize, c: usize) -> f64 {
        self.thresholds[self.layout().group_of(r, c)]
    }
}

/// Quantizes `w` group by group using `scheme` to pick `(alpha, delta)`.
pub fn quantize(w: &WeightMatrix, scheme: QuantScheme, g: Granularity) -> Result<QuantizedTensor> {
    let layout = GroupLayout::new(g, w.rows(), w.cols())?;
    let mut scales = vec![0.0; layout.num_groups()];
    let mut thresholds = vec![0.0; layout.num_groups()];
    let mut err = None;
    layout.for_each_group(w.as_slice(), |gi, vals| match scheme.params(vals) {
        Ok((a, d)) => {
            scales[gi] = a;
            thresholds[gi] = d;
        }
        Err(e) => err = Some(e),
    });
    if let Some(e) = err {
        return Err(e);
    }
    quantize_with_params(w, g, scales, thresholds)
}

/// Ternarizes `w` against externally supplied per-group scales and
/// thresholds (learned or frozen). Groups with zero scale get all-zero codes.
pub fn quantize_with_params(
    w: &WeightMatrix,
    g: Granularity,
    scales: Vec<f64>,
    thresholds: Vec<f64>,
) -> Result<QuantizedTensor> {
    let granularity = g.canonical(w.cols())?;
    let layout = GroupLayout::new(granularity, w.rows(), w.cols())?;
    if scales.len() != layout.num_groups() || thresholds.len() != layout.num_groups() {
        return Err(Error::shape(format!(
            "expected {} group parameters, got {} scales and {} thresholds",
            layout.num_groups(),
            scales.len(),
            thresholds.len()
        )));
    }
    if let Some(&d) = thresholds.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
        return Err(Error::InvalidThreshold(d));
    }
    if let Some(a) = scales.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
        return Err(Error::InvalidParam(format!("scale {a} must be finite and non-negative")));
    }
    let mut codes = vec![0i8; w.rows() * w.cols()];
    for r in 0..w.rows() {
        let row = w.row(r);
        let out = &mut codes[r * w.cols()..(r + 1) * w.cols()];
        for s in 0..layout.segments_per_row() {
            let gi = layout.group_of_segment(r, s);
            if scales[gi] == 0.0 {
                continue;
            }
            let delta = thresholds[gi];
            for c in layout.segment_range(s) {
                out[c] = ternarize_one(row[c], delta);
            }
        }
    }
    Ok(QuantizedTensor {
        rows: w.rows(),
        cols: w.cols(),
        codes,
        scales,
        thresholds,
        granularity,
    })
}

pub fn dequantize(q: &QuantizedTensor) -> WeightMatrix {
    let layout = q.layout();
    let mut out = Matrix::zeros(q.rows, q.cols);
    for r in 0..q.rows {
        let codes = q.code_row(r);
        let row = out.row_mut(r);
        for s in 0..layout.segments_per_row() {
            let alpha = q.scales[layout.group_of_segment(r, s)];
            for c in layout.segment_range(s) {
                row[c] = f64::from(codes[c]) * alpha;
            }
        }
    }
    out
}

/// Which weights sit strictly inside their group's deadzone `(-delta, delta)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeadzoneMask {
    rows: usize,
    cols: usize,
    mask: Vec<bool>,
    count_per_row: Vec<usize>,
}

impl DeadzoneMask {
    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_dead(&self, r: usize, c: usize) -> bool {
        self.mask[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[bool] {
        &self.mask[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }

    pub fn count_per_row(&self) -> &[usize] {
        &self.count_per_row
    }

    pub fn total(&self) -> usize {
        self.count_per_row.iter().sum()
    }
}

pub fn deadzone_mask(w: &WeightMatrix, q: &QuantizedTensor) -> Result<DeadzoneMask> {
    if w.shape() != q.shape() {
        return Err(Error::shape(format!(
            "weights {:?} vs quantized {:?}",
            w.shape(),
            q.shape()
        )));
    }
    let layout = q.layout();
    let mut mask = vec![false; w.rows() * w.cols()];
    let mut count_per_row = vec![0; w.rows()];
    for r in 0..w.rows() {
        let row = w.row(r);
        for s in 0..layout.segments_per_row() {
            let delta = q.thresholds[layout.group_of_segment(r, s)];
            for c in layout.segment_range(s) {
                if row[c].abs() < delta {
                    mask[r * w.cols() + c] = true;
                    count_per_row[r] += 1;
                }
            }
        }
    }
    Ok(DeadzoneMask {
        rows: w.rows(),
        cols: w.cols(),
        mask,
        count_per_row,
    })
}

/// Per-output-channel bias, one value per weight row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BiasVector(pub Vec<f64>);

impl BiasVector {
    pub fn zeros(rows: usize) -> Self {
        BiasVector(vec![0.0; rows])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `bias[r] = lambda * sum of the dead weights in row r`.
pub fn tequila_bias(w: &WeightMatrix, mask: &DeadzoneMask, lambda: f64) -> Result<BiasVector> {
    if w.shape() != (mask.rows, mask.cols) {
        return Err(Error::shape(format!(
            "weights {:?} vs mask {:?}",
            w.shape(),
            (mask.rows, mask.cols)
        )));
    }
    if !lambda.is_finite() {
        return Err(Error::InvalidParam(format!("lambda {lambda} is not finite")));
    }
    let values = (0..w.rows())
        .map(|r| {
            let dead_sum: f64 = w
                .row(r)
                .iter()
                .zip(mask.row(r))
                .filter(|(_, &d)| d)
                .map(|(&v, _)| v)
                .sum();
            lambda * dead_sum
        })
        .collect();
    Ok(BiasVector(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: [f64; 4] = [0.4, -0.2, 0.1, -0.9];

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn absmean_examples() {
        let (a, d) = absmean_params(&EXAMPLE).unwrap();
        assert!(close(a, 0.4) && close(d, 0.2));
        assert_eq!(absmean_params(&[0.0; 4]).unwrap(), (0.0, 0.0));
        assert_eq!(absmean_params(&[0.3; 5]).unwrap(), (0.3, 0.15));
        assert!(matches!(absmean_params(&[]), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn twn_examples() {
        let (a, d) = twn_params(&[0.5; 7]).unwrap();
        assert!(close(a, 0.5) && close(d, 0.375));
        assert_eq!(twn_params(&[1.0, 0.0, 0.0, 0.0]).unwrap(), (1.0, 0.1875));
        assert_eq!(twn_params(&[0.0, 0.0]).unwrap(), (0.0, 0.0));
        assert!(twn_params(&[]).is_err());
    }

    #[test]
    fn ternarize_examples() {
        assert_eq!(ternarize(&EXAMPLE, 0.2).unwrap(), vec![1, -1, 0, -1]);
        assert_eq!(ternarize(&[0.25, -0.25], 0.25).unwrap(), vec![1, -1]);
        assert_eq!(ternarize(&[0.0, -0.5], 0.0).unwrap(), vec![1, -1]);
        assert!(matches!(ternarize(&[1.0], -0.1), Err(Error::InvalidThreshold(_))));
        assert!(ternarize(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn quantize_per_tensor_example() {
        let w = Matrix::from_vec(1, 4, EXAMPLE.to_vec()).unwrap();
        let q = quantize(&w, QuantScheme::Absmean, Granularity::PerTensor).unwrap();
        assert_eq!(q.codes(), &[1, -1, 0, -1]);
        assert_eq!(q.scales().len(), 1);
        assert!(close(q.scales()[0], 0.4));
        let deq = dequantize(&q);
        assert!(close(deq.get(0, 0), 0.4) && deq.get(0, 2) == 0.0 && close(deq.get(0, 3), -0.4));
    }

    #[test]
    fn zero_matrix_quantizes_to_zero() {
        let w = Matrix::zeros(3, 5);
        for scheme in [QuantScheme::Absmean, QuantScheme::Twn] {
            let q = quantize(&w, scheme, Granularity::PerGroup { group_size: 2 }).unwrap();
            assert!(q.codes().iter().all(|&c| c == 0));
            assert!(q.scales().iter().all(|&a| a == 0.0));
        }
    }

    #[test]
    fn per_channel_matches_full_width_groups() {
        let w = Matrix::from_rows(&[vec![0.3, -0.1, 0.7], vec![-0.2, 0.05, 0.0]]).unwrap();
        let a = quantize(&w, QuantScheme::Twn, Granularity::PerChannel).unwrap();
        let b = quantize(&w, QuantScheme::Twn, Granularity::PerGroup { group_size: 3 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scales().len(), 2);
    }

    #[test]
    fn ragged_last_group_uses_own_elements() {
        let w = Matrix::from_vec(1, 5, vec![1.0, 1.0, 1.0, 1.0, 0.2]).unwrap();
        let q = quantize(&w, QuantScheme::Absmean, Granularity::PerGroup { group_size: 2 }).unwrap();
        assert_eq!(q.scales(), &[1.0, 1.0, 0.2]);
        assert_eq!(q.codes()[4], 1);
    }

    #[test]
    fn deadzone_and_bias_examples() {
        let w = Matrix::from_vec(1, 4, EXAMPLE.to_vec()).unwrap();
        let q = quantize(&w, QuantScheme::Absmean, Granularity::PerTensor).unwrap();
        let mask = deadzone_mask(&w, &q).unwrap();
        assert_eq!(mask.as_slice(), &[false, false, true, false]);
        assert_eq!(mask.count_per_row(), &[1]);
        let bias = tequila_bias(&w, &mask, DEFAULT_LAMBDA).unwrap();
        assert!(close(bias.0[0], 1e-4));

        // Delta = 0 leaves nothing in the deadzone.
        let q0 = quantize_with_params(&w, Granularity::PerTensor, vec![1.0], vec![0.0]).unwrap();
        let m0 = deadzone_mask(&w, &q0).unwrap();
        assert_eq!(m0.total(), 0);
        assert_eq!(tequila_bias(&w, &m0, 0.5).unwrap().0, vec![0.0]);

        // Everything dead: bias is lambda times the row sum.
        let z = Matrix::zeros(1, 3);
        let qz = quantize_with_params(&z, Granularity::PerTensor, vec![1.0], vec![0.1]).unwrap();
        assert_eq!(deadzone_mask(&z, &qz).unwrap().total(), 3);
        let qd = quantize_with_params(&w, Granularity::PerTensor, vec![1.0], vec![5.0]).unwrap();
        let md = deadzone_mask(&w, &qd).unwrap();
        let b = tequila_bias(&w, &md, 0.1).unwrap();
        assert!(close(b.0[0], 0.1 * EXAMPLE.iter().sum::<f64>()));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let w = Matrix::zeros(2, 3);
        let q = quantize(&Matrix::zeros(3, 2), QuantScheme::Absmean, Granularity::PerTensor).unwrap();
        assert!(matches!(deadzone_mask(&w, &q), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn unknown_scheme_is_unsupported() {
        assert!(matches!("lsq".parse::<QuantScheme>(), Err(Error::UnsupportedScheme(_))));
        assert_eq!("twn".parse::<QuantScheme>().unwrap(), QuantScheme::Twn);
    }

    #[test]
    fn from_parts_enforces_degenerate_rule() {
        let bad = QuantizedTensor::from_parts(1, 2, vec![1, 0], vec![0.0], vec![0.0], Granularity::PerTensor);
        assert!(bad.is_err());
        let bad_code = QuantizedTensor::from_parts(1, 1, vec![2], vec![1.0], vec![0.0], Granularity::PerTensor);
        assert!(matches!(bad_code, Err(Error::InvalidCode(_))));
    }
}
