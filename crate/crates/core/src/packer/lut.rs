//! Multiplication-free GEMV over packed ternary weights.
//!
//! The input is cut into segments of three values. For each segment a
//! 14-entry table holds its dot product with every canonical pattern, built
//! with at most two additions or subtractions per entry. A row then sums
//! table entries selected by its 4-bit indices, negated by the sign bit.
//! The group scale is applied once per (row, group) partial sum and the
//! frozen bias is added at the end.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::quantizer::{BiasVector, QuantizedTensor};

use super::codec::{masked_table, TripleCode, NUM_PATTERNS, PATTERNS};
use super::format::PackedLayer;

/// Accumulator type of the kernel: `f32` in deployment, `f64` for tests.
pub trait Real:
    Copy + Default + Add<Output = Self> + Sub<Output = Self> + Neg<Output = Self> + Mul<Output = Self>
{
    fn from_f32(v: f32) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    #[inline]
    fn from_f32(v: f32) -> Self {
        f64::from(v)
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Hooks for counting arithmetic in the kernel. [`NoCount`] compiles away.
pub trait OpCounter {
    /// Scale application to a group partial sum.
    fn scale<T: Real>(&mut self, alpha: T, partial: T) -> T;
    /// Addition inside table construction or segment accumulation.
    fn add<T: Real>(&mut self, a: T, b: T) -> T;
    fn sub<T: Real>(&mut self, a: T, b: T) -> T;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoCount;

impl OpCounter for NoCount {
    #[inline(always)]
    fn scale<T: Real>(&mut self, alpha: T, partial: T) -> T {
        alpha * partial
    }
    #[inline(always)]
    fn add<T: Real>(&mut self, a: T, b: T) -> T {
        a + b
    }
    #[inline(always)]
    fn sub<T: Real>(&mut self, a: T, b: T) -> T {
        a - b
    }
}

/// Operation counts of one kernel invocation.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCounts {
    /// Multiplications applying group scales.
    pub scale_multiplies: u64,
    /// Multiplications inside table construction and segment accumulation.
    pub segment_multiplies: u64,
    /// Additions and subtractions anywhere in the kernel.
    pub additions: u64,
}

impl OpCounts {
    pub fn total_multiplies(&self) -> u64 {
        self.scale_multiplies + self.segment_multiplies
    }
}

impl OpCounter for OpCounts {
    fn scale<T: Real>(&mut self, alpha: T, partial: T) -> T {
        self.scale_multiplies += 1;
        alpha * partial
    }
    fn add<T: Real>(&mut self, a: T, b: T) -> T {
        self.additions += 1;
        a + b
    }
    fn sub<T: Real>(&mut self, a: T, b: T) -> T {
        self.additions += 1;
        a - b
    }
}

/// Dot products of one input segment with the 14 canonical patterns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentLut<T = f32> {
    pub entries: [T; NUM_PATTERNS],
}

fn build_lut_counted<T: Real, C: OpCounter>(seg: [T; 3], c: &mut C) -> SegmentLut<T> {
    let [a, b, d] = seg;
    let zero = T::default();
    let ab = c.add(a, b);
    let a_b = c.sub(a, b);
    let entries = [
        zero,
        d,
        c.sub(b, d),
        b,
        c.add(b, d),
        c.sub(a_b, d),
        a_b,
        c.add(a_b, d),
        c.sub(a, d),
        a,
        c.add(a, d),
        c.sub(ab, d),
        ab,
        c.add(ab, d),
    ];
    SegmentLut { entries }
}

/// Table for one segment of three inputs; entry `p` is `x . PATTERNS[p]`.
pub fn build_lut(x_segment: [f32; 3]) -> SegmentLut<f32> {
    build_lut_counted(x_segment, &mut NoCount)
}

/// One run of a triple that falls inside a single group.
#[derive(Debug, Clone, Copy)]
struct Piece {
    /// Row-local group index.
    group: usize,
    /// Bit k set when triple position k belongs to this piece.
    mask: u8,
}

/// Splits every triple of a row at group boundaries. Padding columns belong
/// to the last group.
fn triple_plan(layer: &PackedLayer) -> Vec<Vec<Piece>> {
    let last = layer.groups_per_row() - 1;
    (0..layer.triples_per_row())
        .map(|t| {
            let mut pieces: Vec<Piece> = Vec::with_capacity(1);
            for k in 0..3 {
                let col = 3 * t + k;
                let group = (col / layer.group_size).min(last);
                match pieces.last_mut() {
                    Some(p) if p.group == group => p.mask |= 1 << k,
                    _ => pieces.push(Piece { group, mask: 1 << k }),
                }
            }
            pieces
        })
        .collect()
}

fn lut_gemv_impl<T: Real, C: OpCounter>(layer: &PackedLayer, x: &[f32], c: &mut C) -> Result<Vec<T>> {
    if x.len() != layer.padded_cols {
        return Err(Error::shape(format!(
            "input length {} != padded cols {}",
            x.len(),
            layer.padded_cols
        )));
    }
    let luts: Vec<SegmentLut<T>> = x
        .chunks_exact(3)
        .map(|s| build_lut_counted([T::from_f32(s[0]), T::from_f32(s[1]), T::from_f32(s[2])], c))
        .collect();
    let plan = triple_plan(layer);
    let masked = masked_table();
    let gpr = layer.groups_per_row();
    let mut y = Vec::with_capacity(layer.rows);
    for r in 0..layer.rows {
        let scales = &layer.scales[r * gpr..(r + 1) * gpr];
        let mut acc = T::default();
        let mut partial = T::default();
        let mut group = 0;
        for (t, pieces) in plan.iter().enumerate() {
            let code = layer.code(r, t);
            for piece in pieces {
                if piece.group != group {
                    let scaled = c.scale(T::from_f32(scales[group]), partial);
                    acc = c.add(acc, scaled);
                    partial = T::default();
                    group = piece.group;
                }
                let (index, negate) = if piece.mask == 0b111 {
                    (code.index(), code.is_negative())
                } else {
                    let part: TripleCode = masked[usize::from(code.index())][usize::from(piece.mask)];
                    (part.index(), part.is_negative() != code.is_negative())
                };
                let v = luts[t].entries[usize::from(index)];
                partial = if negate { c.sub(partial, v) } else { c.add(partial, v) };
            }
        }
        let scaled = c.scale(T::from_f32(scales[group]), partial);
        acc = c.add(acc, scaled);
        y.push(c.add(acc, T::from_f32(layer.bias[r])));
    }
    Ok(y)
}

/// Table-lookup GEMV in 32-bit. `x` must already be zero-padded to
/// `padded_cols`.
pub fn lut_gemv(layer: &PackedLayer, x: &[f32]) -> Result<Vec<f32>> {
    lut_gemv_impl::<f32, _>(layer, x, &mut NoCount)
}

/// Same kernel with 64-bit accumulation.
pub fn lut_gemv_f64(layer: &PackedLayer, x: &[f32]) -> Result<Vec<f64>> {
    lut_gemv_impl::<f64, _>(layer, x, &mut NoCount)
}

/// Same kernel, returning the output together with operation counts.
pub fn lut_gemv_counted(layer: &PackedLayer, x: &[f32]) -> Result<(Vec<f32>, OpCounts)> {
    let mut counts = OpCounts::default();
    let y = lut_gemv_impl::<f32, _>(layer, x, &mut counts)?;
    Ok((y, counts))
}

/// Zero-pads `x` to the layer's padded width.
pub fn pad_input(layer: &PackedLayer, x: &[f32]) -> Result<Vec<f32>> {
    if x.len() != layer.cols {
        return Err(Error::shape(format!("input length {} != cols {}", x.len(), layer.cols)));
    }
    let mut v = x.to_vec();
    v.resize(layer.padded_cols, 0.0);
    Ok(v)
}

/// `y[r] = sum_g alpha_g * sum_{j in g} code[r][j] * x[j] + bias[r]` with
/// explicit multiplies in 64-bit.
pub fn reference_gemv(q: &QuantizedTensor, bias: &BiasVector, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != q.cols() || bias.len() != q.rows() {
        return Err(Error::shape(format!(
            "reference gemv: {}x{} weights, {} inputs, {} biases",
            q.rows(),
            q.cols(),
            x.len(),
            bias.len()
        )));
    }
    let layout = q.layout();
    Ok((0..q.rows())
        .map(|r| {
            let codes = q.code_row(r);
            let mut acc = 0.0;
            for s in 0..layout.segments_per_row() {
                let range = layout.segment_range(s);
                let part: f64 = codes[range.clone()]
                    .iter()
                    .zip(&x[range])
                    .map(|(&c, &v)| f64::from(c) * v)
                    .sum();
                acc += q.scales()[layout.group_of_segment(r, s)] * part;
            }
            acc + bias.0[r]
        })
        .collect())
}

/// Largest absolute deviation divided by the largest reference magnitude.
/// Elementwise ratios are ill-conditioned where outputs cancel to near zero.
pub fn relative_error(y: &[f64], reference: &[f64]) -> Result<f64> {
    if y.len() != reference.len() {
        return Err(Error::InvalidShape(format!(
            "{} outputs against {} reference values",
            y.len(),
            reference.len()
        )));
    }
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dev = y.iter().zip(reference).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(if dev == 0.0 { 0.0 } else { dev / scale.max(f64::MIN_POSITIVE) })
}

/// Dense full-precision GEMV baseline over row-major `rows x cols` weights.
pub fn dense_gemv(weights: &[f32], rows: usize, cols: usize, x: &[f32]) -> Result<Vec<f32>> {
    if weights.len() != rows * cols || x.len() != cols {
        return Err(Error::shape("dense gemv shape mismatch"));
    }
    Ok(weights
        .chunks_exact(cols)
        .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
        .collect())
}

/// Multiplications performed by [`dense_gemv`].
pub fn dense_multiplies(rows: usize, cols: usize) -> u64 {
    (rows * cols) as u64
}

/// Pattern table as reals, for callers building their own tables.
pub fn pattern(index: usize) -> [f32; 3] {
    PATTERNS[index].map(f32::from)
}
