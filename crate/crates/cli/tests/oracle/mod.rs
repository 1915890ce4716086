//! Scalar reference implementations written directly from the defining
//! formulas. Nothing here calls into the grouped or vectorized code paths
//! beyond reading inputs.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tequila_core::{Matrix, QuantizedTensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grouping {
    Tensor,
    /// Contiguous runs of this many columns within a row; the last run may be short.
    Runs(usize),
}

/// Element positions of every group, in group order.
pub fn groups(rows: usize, cols: usize, g: Grouping) -> Vec<Vec<(usize, usize)>> {
    match g {
        Grouping::Tensor => vec![(0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).collect()],
        Grouping::Runs(gs) => {
            let mut out = Vec::new();
            for r in 0..rows {
                let mut start = 0;
                while start < cols {
                    let end = (start + gs).min(cols);
                    out.push((start..end).map(|c| (r, c)).collect());
                    start = end;
                }
            }
            out
        }
    }
}

/// Index of the group holding `(r, c)`.
pub fn group_index(rows: usize, cols: usize, g: Grouping, r: usize, c: usize) -> usize {
    let _ = rows;
    match g {
        Grouping::Tensor => 0,
        Grouping::Runs(gs) => r * cols.div_ceil(gs) + c / gs,
    }
}

pub fn absmean_stats(vals: &[f64]) -> (f64, f64) {
    let mut s = 0.0;
    for v in vals {
        s += v.abs();
    }
    let alpha = s / vals.len() as f64;
    (alpha, alpha / 2.0)
}

pub fn twn_stats(vals: &[f64]) -> (f64, f64) {
    let mut s = 0.0;
    for v in vals {
        s += v.abs();
    }
    let delta = 0.75 * (s / vals.len() as f64);
    let mut kept = 0.0;
    let mut n = 0usize;
    for v in vals {
        if v.abs() >= delta {
            kept += v.abs();
            n += 1;
        }
    }
    (if n == 0 { 0.0 } else { kept / n as f64 }, delta)
}

/// Piecewise ternary map evaluated top-down.
pub fn code(v: f64, delta: f64) -> i8 {
    if v >= delta {
        1
    } else if v.abs() < delta {
        0
    } else {
        -1
    }
}

pub struct Reference {
    pub codes: Vec<i8>,
    pub scales: Vec<f64>,
    pub thresholds: Vec<f64>,
}

pub fn quantize(w: &Matrix, g: Grouping, twn: bool) -> Reference {
    let (rows, cols) = w.shape();
    let mut codes = vec![0i8; rows * cols];
    let mut scales = Vec::new();
    let mut thresholds = Vec::new();
    for members in groups(rows, cols, g) {
        let vals: Vec<f64> = members.iter().map(|&(r, c)| w.get(r, c)).collect();
        let (a, d) = if twn { twn_stats(&vals) } else { absmean_stats(&vals) };
        scales.push(a);
        thresholds.push(d);
        for &(r, c) in &members {
            codes[r * cols + c] = if a == 0.0 { 0 } else { code(w.get(r, c), d) };
        }
    }
    Reference {
        codes,
        scales,
        thresholds,
    }
}

/// Random matrix with a mix of gaussian values, exact zeros, values on a
/// coarse lattice (so ties with thresholds occur) and occasional zero rows.
pub fn random_weights(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let style = rng.gen_range(0..4);
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let v = match style {
            0 => rng.gen_range(-1.0..1.0),
            1 => f64::from(rng.gen_range(-4i32..=4)) * 0.25,
            2 => {
                if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen_range(-2.0..2.0) * 10f64.powi(rng.gen_range(-3..2))
                }
            }
            _ => rng.gen_range(-0.05..0.05),
        };
        data.push(v);
    }
    if rows > 1 && rng.gen_bool(0.2) {
        let r = rng.gen_range(0..rows);
        for c in 0..cols {
            data[r * cols + c] = 0.0;
        }
    }
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Where each (r, c) falls: `(alpha, delta)` of its group, read from `q`.
fn group_params(q: &QuantizedTensor, g: Grouping, r: usize, c: usize) -> (f64, f64) {
    let gi = group_index(q.rows(), q.cols(), g, r, c);
    (q.scales()[gi], q.thresholds()[gi])
}

pub enum DeadRule {
    /// Straight-through: dead weights pass the upstream product unchanged.
    Identity,
    /// `eps * sum_b sign(x) g`.
    SignedMinima(f64),
    /// `sum_b g (x + lambda)`.
    Mixed(f64),
    /// `lambda * sum_b g`.
    BiasOnly(f64),
}

/// Weight gradient for a linear layer `y[b][r] = sum_c what[r][c] x[b][c]`
/// under the straight-through family of rules.
pub fn weight_grad(g: &Matrix, x: &Matrix, w: &Matrix, q: &QuantizedTensor, grouping: Grouping, rule: &DeadRule) -> Matrix {
    let (rows, cols) = w.shape();
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let (alpha, delta) = group_params(q, grouping, r, c);
            let mut raw = 0.0;
            let mut gsum = 0.0;
            let mut signed = 0.0;
            for b in 0..x.rows() {
                raw += g.get(b, r) * x.get(b, c);
                gsum += g.get(b, r);
                signed += sign(x.get(b, c)) * g.get(b, r);
            }
            let dead = w.get(r, c).abs() < delta;
            let v = if !dead {
                alpha * raw
            } else {
                match rule {
                    DeadRule::Identity => raw,
                    DeadRule::SignedMinima(eps) => eps * signed,
                    DeadRule::Mixed(l) => raw + l * gsum,
                    DeadRule::BiasOnly(l) => l * gsum,
                }
            };
            out.set(r, c, v);
        }
    }
    out
}

/// `d/dalpha_k` of `sum G * y` for the plain grouped forward.
pub fn alpha_grad(g: &Matrix, x: &Matrix, q: &QuantizedTensor, grouping: Grouping) -> Vec<f64> {
    let mut out = vec![0.0; q.scales().len()];
    for r in 0..q.rows() {
        for c in 0..q.cols() {
            let k = group_index(q.rows(), q.cols(), grouping, r, c);
            for b in 0..x.rows() {
                out[k] += g.get(b, r) * f64::from(q.code(r, c)) * x.get(b, c);
            }
        }
    }
    out
}

/// Offset gradient of the additive-offset forward: every weight of the group moves with `b`.
pub fn dlt_offset_grad(g: &Matrix, x: &Matrix, q: &QuantizedTensor, grouping: Grouping) -> Vec<f64> {
    let mut out = vec![0.0; q.scales().len()];
    for r in 0..q.rows() {
        for c in 0..q.cols() {
            let k = group_index(q.rows(), q.cols(), grouping, r, c);
            for b in 0..x.rows() {
                out[k] += g.get(b, r) * x.get(b, c);
            }
        }
    }
    out
}

/// Offset gradient of the zero-point forward: only dead codes evaluate to `alpha * b`.
pub fn seq_offset_grad(g: &Matrix, x: &Matrix, w: &Matrix, q: &QuantizedTensor, grouping: Grouping) -> Vec<f64> {
    let mut out = vec![0.0; q.scales().len()];
    for r in 0..q.rows() {
        for c in 0..q.cols() {
            let k = group_index(q.rows(), q.cols(), grouping, r, c);
            if w.get(r, c).abs() < q.thresholds()[k] {
                for b in 0..x.rows() {
                    out[k] += q.scales()[k] * g.get(b, r) * x.get(b, c);
                }
            }
        }
    }
    out
}

/// `sum_b sum_r G[b][r] y[b][r]`.
pub fn contract(g: &Matrix, y: &Matrix) -> f64 {
    let mut s = 0.0;
    for (a, b) in g.as_slice().iter().zip(y.as_slice()) {
        s += a * b;
    }
    s
}

/// Absolute floor below which two values count as equal regardless of ratio.
pub const ABS_FLOOR: f64 = 1e-12;

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    let d = (a - b).abs();
    d <= tol * a.abs().max(b.abs()) || d <= ABS_FLOOR
}

/// First index where the slices disagree beyond `tol`.
pub fn first_mismatch(a: &[f64], b: &[f64], tol: f64) -> Option<(usize, f64, f64)> {
    if a.len() != b.len() {
        return Some((usize::MAX, a.len() as f64, b.len() as f64));
    }
    a.iter()
        .zip(b)
        .enumerate()
        .find(|(_, (x, y))| !rel_close(**x, **y, tol))
        .map(|(i, (x, y))| (i, *x, *y))
}

pub fn bits_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}
