//! Forward and backward rules of every scheme, as pure functions of the
//! layer input, the freshly quantized weights and the deadzone mask.
//!
//! Shapes: inputs `x` are `batch x cols`, outputs and upstream gradients
//! `batch x rows`, weight gradients `rows x cols`. Codes and masks are treated
//! as constants when differentiating; scales enter the straight-through rule
//! as detached constants.

use crate::error::{Error, Result};
use crate::matrix::{sign, Matrix};
use crate::quantizer::{dequantize, BiasVector, DeadzoneMask, GroupLayout, QuantizedTensor};

use super::Scheme;

/// Everything a backward pass needs from the matching forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub scheme: Scheme,
    pub input: Matrix,
    pub quantized: QuantizedTensor,
    pub mask: DeadzoneMask,
    /// Deadzone bias used by the forward pass (tequila variants only).
    pub bias: Option<BiasVector>,
    pub lambda: f64,
    pub epsilon: f64,
    /// Per-group offsets `b` (dlt and seq only).
    pub offsets: Option<Vec<f64>>,
    pub(crate) version: u64,
}

impl ForwardCache {
    pub fn new(scheme: Scheme, input: Matrix, quantized: QuantizedTensor, mask: DeadzoneMask) -> Self {
        Self {
            scheme,
            input,
            quantized,
            mask,
            bias: None,
            lambda: 0.0,
            epsilon: 0.0,
            offsets: None,
            version: 0,
        }
    }

    pub fn with_lambda(mut self, lambda: f64, bias: BiasVector) -> Self {
        self.lambda = lambda;
        self.bias = Some(bias);
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_offsets(mut self, offsets: Vec<f64>) -> Self {
        self.offsets = Some(offsets);
        self
    }
}

/// Gradients of a learnable-parameter scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnableGrads {
    pub weights: Matrix,
    pub alpha: Option<Vec<f64>>,
    pub offsets: Option<Vec<f64>>,
}

fn check_input(x: &Matrix, q: &QuantizedTensor) -> Result<()> {
    if x.cols() != q.cols() {
        return Err(Error::shape(format!(
            "input has {} features, layer expects {}",
            x.cols(),
            q.cols()
        )));
    }
    Ok(())
}

fn check_mask(q: &QuantizedTensor, mask: &DeadzoneMask) -> Result<()> {
    if (mask.rows(), mask.cols()) != q.shape() {
        return Err(Error::shape("deadzone mask does not match the quantized weights"));
    }
    Ok(())
}

fn check_offsets(q: &QuantizedTensor, b: &[f64]) -> Result<()> {
    if b.len() != q.scales().len() {
        return Err(Error::shape(format!(
            "{} offsets for {} groups",
            b.len(),
            q.scales().len()
        )));
    }
    Ok(())
}

#[inline]
fn code_dot(codes: &[i8], x: &[f64]) -> f64 {
    codes.iter().zip(x).map(|(&c, &v)| f64::from(c) * v).sum()
}

/// Core ternary product: `y[b][r] = sum_g alpha_g * sum_{j in g} code[r][j] * x[b][j]`,
/// with `extra(b, r, s, group)` added inside the scale of each group and
/// `outer(b, r, s, group)` added outside it.
fn grouped_forward(
    x: &Matrix,
    q: &QuantizedTensor,
    mut inner: impl FnMut(usize, usize, std::ops::Range<usize>, usize) -> f64,
    mut outer: impl FnMut(usize, usize, std::ops::Range<usize>, usize) -> f64,
) -> Matrix {
    let layout = q.layout();
    let scales = q.scales();
    let mut y = Matrix::zeros(x.rows(), q.rows());
    for b in 0..x.rows() {
        let xr = x.row(b);
        for r in 0..q.rows() {
            let codes = q.code_row(r);
            let mut acc = 0.0;
            for s in 0..layout.segments_per_row() {
                let range = layout.segment_range(s);
                let gi = layout.group_of_segment(r, s);
                let part = code_dot(&codes[range.clone()], &xr[range.clone()]);
                acc += scales[gi] * (part + inner(b, r, range.clone(), gi))
                    + outer(b, r, range, gi);
            }
            y.set(b, r, acc);
        }
    }
    y
}

/// Plain ternary forward `y = x * dequantize(q)^T`, scaled per group.
pub fn forward_ternary(x: &Matrix, q: &QuantizedTensor) -> Result<Matrix> {
    check_input(x, q)?;
    Ok(grouped_forward(x, q, |_, _, _, _| 0.0, |_, _, _, _| 0.0))
}

/// Minima reactivation: the ternary product plus
/// `epsilon * sum_{j dead} sign(x[b][j]) * sign(w[r][j])`.
pub fn forward_minima(
    x: &Matrix,
    w: &Matrix,
    q: &QuantizedTensor,
    mask: &DeadzoneMask,
    epsilon: f64,
) -> Result<Matrix> {
    check_input(x, q)?;
    check_mask(q, mask)?;
    if w.shape() != q.shape() {
        return Err(Error::shape("shadow weights do not match the quantized weights"));
    }
    let mut y = grouped_forward(x, q, |_, _, _, _| 0.0, |_, _, _, _| 0.0);
    for b in 0..x.rows() {
        let xr = x.row(b);
        for r in 0..q.rows() {
            let dead: f64 = w
                .row(r)
                .iter()
                .zip(mask.row(r))
                .zip(xr)
                .filter(|((_, &d), _)| d)
                .map(|((&wv, _), &xv)| sign(xv) * sign(wv))
                .sum();
            y.set(b, r, y.get(b, r) + epsilon * dead);
        }
    }
    Ok(y)
}

/// Tequila forward: the ternary product plus the per-row deadzone bias.
pub fn forward_tequila(x: &Matrix, q: &QuantizedTensor, bias: &BiasVector) -> Result<Matrix> {
    check_input(x, q)?;
    if bias.len() != q.rows() {
        return Err(Error::shape(format!("{} biases for {} rows", bias.len(), q.rows())));
    }
    let mut y = grouped_forward(x, q, |_, _, _, _| 0.0, |_, _, _, _| 0.0);
    for b in 0..y.rows() {
        for (v, &c) in y.row_mut(b).iter_mut().zip(bias.as_slice()) {
            *v += c;
        }
    }
    Ok(y)
}

/// DLT: `y[b][r] = sum_g alpha_g * (codes . x)_g + b_g * (sum_{j in g} x[b][j])`.
pub fn forward_dlt(x: &Matrix, q: &QuantizedTensor, offsets: &[f64]) -> Result<Matrix> {
    check_input(x, q)?;
    check_offsets(q, offsets)?;
    Ok(grouped_forward(x, q, |_, _, _, _| 0.0, |b, _, range, gi| {
        offsets[gi] * x.row(b)[range].iter().sum::<f64>()
    }))
}

/// SEQ: dead codes evaluate to `b_g`, so
/// `y[b][r] = sum_g alpha_g * ((codes . x)_g + b_g * sum_{j in g, dead} x[b][j])`.
pub fn forward_seq(x: &Matrix, q: &QuantizedTensor, mask: &DeadzoneMask, offsets: &[f64]) -> Result<Matrix> {
    check_input(x, q)?;
    check_mask(q, mask)?;
    check_offsets(q, offsets)?;
    Ok(grouped_forward(
        x,
        q,
        |b, r, range, gi| {
            let dead = &mask.row(r)[range.clone()];
            let dead_sum: f64 = x.row(b)[range]
                .iter()
                .zip(dead)
                .filter(|(_, &d)| d)
                .map(|(&v, _)| v)
                .sum();
            offsets[gi] * dead_sum
        },
        |_, _, _, _| 0.0,
    ))
}

/// LSQ forward is the ternary product with learned scales already in `q`.
pub fn forward_lsq(x: &Matrix, q: &QuantizedTensor) -> Result<Matrix> {
    forward_ternary(x, q)
}

fn check_cache(g: &Matrix, cache: &ForwardCache, allowed: &[Scheme], op: &str) -> Result<()> {
    if !allowed.contains(&cache.scheme) {
        return Err(Error::Cache(format!(
            "{op} cannot consume a cache produced by a {} forward",
            cache.scheme
        )));
    }
    if g.shape() != (cache.input.rows(), cache.quantized.rows()) {
        return Err(Error::shape(format!(
            "upstream gradient {:?}, expected {:?}",
            g.shape(),
            (cache.input.rows(), cache.quantized.rows())
        )));
    }
    Ok(())
}

/// `raw[r][j] = sum_b g[b][r] * x[b][j]`.
fn outer_sum(g: &Matrix, x: &Matrix) -> Matrix {
    g.t_matmul(x).expect("batch sizes checked")
}

/// Applies the straight-through rule to live weights of `raw` in place:
/// multiply by the group scale where `|w| >= delta`; `dead` decides the
/// value for deadzone weights.
fn apply_ste(
    raw: &mut Matrix,
    q: &QuantizedTensor,
    mask: &DeadzoneMask,
    mut dead: impl FnMut(usize, usize, f64) -> f64,
) {
    let layout: GroupLayout = q.layout();
    let scales = q.scales();
    for r in 0..raw.rows() {
        for s in 0..layout.segments_per_row() {
            let alpha = scales[layout.group_of_segment(r, s)];
            for c in layout.segment_range(s) {
                let v = raw.get(r, c);
                let out = if mask.is_dead(r, c) { dead(r, c, v) } else { v * alpha };
                raw.set(r, c, out);
            }
        }
    }
}

const STE_SCHEMES: [Scheme; 5] = [
    Scheme::Absmean,
    Scheme::Twn,
    Scheme::Lsq,
    Scheme::Seq,
    Scheme::Dlt,
];

/// Straight-through estimator: `sum_b g x * alpha` outside the deadzone,
/// `sum_b g x` inside it.
pub fn backward_ste(g: &Matrix, cache: &ForwardCache) -> Result<Matrix> {
    check_cache(g, cache, &STE_SCHEMES, "backward_ste")?;
    let mut raw = outer_sum(g, &cache.input);
    apply_ste(&mut raw, &cache.quantized, &cache.mask, |_, _, v| v);
    Ok(raw)
}

/// Dead weights receive `epsilon * sum_b sign(x[b][j]) * g[b][r]`; live
/// weights follow the straight-through rule.
pub fn backward_minima(g: &Matrix, cache: &ForwardCache) -> Result<Matrix> {
    check_cache(g, cache, &[Scheme::Minima], "backward_minima")?;
    let signs = cache.input.map(sign);
    let sign_sum = outer_sum(g, &signs);
    let eps = cache.epsilon;
    let mut raw = outer_sum(g, &cache.input);
    apply_ste(&mut raw, &cache.quantized, &cache.mask, |r, c, _| eps * sign_sum.get(r, c));
    Ok(raw)
}

fn row_grad_sums(g: &Matrix) -> Vec<f64> {
    g.col_sums()
}

/// Mixed gradients: dead weights receive `sum_b g[b][r] * (x[b][j] + lambda)`.
pub fn backward_tequila(g: &Matrix, cache: &ForwardCache) -> Result<Matrix> {
    check_cache(g, cache, &[Scheme::Tequila], "backward_tequila")?;
    let gsum = row_grad_sums(g);
    let lambda = cache.lambda;
    let mut raw = outer_sum(g, &cache.input);
    apply_ste(&mut raw, &cache.quantized, &cache.mask, |r, _, v| v + lambda * gsum[r]);
    Ok(raw)
}

/// Bias-only ablation: dead weights receive `lambda * sum_b g[b][r]`.
pub fn backward_tequila_no_mixed(g: &Matrix, cache: &ForwardCache) -> Result<Matrix> {
    check_cache(g, cache, &[Scheme::TequilaNoMixed], "backward_tequila_no_mixed")?;
    let gsum = row_grad_sums(g);
    let lambda = cache.lambda;
    let mut raw = outer_sum(g, &cache.input);
    apply_ste(&mut raw, &cache.quantized, &cache.mask, |r, _, _| lambda * gsum[r]);
    Ok(raw)
}

/// Weight gradients by the straight-through rule plus exact gradients of the
/// learnable scales and offsets with codes and mask held fixed.
pub fn backward_learnable(g: &Matrix, cache: &ForwardCache) -> Result<LearnableGrads> {
    check_cache(g, cache, &[Scheme::Lsq, Scheme::Dlt, Scheme::Seq], "backward_learnable")?;
    let q = &cache.quantized;
    let raw = outer_sum(g, &cache.input);
    let layout = q.layout();
    let groups = layout.num_groups();

    let alpha = cache.scheme.learns_alpha().then(|| {
        let mut ga = vec![0.0; groups];
        for r in 0..q.rows() {
            let codes = q.code_row(r);
            let rr = raw.row(r);
            for s in 0..layout.segments_per_row() {
                let range = layout.segment_range(s);
                ga[layout.group_of_segment(r, s)] += code_dot(&codes[range.clone()], &rr[range]);
            }
        }
        ga
    });

    let offsets = match cache.scheme {
        Scheme::Dlt => {
            let mut gb = vec![0.0; groups];
            for r in 0..q.rows() {
                let rr = raw.row(r);
                for s in 0..layout.segments_per_row() {
                    gb[layout.group_of_segment(r, s)] += rr[layout.segment_range(s)].iter().sum::<f64>();
                }
            }
            Some(gb)
        }
        Scheme::Seq => {
            let mut gb = vec![0.0; groups];
            for r in 0..q.rows() {
                let rr = raw.row(r);
                let dead = cache.mask.row(r);
                for s in 0..layout.segments_per_row() {
                    let range = layout.segment_range(s);
                    let dead_sum: f64 = rr[range.clone()]
                        .iter()
                        .zip(&dead[range])
                        .filter(|(_, &d)| d)
                        .map(|(&v, _)| v)
                        .sum();
                    gb[layout.group_of_segment(r, s)] += dead_sum;
                }
            }
            for (v, &a) in gb.iter_mut().zip(q.scales()) {
                *v *= a;
            }
            Some(gb)
        }
        _ => None,
    };

    let mut weights = raw;
    apply_ste(&mut weights, q, &cache.mask, |_, _, v| v);
    Ok(LearnableGrads {
        weights,
        alpha,
        offsets,
    })
}

/// Effective dense weights seen by the input in the forward pass. The sign
/// term of minima reactivation has zero derivative with respect to `x`.
pub fn effective_weights(cache: &ForwardCache) -> Matrix {
    let q = &cache.quantized;
    let mut e = dequantize(q);
    match (cache.scheme, cache.offsets.as_deref()) {
        (Scheme::Dlt, Some(b)) => {
            let layout = q.layout();
            for r in 0..q.rows() {
                for s in 0..layout.segments_per_row() {
                    let off = b[layout.group_of_segment(r, s)];
                    for c in layout.segment_range(s) {
                        e.set(r, c, e.get(r, c) + off);
                    }
                }
            }
        }
        (Scheme::Seq, Some(b)) => {
            let layout = q.layout();
            for r in 0..q.rows() {
                for s in 0..layout.segments_per_row() {
                    let gi = layout.group_of_segment(r, s);
                    for c in layout.segment_range(s) {
                        if cache.mask.is_dead(r, c) {
                            e.set(r, c, q.scales()[gi] * b[gi]);
                        }
                    }
                }
            }
        }
        _ => {}
    }
    e
}

/// `dL/dx = g * E` with `E` from [`effective_weights`].
pub fn input_grad(g: &Matrix, cache: &ForwardCache) -> Result<Matrix> {
    if g.shape() != (cache.input.rows(), cache.quantized.rows()) {
        return Err(Error::shape("upstream gradient does not match the cached forward"));
    }
    g.matmul(&effective_weights(cache))
}
