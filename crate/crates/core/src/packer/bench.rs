//! Wall-clock and operation-count comparison of the table-lookup kernel
//! against a dense full-precision GEMV.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quantizer::{deadzone_mask, dequantize, quantize_with_params, Granularity};

use super::format::{pack_layer, PackedLayer};
use super::lut::{dense_gemv, dense_multiplies, lut_gemv, lut_gemv_counted, pad_input};

pub const BENCH_FORMAT_VERSION: u32 = 1;

/// Operation counts for one shape. Reproducible for a given seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub rows: usize,
    pub cols: usize,
    pub group_size: usize,
    pub lut_multiplies: u64,
    pub lut_segment_multiplies: u64,
    pub dense_multiplies: u64,
}

/// Wall-clock medians for one shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTiming {
    pub rows: usize,
    pub cols: usize,
    pub repetitions: usize,
    pub lut_median_ns: u64,
    pub dense_median_ns: u64,
    /// `dense_median_ns / lut_median_ns`; informational.
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub format_version: u32,
    pub seed: u64,
    pub entries: Vec<BenchEntry>,
    /// Measured timings. Not reproducible, so kept out of the main artifact.
    #[serde(skip)]
    pub timings: Vec<BenchTiming>,
}

/// Seeded random ternary layer with roughly one third zeros.
pub fn random_layer(rows: usize, cols: usize, group_size: usize, rng: &mut impl Rng) -> Result<PackedLayer> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = Matrix::from_vec(rows, cols, data)?;
    let g = Granularity::PerGroup { group_size };
    let groups = g.layout(rows, cols)?.num_groups();
    let scales = (0..groups).map(|_| rng.gen_range(0.01..1.0)).collect();
    let q = quantize_with_params(&w, g, scales, vec![1.0 / 3.0; groups])?;
    let mask = deadzone_mask(&w, &q)?;
    pack_layer(&q, &w, &mask, 1e-3)
}

fn median_ns(mut samples: Vec<u64>) -> u64 {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

pub fn bench_gemv(shapes: &[(usize, usize)], group_size: usize, repetitions: usize, seed: u64) -> Result<BenchReport> {
    if repetitions == 0 || group_size == 0 {
        return Err(Error::InvalidParam("repetitions and group_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(shapes.len());
    let mut timings = Vec::with_capacity(shapes.len());
    for &(rows, cols) in shapes {
        let layer = random_layer(rows, cols, group_size.min(cols.max(1)), &mut rng)?;
        let x: Vec<f32> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xp = pad_input(&layer, &x)?;
        let q = layer.to_quantized()?;
        let dense: Vec<f32> = dequantize(&q).as_slice().iter().map(|&v| v as f32).collect();

        let (_, counts) = lut_gemv_counted(&layer, &xp)?;
        let mut lut_t = Vec::with_capacity(repetitions);
        let mut dense_t = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t0 = Instant::now();
            black_box(lut_gemv(black_box(&layer), black_box(&xp))?);
            lut_t.push(t0.elapsed().as_nanos() as u64);
            let t0 = Instant::now();
            black_box(dense_gemv(black_box(&dense), rows, cols, black_box(&x))?);
            dense_t.push(t0.elapsed().as_nanos() as u64);
        }
        let (lut_ns, dense_ns) = (median_ns(lut_t), median_ns(dense_t));
        entries.push(BenchEntry {
            rows,
            cols,
            group_size: layer.group_size,
            lut_multiplies: counts.total_multiplies(),
            lut_segment_multiplies: counts.segment_multiplies,
            dense_multiplies: dense_multiplies(rows, cols),
        });
        timings.push(BenchTiming {
            rows,
            cols,
            repetitions,
            lut_median_ns: lut_ns,
            dense_median_ns: dense_ns,
            speedup: dense_ns as f64 / lut_ns.max(1) as f64,
        });
    }
    Ok(BenchReport {
        format_version: BENCH_FORMAT_VERSION,
        seed,
        entries,
        timings,
    })
}
