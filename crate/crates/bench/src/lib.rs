//! Fixtures shared by the GEMV benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tequila_core::dequantize;
use tequila_core::packer::bench::random_layer;
use tequila_core::packer::{pad_input, PackedLayer};
use tequila_core::Result;

/// Shapes benchmarked by default, as `(rows, cols)`.
pub const SHAPES: [(usize, usize); 3] = [(256, 256), (512, 1024), (1024, 4096)];

pub const GROUP_SIZE: usize = 128;

/// One packed layer with its dense twin and an input vector.
pub struct Fixture {
    pub rows: usize,
    pub cols: usize,
    pub layer: PackedLayer,
    pub dense: Vec<f32>,
    pub x: Vec<f32>,
    pub x_padded: Vec<f32>,
}

impl Fixture {
    pub fn new(rows: usize, cols: usize, group_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = random_layer(rows, cols, group_size.min(cols), &mut rng)?;
        let x: Vec<f32> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x_padded = pad_input(&layer, &x)?;
        let dense = dequantize(&layer.to_quantized()?).as_slice().iter().map(|&v| v as f32).collect();
        Ok(Self {
            rows,
            cols,
            layer,
            dense,
            x,
            x_padded,
        })
    }
}
