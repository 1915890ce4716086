//! Ternary weight quantization with deadzone reactivation.
//!
//! - [`quantizer`]: absmean and TWN ternarization at tensor, channel or group
//!   granularity, deadzone masks and the deadzone bias.
//! - [`qat`]: quantization-aware training of linear layers under eight
//!   schemes, an Adam optimizer and a deterministic toy training harness.
//! - [`diagnostics`]: deadzone occupancy, boundary accumulation, code flip
//!   rates and weight histograms, with CSV/JSON export.
//! - [`packer`]: 4-bit index / 1-bit sign packing, the `TQLA` file format
//!   and the multiplication-free lookup-table GEMV.
//! - [`experiment`]: multi-run comparisons and reactivation sweeps.

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod matrix;
pub mod packer;
pub mod qat;
pub mod quantizer;

pub use error::{Error, Result};
pub use matrix::{Matrix, WeightMatrix};
pub use qat::{QuantLinearLayer, Scheme, TrainConfig, TrainReport};
pub use quantizer::{
    absmean_params, deadzone_mask, dequantize, quantize, ternarize, tequila_bias, twn_params, BiasVector,
    DeadzoneMask, Granularity, QuantScheme, QuantizedTensor,
};
