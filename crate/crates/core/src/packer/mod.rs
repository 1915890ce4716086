//! Offline packing of ternary layers and the lookup-table inference path.

pub mod bench;
pub mod codec;
pub mod format;
pub mod lut;

pub use bench::{bench_gemv, BenchEntry, BenchReport, BenchTiming};
pub use codec::{canonical_code, decode, TripleCode, NUM_PATTERNS, PATTERNS};
pub use format::{decode_model, encode, pack_layer, pack_model, read_packed, write_packed, PackedLayer, PackedModel};
pub use lut::{
    build_lut, dense_gemv, dense_multiplies, lut_gemv, lut_gemv_counted, lut_gemv_f64, pad_input, reference_gemv,
    relative_error, OpCounts, SegmentLut,
};
