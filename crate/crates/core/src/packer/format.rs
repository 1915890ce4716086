//! The `TQLA` packed-model format.
//!
//! All integers and reals are little-endian. Layout:
//!
//! ```text
//! header   magic "TQLA" | version u32 | layer_count u32
//! layer    rows u32 | cols u32 | padded_cols u32 | group_size u32 | lambda f32
//!          indices  rows * ceil(T / 2) bytes, T = padded_cols / 3 triples per row;
//!                   triple t of a row sits in byte t / 2, low nibble first
//!          signs    rows * ceil(T / 8) bytes; bit t % 8 of byte t / 8 is set
//!                   when triple t is negated
//!          scales   rows * ceil(cols / group_size) f32, row-major
//!          bias     rows f32
//! ```
//!
//! Unused nibbles and sign bits are zero. Indices 14 and 15 are invalid, as is
//! a set sign bit on index 0 or a pattern with non-zero padding columns.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::WeightMatrix;
use crate::quantizer::{tequila_bias, DeadzoneMask, Granularity, QuantizedTensor};

use super::codec::{canonical_code, decode, TripleCode, NUM_PATTERNS, PATTERNS};

pub const MAGIC: [u8; 4] = *b"TQLA";
pub const FORMAT_VERSION: u32 = 1;

/// One packed linear layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedLayer {
    pub rows: usize,
    pub cols: usize,
    pub padded_cols: usize,
    pub group_size: usize,
    pub lambda: f32,
    pub indices: Vec<u8>,
    pub signs: Vec<u8>,
    pub scales: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedModel {
    pub version: u32,
    pub layers: Vec<PackedLayer>,
}

impl Default for PackedModel {
    fn default() -> Self {
        Self {
            version: FORMAT_VERSION,
            layers: Vec::new(),
        }
    }
}

impl PackedLayer {
    #[inline]
    pub fn triples_per_row(&self) -> usize {
        self.padded_cols / 3
    }

    #[inline]
    pub fn index_stride(&self) -> usize {
        self.triples_per_row().div_ceil(2)
    }

    #[inline]
    pub fn sign_stride(&self) -> usize {
        self.triples_per_row().div_ceil(8)
    }

    #[inline]
    pub fn groups_per_row(&self) -> usize {
        self.cols.div_ceil(self.group_size)
    }

    #[inline]
    pub fn code(&self, r: usize, t: usize) -> TripleCode {
        let byte = self.indices[r * self.index_stride() + t / 2];
        let index = if t % 2 == 0 { byte & 0x0f } else { byte >> 4 };
        let negative = self.signs[r * self.sign_stride() + t / 8] >> (t % 8) & 1 == 1;
        TripleCode::from_raw(index, negative)
    }

    /// Ternary codes without padding, row-major `rows x cols`.
    pub fn codes(&self) -> Vec<i8> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            let start = out.len();
            for t in 0..self.triples_per_row() {
                out.extend_from_slice(&decode(self.code(r, t)).expect("validated index"));
            }
            out.truncate(start + self.cols);
        }
        out
    }

    /// Rebuilds the quantized tensor (group-wise, thresholds not stored and
    /// reported as zero).
    pub fn to_quantized(&self) -> Result<QuantizedTensor> {
        QuantizedTensor::from_parts(
            self.rows,
            self.cols,
            self.codes(),
            self.scales.iter().map(|&s| f64::from(s)).collect(),
            vec![0.0; self.scales.len()],
            Granularity::PerGroup {
                group_size: self.group_size,
            },
        )
    }

    pub fn bias_f64(&self) -> Vec<f64> {
        self.bias.iter().map(|&b| f64::from(b)).collect()
    }
}

/// Packs one layer: codes padded to a triple boundary, group scales expanded
/// to one per (row, group), and the deadzone bias frozen from `w`.
pub fn pack_layer(
    q: &QuantizedTensor,
    w: &WeightMatrix,
    mask: &DeadzoneMask,
    lambda: f64,
) -> Result<PackedLayer> {
    if w.shape() != q.shape() || (mask.rows(), mask.cols()) != q.shape() {
        return Err(Error::shape(format!(
            "quantized {:?}, weights {:?}, mask {:?}",
            q.shape(),
            w.shape(),
            (mask.rows(), mask.cols())
        )));
    }
    let bias = tequila_bias(w, mask, lambda)?;
    let (rows, cols) = q.shape();
    let layout = q.layout();
    let group_size = layout.segment_width();
    let padded_cols = cols.div_ceil(3) * 3;
    let mut layer = PackedLayer {
        rows,
        cols,
        padded_cols,
        group_size,
        lambda: lambda as f32,
        indices: Vec::new(),
        signs: Vec::new(),
        scales: Vec::with_capacity(rows * layout.segments_per_row()),
        bias: bias.0.iter().map(|&b| b as f32).collect(),
    };
    layer.indices = vec![0; rows * layer.index_stride()];
    layer.signs = vec![0; rows * layer.sign_stride()];
    let (is, ss) = (layer.index_stride(), layer.sign_stride());
    for r in 0..rows {
        let codes = q.code_row(r);
        for t in 0..layer.triples_per_row() {
            let mut triple = [0i8; 3];
            for (k, v) in triple.iter_mut().enumerate() {
                if let Some(&c) = codes.get(3 * t + k) {
                    *v = c;
                }
            }
            let code = canonical_code(triple)?;
            layer.indices[r * is + t / 2] |= code.index() << (4 * (t % 2));
            if code.is_negative() {
                layer.signs[r * ss + t / 8] |= 1 << (t % 8);
            }
        }
        for s in 0..layout.segments_per_row() {
            layer.scales.push(q.scales()[layout.group_of_segment(r, s)] as f32);
        }
    }
    Ok(layer)
}

/// Packs a sequence of `(quantized, shadow weights, deadzone mask)` layers.
pub fn pack_model(
    layers: &[(QuantizedTensor, WeightMatrix, DeadzoneMask)],
    lambda: f64,
) -> Result<PackedModel> {
    if !lambda.is_finite() {
        return Err(Error::InvalidParam(format!("lambda {lambda} is not finite")));
    }
    let layers = layers
        .iter()
        .map(|(q, w, m)| pack_layer(q, w, m, lambda))
        .collect::<Result<_>>()?;
    Ok(PackedModel {
        version: FORMAT_VERSION,
        layers,
    })
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidParam(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes the model. Identical models give identical bytes.
pub fn encode(model: &PackedModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&model.version.to_le_bytes());
    put_u32(&mut out, model.layers.len())?;
    for l in &model.layers {
        put_u32(&mut out, l.rows)?;
        put_u32(&mut out, l.cols)?;
        put_u32(&mut out, l.padded_cols)?;
        put_u32(&mut out, l.group_size)?;
        out.extend_from_slice(&l.lambda.to_le_bytes());
        out.extend_from_slice(&l.indices);
        out.extend_from_slice(&l.signs);
        for v in l.scales.iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::format(
                self.pos as u64,
                format!("truncated: need {n} bytes for {what}, {} left", self.buf.len() - self.pos),
            )
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<(usize, Vec<f32>)> {
        let start = self.pos;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(start as u64, "size overflow"))?, what)?;
        Ok((
            start,
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
        ))
    }
}

/// Parses and validates a serialized model.
pub fn decode_model(buf: &[u8]) -> Result<PackedModel> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"TQLA\""));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = cur.u32("layer count")? as usize;
    let mut layers = Vec::new();
    for li in 0..count {
        let header_at = cur.pos as u64;
        let rows = cur.u32("rows")? as usize;
        let cols = cur.u32("cols")? as usize;
        let padded_cols = cur.u32("padded_cols")? as usize;
        let group_size = cur.u32("group_size")? as usize;
        let lambda = f32::from_le_bytes(cur.take(4, "lambda")?.try_into().expect("4 bytes"));
        if rows == 0 || cols == 0 {
            return Err(Error::format(header_at, format!("layer {li}: empty {rows}x{cols} shape")));
        }
        if padded_cols != cols.div_ceil(3) * 3 {
            return Err(Error::format(
                header_at + 8,
                format!("layer {li}: padded_cols {padded_cols} for {cols} columns"),
            ));
        }
        if group_size == 0 || group_size > cols {
            return Err(Error::format(header_at + 12, format!("layer {li}: group_size {group_size}")));
        }
        if !lambda.is_finite() {
            return Err(Error::format(header_at + 16, format!("layer {li}: non-finite lambda")));
        }
        let mut layer = PackedLayer {
            rows,
            cols,
            padded_cols,
            group_size,
            lambda,
            indices: Vec::new(),
            signs: Vec::new(),
            scales: Vec::new(),
            bias: Vec::new(),
        };
        let t_count = layer.triples_per_row();
        let (is, ss) = (layer.index_stride(), layer.sign_stride());

        let idx_at = cur.pos;
        layer.indices = cur.take(rows * is, "indices")?.to_vec();
        let sign_at = cur.pos;
        layer.signs = cur.take(rows * ss, "signs")?.to_vec();
        for r in 0..rows {
            for b in 0..is {
                let byte = layer.indices[r * is + b];
                let at = (idx_at + r * is + b) as u64;
                for half in 0..2 {
                    let t = 2 * b + half;
                    let nib = (byte >> (4 * half)) & 0x0f;
                    if t >= t_count {
                        if nib != 0 {
                            return Err(Error::format(at, format!("layer {li}: nonzero padding nibble")));
                        }
                    } else if usize::from(nib) >= NUM_PATTERNS {
                        return Err(Error::format(at, format!("layer {li}: pattern index {nib} >= 14")));
                    } else if 3 * t + 3 > cols && PATTERNS[usize::from(nib)][cols - 3 * t..].iter().any(|&c| c != 0) {
                        return Err(Error::format(at, format!("layer {li}: nonzero code in padding columns")));
                    }
                }
            }
            for b in 0..ss {
                let byte = layer.signs[r * ss + b];
                let at = (sign_at + r * ss + b) as u64;
                for bit in 0..8 {
                    if byte >> bit & 1 == 0 {
                        continue;
                    }
                    let t = 8 * b + bit;
                    if t >= t_count {
                        return Err(Error::format(at, format!("layer {li}: sign bit set on padding")));
                    }
                    let byte_i = layer.indices[r * is + t / 2];
                    let nib = if t % 2 == 0 { byte_i & 0x0f } else { byte_i >> 4 };
                    if nib == 0 {
                        return Err(Error::format(at, format!("layer {li}: negated zero pattern")));
                    }
                }
            }
        }
        let (at, scales) = cur.f32s(rows * layer.groups_per_row(), "scales")?;
        if let Some(i) = scales.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::format((at + 4 * i) as u64, format!("layer {li}: invalid scale")));
        }
        let (at, bias) = cur.f32s(rows, "bias")?;
        if let Some(i) = bias.iter().position(|b| !b.is_finite()) {
            return Err(Error::format((at + 4 * i) as u64, format!("layer {li}: non-finite bias")));
        }
        layer.scales = scales;
        layer.bias = bias;
        layers.push(layer);
    }
    if cur.pos != buf.len() {
        return Err(Error::format(cur.pos as u64, "trailing bytes after the last layer"));
    }
    Ok(PackedModel { version, layers })
}

pub fn write_packed(model: &PackedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)?).map_err(|e| Error::io(path, e))
}

pub fn read_packed(path: impl AsRef<Path>) -> Result<PackedModel> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&buf)
}
