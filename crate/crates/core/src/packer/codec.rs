//! Sign-canonical encoding of ternary triples into a 4-bit index and a sign.
//!
//! The 26 nonzero triples form 13 pairs `{t, -t}`. Index 0 is the zero
//! triple; indices 1..=13 are the triples whose first nonzero element is
//! `+1`, in lexicographic order with `-1 < 0 < +1`. Any triple is
//! `sign * PATTERNS[index]`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_PATTERNS: usize = 14;

pub const PATTERNS: [[i8; 3]; NUM_PATTERNS] = [
    [0, 0, 0],
    [0, 0, 1],
    [0, 1, -1],
    [0, 1, 0],
    [0, 1, 1],
    [1, -1, -1],
    [1, -1, 0],
    [1, -1, 1],
    [1, 0, -1],
    [1, 0, 0],
    [1, 0, 1],
    [1, 1, -1],
    [1, 1, 0],
    [1, 1, 1],
];

/// A 4-bit pattern index plus polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripleCode {
    index: u8,
    negative: bool,
}

impl TripleCode {
    pub fn new(index: u8, sign: i8) -> Result<Self> {
        if usize::from(index) >= NUM_PATTERNS {
            return Err(Error::InvalidCode(format!("pattern index {index} >= {NUM_PATTERNS}")));
        }
        let negative = match sign {
            1 => false,
            -1 => true,
            s => return Err(Error::InvalidCode(format!("sign {s} is not +1 or -1"))),
        };
        if index == 0 && negative {
            return Err(Error::InvalidCode("the zero pattern must carry sign +1".into()));
        }
        Ok(Self { index, negative })
    }

    #[inline]
    pub fn index(self) -> u8 {
        self.index
    }

    #[inline]
    pub fn sign(self) -> i8 {
        if self.negative {
            -1
        } else {
            1
        }
    }

    #[inline]
    pub fn is_negative(self) -> bool {
        self.negative
    }

    #[inline]
    pub(crate) fn from_raw(index: u8, negative: bool) -> Self {
        debug_assert!(usize::from(index) < NUM_PATTERNS && !(index == 0 && negative));
        Self { index, negative }
    }
}

pub fn canonical_code(triple: [i8; 3]) -> Result<TripleCode> {
    if let Some(v) = triple.iter().find(|v| !(-1..=1).contains(*v)) {
        return Err(Error::InvalidCode(format!("element {v} outside {{-1, 0, 1}}")));
    }
    let lead = triple.iter().copied().find(|&v| v != 0).unwrap_or(1);
    let canon = triple.map(|v| v * lead);
    let index = PATTERNS
        .iter()
        .position(|p| *p == canon)
        .expect("every sign-canonical triple is tabulated");
    Ok(TripleCode::from_raw(index as u8, lead < 0))
}

pub fn decode(code: TripleCode) -> Result<[i8; 3]> {
    let p = PATTERNS
        .get(usize::from(code.index))
        .ok_or_else(|| Error::InvalidCode(format!("pattern index {}", code.index)))?;
    Ok(p.map(|v| v * code.sign()))
}

/// `MASKED[index][mask]` is the code of `PATTERNS[index]` with positions not
/// set in the 3-bit `mask` zeroed (bit k keeps position k). Used to split a
/// triple that straddles a group boundary.
pub(crate) fn masked_table() -> &'static [[TripleCode; 8]; NUM_PATTERNS] {
    static TABLE: OnceLock<[[TripleCode; 8]; NUM_PATTERNS]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[TripleCode::from_raw(0, false); 8]; NUM_PATTERNS];
        for (i, p) in PATTERNS.iter().enumerate() {
            for mask in 0..8u8 {
                let kept = [0, 1, 2].map(|k| if mask >> k & 1 == 1 { p[k] } else { 0 });
                t[i][usize::from(mask)] = canonical_code(kept).expect("ternary");
            }
        }
        t
    })
}
