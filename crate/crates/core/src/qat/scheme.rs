use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Quantization-aware training scheme of a linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Absmean statistics, plain straight-through gradients.
    Absmean,
    /// Ternary weight network statistics, plain straight-through gradients.
    Twn,
    /// Learnable per-group scale, threshold frozen at initialization.
    Lsq,
    /// Dead weights dequantize to `alpha * b` with learnable `b`.
    Seq,
    /// Learnable per-group scale and additive dequantization offset `b`.
    Dlt,
    /// Dead weights reactivated as signed minima of magnitude epsilon.
    Minima,
    /// Dead weights reactivated as a per-channel bias with mixed gradients.
    Tequila,
    /// Tequila forward, but dead weights receive only the bias-path gradient.
    TequilaNoMixed,
}

impl Scheme {
    pub const ALL: [Scheme; 8] = [
        Scheme::Absmean,
        Scheme::Twn,
        Scheme::Lsq,
        Scheme::Seq,
        Scheme::Dlt,
        Scheme::Minima,
        Scheme::Tequila,
        Scheme::TequilaNoMixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Absmean => "absmean",
            Scheme::Twn => "twn",
            Scheme::Lsq => "lsq",
            Scheme::Seq => "seq",
            Scheme::Dlt => "dlt",
            Scheme::Minima => "minima",
            Scheme::Tequila => "tequila",
            Scheme::TequilaNoMixed => "tequila-no-mixed",
        }
    }

    pub fn learns_alpha(self) -> bool {
        matches!(self, Scheme::Lsq | Scheme::Dlt)
    }

    pub fn learns_offset(self) -> bool {
        matches!(self, Scheme::Dlt | Scheme::Seq)
    }

    pub fn uses_lambda(self) -> bool {
        matches!(self, Scheme::Tequila | Scheme::TequilaNoMixed)
    }

    /// Whether the trained layer runs on the multiplication-free packed path.
    pub fn is_packable(self) -> bool {
        !matches!(self, Scheme::Seq | Scheme::Dlt | Scheme::Minima)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::UnsupportedScheme(s.to_string()))
    }
}
