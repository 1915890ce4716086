use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, WeightMatrix};
use crate::quantizer::{
    deadzone_mask, quantize, quantize_with_params, tequila_bias, DeadzoneMask,
    Granularity, QuantScheme, QuantizedTensor, DEFAULT_LAMBDA,
};

use super::ops::{self, ForwardCache};
use super::Scheme;

/// Default signed-minimum magnitude for minima reactivation.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Quantized linear layer as seen during training: full-precision shadow
/// weights plus whatever learnable parameters the scheme needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantLinearLayer {
    weights: WeightMatrix,
    scheme: Scheme,
    granularity: Granularity,
    lambda: f64,
    epsilon: f64,
    /// Learnable per-group scales (lsq, dlt).
    alpha: Option<Vec<f64>>,
    /// Thresholds frozen at initialization (lsq, dlt).
    frozen_delta: Option<Vec<f64>>,
    /// Learnable per-group offsets (dlt, seq).
    offsets: Option<Vec<f64>>,
    #[serde(skip)]
    version: u64,
    #[serde(skip)]
    cache: Option<ForwardCache>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub alpha: Option<Vec<f64>>,
    pub offsets: Option<Vec<f64>>,
    pub input: Matrix,
}

impl QuantLinearLayer {
    pub fn new(
        weights: WeightMatrix,
        scheme: Scheme,
        granularity: Granularity,
        lambda: f64,
        epsilon: f64,
    ) -> Result<Self> {
        weights.validate_weights()?;
        if !lambda.is_finite() || !epsilon.is_finite() {
            return Err(Error::InvalidParam("lambda and epsilon must be finite".into()));
        }
        let granularity = granularity.canonical(weights.cols())?;
        let layout = granularity.layout(weights.rows(), weights.cols())?;
        let mut layer = Self {
            weights,
            scheme,
            granularity,
            lambda: if scheme.uses_lambda() { lambda } else { 0.0 },
            epsilon: if scheme == Scheme::Minima { epsilon } else { 0.0 },
            alpha: None,
            frozen_delta: None,
            offsets: None,
            version: 0,
            cache: None,
        };
        if scheme.learns_alpha() {
            let init = quantize(&layer.weights, QuantScheme::Absmean, granularity)?;
            layer.alpha = Some(init.scales().to_vec());
            layer.frozen_delta = Some(init.thresholds().to_vec());
        }
        if scheme.learns_offset() {
            layer.offsets = Some(vec![0.0; layout.num_groups()]);
        }
        Ok(layer)
    }

    /// Layer with default reactivation constants.
    pub fn with_defaults(weights: WeightMatrix, scheme: Scheme, granularity: Granularity) -> Result<Self> {
        Self::new(weights, scheme, granularity, DEFAULT_LAMBDA, DEFAULT_EPSILON)
    }

    /// Gaussian init with standard deviation `std`.
    pub fn random(
        rows: usize,
        cols: usize,
        std: f64,
        scheme: Scheme,
        granularity: Granularity,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidParam(e.to_string()))?;
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        Self::with_defaults(Matrix::from_vec(rows, cols, data)?, scheme, granularity)
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn alpha(&self) -> Option<&[f64]> {
        self.alpha.as_deref()
    }

    pub fn offsets(&self) -> Option<&[f64]> {
        self.offsets.as_deref()
    }

    pub fn set_offsets(&mut self, offsets: Vec<f64>) -> Result<()> {
        match &self.offsets {
            Some(cur) if cur.len() == offsets.len() => {
                self.offsets = Some(offsets);
                self.touch();
                Ok(())
            }
            Some(cur) => Err(Error::shape(format!("{} offsets for {} groups", offsets.len(), cur.len()))),
            None => Err(Error::InvalidParam(format!("{} has no offsets", self.scheme))),
        }
    }

    pub fn rows(&self) -> usize {
        self.weights.rows()
    }

    pub fn cols(&self) -> usize {
        self.weights.cols()
    }

    /// Quantizes the current shadow weights. Called at the start of every
    /// forward so codes, masks and biases never lag the weights.
    pub fn quantize_current(&self) -> Result<(QuantizedTensor, DeadzoneMask)> {
        let q = match self.scheme {
            Scheme::Twn => quantize(&self.weights, QuantScheme::Twn, self.granularity)?,
            Scheme::Lsq | Scheme::Dlt => quantize_with_params(
                &self.weights,
                self.granularity,
                self.alpha.clone().expect("learnable scales"),
                self.frozen_delta.clone().expect("frozen thresholds"),
            )?,
            _ => quantize(&self.weights, QuantScheme::Absmean, self.granularity)?,
        };
        let mask = deadzone_mask(&self.weights, &q)?;
        Ok((q, mask))
    }

    /// Forward pass; stores the cache consumed by the next [`backward`](Self::backward).
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let (y, cache) = self.forward_with_cache(x)?;
        self.cache = Some(cache);
        Ok(y)
    }

    /// Forward pass without retaining a cache, for evaluation.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        self.forward_with_cache(x).map(|(y, _)| y)
    }

    fn forward_with_cache(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let (q, mask) = self.quantize_current()?;
        let mut cache = ForwardCache::new(self.scheme, x.clone(), q, mask);
        cache.version = self.version;
        let y = match self.scheme {
            Scheme::Absmean | Scheme::Twn => ops::forward_ternary(x, &cache.quantized)?,
            Scheme::Lsq => ops::forward_lsq(x, &cache.quantized)?,
            Scheme::Minima => {
                cache = cache.with_epsilon(self.epsilon);
                ops::forward_minima(x, &self.weights, &cache.quantized, &cache.mask, self.epsilon)?
            }
            Scheme::Tequila | Scheme::TequilaNoMixed => {
                let bias = tequila_bias(&self.weights, &cache.mask, self.lambda)?;
                let y = ops::forward_tequila(x, &cache.quantized, &bias)?;
                cache = cache.with_lambda(self.lambda, bias);
                y
            }
            Scheme::Dlt => {
                let b = self.offsets.clone().expect("dlt offsets");
                let y = ops::forward_dlt(x, &cache.quantized, &b)?;
                cache = cache.with_offsets(b);
                y
            }
            Scheme::Seq => {
                let b = self.offsets.clone().expect("seq offsets");
                let y = ops::forward_seq(x, &cache.quantized, &cache.mask, &b)?;
                cache = cache.with_offsets(b);
                y
            }
        };
        Ok((y, cache))
    }

    /// Consumes the cache of the last forward. Fails if there is none or if
    /// the parameters changed since it was produced.
    pub fn backward(&mut self, g: &Matrix) -> Result<LayerGrads> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Cache("backward called without a preceding forward".into()))?;
        if cache.version != self.version {
            return Err(Error::Cache("parameters changed since the forward pass".into()));
        }
        let (weights, alpha, offsets) = match self.scheme {
            Scheme::Absmean | Scheme::Twn => (ops::backward_ste(g, &cache)?, None, None),
            Scheme::Minima => (ops::backward_minima(g, &cache)?, None, None),
            Scheme::Tequila => (ops::backward_tequila(g, &cache)?, None, None),
            Scheme::TequilaNoMixed => (ops::backward_tequila_no_mixed(g, &cache)?, None, None),
            Scheme::Lsq | Scheme::Dlt | Scheme::Seq => {
                let lg = ops::backward_learnable(g, &cache)?;
                (lg.weights, lg.alpha, lg.offsets)
            }
        };
        let input = ops::input_grad(g, &cache)?;
        Ok(LayerGrads {
            weights,
            alpha,
            offsets,
            input,
        })
    }

    /// Mutable views of every trainable tensor, in a fixed order:
    /// weights, then scales, then offsets when present.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.weights.as_mut_slice()];
        if let Some(a) = self.alpha.as_mut() {
            out.push(a.as_mut_slice());
        }
        if let Some(b) = self.offsets.as_mut() {
            out.push(b.as_mut_slice());
        }
        out
    }

    /// Marks the parameters as updated, invalidating any live cache, and
    /// projects learnable scales back onto `alpha >= 0`.
    pub fn touch(&mut self) {
        self.version += 1;
        if let Some(a) = self.alpha.as_mut() {
            for v in a.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}
