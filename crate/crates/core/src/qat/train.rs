//! Deterministic desk-scale training: a small perceptron whose linear layers
//! are quantized, trained against a synthetic target.
//!
//! The default task is teacher-student regression. A frozen full-precision
//! perceptron maps seeded Gaussian inputs to targets; the student starts as
//! a copy of the teacher (a pretrained full-precision checkpoint) and is
//! trained with quantized linear layers to recover the teacher's function.
//! A character-level next-token task over a small embedded corpus is also
//! available.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    flip_rate, weight_histogram_or_raw, CodeHistory, Histogram, TrapReport, DEFAULT_BAND,
    DEFAULT_BINS, DEFAULT_HISTORY_LEN, DEFAULT_SNAPSHOT_EVERY,
};
use crate::diagnostics::{boundary_count, deadzone_count};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quantizer::{Granularity, DEFAULT_GROUP_SIZE, DEFAULT_LAMBDA};

use super::layer::{QuantLinearLayer, DEFAULT_EPSILON};
use super::optim::{Adam, AdamConfig, DEFAULT_LEARNING_RATE};
use super::Scheme;

const CORPUS: &str = include_str!("corpus.txt");

/// Schema version of serialized training reports.
pub const TRAIN_REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    SyntheticRegression,
    CharLm,
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub scheme: Scheme,
    /// `per-tensor`, `per-channel` or `per-group`.
    pub granularity: String,
    pub group_size: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    /// Layer widths `[input, hidden.., output]`; one quantized linear layer
    /// per adjacent pair. For `char-lm` the first and last entries are
    /// replaced by the task's input and vocabulary sizes.
    pub widths: Vec<usize>,
    pub task: Task,
    pub learning_rate: f64,
    /// Characters of context for `char-lm`.
    pub context: usize,
    pub snapshot_every: usize,
    pub history_len: usize,
    pub band: f64,
    pub histogram_bins: usize,
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Tequila,
            granularity: "per-group".into(),
            group_size: DEFAULT_GROUP_SIZE,
            lambda: DEFAULT_LAMBDA,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            steps: 2000,
            batch_size: 32,
            widths: vec![128, 128, 128, 128],
            task: Task::SyntheticRegression,
            learning_rate: DEFAULT_LEARNING_RATE,
            context: 3,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            history_len: DEFAULT_HISTORY_LEN,
            band: DEFAULT_BAND,
            histogram_bins: DEFAULT_BINS,
            eval_samples: 512,
        }
    }
}

impl TrainConfig {
    pub fn granularity(&self) -> Result<Granularity> {
        Granularity::parse(&self.granularity, self.group_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.granularity()?;
        let n = self.widths.len();
        // char-lm fills in the end widths itself
        let checked = match self.task {
            Task::CharLm if n >= 2 => &self.widths[1..n - 1],
            _ => &self.widths[..],
        };
        if n < 2 || checked.contains(&0) {
            return Err(Error::InvalidParam(format!(
                "widths {:?} must list at least two positive sizes",
                self.widths
            )));
        }
        if self.batch_size == 0 || self.eval_samples == 0 || self.snapshot_every == 0 {
            return Err(Error::InvalidParam(
                "batch_size, eval_samples and snapshot_every must be positive".into(),
            ));
        }
        if self.history_len < 2 {
            return Err(Error::InvalidParam("history_len must be at least 2".into()));
        }
        if self.task == Task::CharLm && self.context == 0 {
            return Err(Error::InvalidParam("char-lm needs context >= 1".into()));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("epsilon", self.epsilon),
            ("learning_rate", self.learning_rate),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParam(format!("{name} must be finite")));
            }
        }
        if !(self.band > 0.0 && self.band < 1.0) {
            return Err(Error::InvalidParam(format!("band {} must lie in (0, 1)", self.band)));
        }
        if self.histogram_bins < 2 {
            return Err(Error::InvalidParam("histogram_bins must be at least 2".into()));
        }
        Ok(())
    }
}

/// Stack of quantized linear layers with ReLU between them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantMlp {
    layers: Vec<QuantLinearLayer>,
    #[serde(skip)]
    relu_masks: Vec<Vec<bool>>,
}

impl QuantMlp {
    pub fn new(layers: Vec<QuantLinearLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParam("model needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].rows() != pair[1].cols() {
                return Err(Error::shape(format!(
                    "layer output {} feeds layer input {}",
                    pair[0].rows(),
                    pair[1].cols()
                )));
            }
        }
        Ok(Self {
            layers,
            relu_masks: Vec::new(),
        })
    }

    pub fn layers(&self) -> &[QuantLinearLayer] {
        &self.layers
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        self.relu_masks.clear();
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                self.relu_masks.push(h.as_slice().iter().map(|&v| v > 0.0).collect());
                h = h.map(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.infer(&h)?;
            if i < last {
                h = h.map(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    /// Backpropagates `g = dL/dy` and applies one optimizer step.
    fn backward_and_step(&mut self, g: &Matrix, opt: &mut Adam) -> Result<()> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = g.clone();
        for i in (0..self.layers.len()).rev() {
            let lg = self.layers[i].backward(&g)?;
            g = lg.input.clone();
            if i > 0 {
                let mask = &self.relu_masks[i - 1];
                for (v, &on) in g.as_mut_slice().iter_mut().zip(mask) {
                    if !on {
                        *v = 0.0;
                    }
                }
            }
            grads.push(lg);
        }
        grads.reverse();

        let grad_slices: Vec<&[f64]> = grads
            .iter()
            .flat_map(|lg| {
                std::iter::once(lg.weights.as_slice())
                    .chain(lg.alpha.as_deref())
                    .chain(lg.offsets.as_deref())
            })
            .collect();
        let mut params: Vec<&mut [f64]> = self.layers.iter_mut().flat_map(|l| l.params_mut()).collect();
        opt.step(&mut params, &grad_slices)?;
        for l in &mut self.layers {
            l.touch();
        }
        Ok(())
    }

    /// Concatenated codes of every layer at the current weights.
    pub fn codes(&self) -> Result<Vec<i8>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.quantize_current()?.0.codes());
        }
        Ok(out)
    }

    pub fn num_weights(&self) -> usize {
        self.layers.iter().map(|l| l.rows() * l.cols()).sum()
    }
}

fn he_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let normal = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("positive std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn relu_forward(weights: &[Matrix], x: &Matrix) -> Matrix {
    let mut h = x.clone();
    for (i, w) in weights.iter().enumerate() {
        h = h.matmul_t(w).expect("teacher shapes");
        if i + 1 < weights.len() {
            h = h.map(|v| v.max(0.0));
        }
    }
    h
}

/// Source of batches and the loss they are scored with.
enum TaskData {
    Regression {
        teacher: Vec<Matrix>,
        input_dim: usize,
    },
    CharLm {
        text: Vec<usize>,
        vocab: usize,
        context: usize,
    },
}

struct Batch {
    x: Matrix,
    target: Target,
}

enum Target {
    Values(Matrix),
    Classes(Vec<usize>),
}

impl TaskData {
    fn sample(&self, n: usize, rng: &mut impl Rng) -> Batch {
        match self {
            TaskData::Regression { teacher, input_dim } => {
                let data = (0..n * input_dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
                let x = Matrix::from_vec(n, *input_dim, data).expect("sized");
                let t = relu_forward(teacher, &x);
                Batch {
                    x,
                    target: Target::Values(t),
                }
            }
            TaskData::CharLm { text, vocab, context } => {
                let mut x = Matrix::zeros(n, context * vocab);
                let mut classes = Vec::with_capacity(n);
                for b in 0..n {
                    let pos = rng.gen_range(*context..text.len());
                    for k in 0..*context {
                        let ch = text[pos - context + k];
                        x.set(b, k * vocab + ch, 1.0);
                    }
                    classes.push(text[pos]);
                }
                Batch {
                    x,
                    target: Target::Classes(classes),
                }
            }
        }
    }
}

/// Returns `(loss, dL/dy)`: mean squared error for values, mean softmax
/// cross-entropy for classes.
fn loss_and_grad(y: &Matrix, target: &Target) -> (f64, Matrix) {
    match target {
        Target::Values(t) => {
            let n = (y.rows() * y.cols()) as f64;
            let diff: Vec<f64> = y.as_slice().iter().zip(t.as_slice()).map(|(a, b)| a - b).collect();
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
            let g = Matrix::from_vec(y.rows(), y.cols(), diff.iter().map(|d| 2.0 * d / n).collect())
                .expect("sized");
            (loss, g)
        }
        Target::Classes(classes) => {
            let n = y.rows() as f64;
            let mut g = Matrix::zeros(y.rows(), y.cols());
            let mut loss = 0.0;
            for (b, &c) in classes.iter().enumerate() {
                let row = y.row(b);
                let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                loss += z.ln() + m - row[c];
                for (k, gv) in g.row_mut(b).iter_mut().enumerate() {
                    let p = (row[k] - m).exp() / z;
                    *gv = (p - f64::from(u8::from(k == c))) / n;
                }
            }
            (loss / n, g)
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub format_version: u32,
    pub config: TrainConfig,
    /// Training-batch loss at the start of each step, plus one final entry
    /// measured on a fresh batch after the last update.
    pub losses: Vec<f64>,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
    pub snapshots: Vec<TrapReport>,
    pub diverged: bool,
    pub halted_at: Option<usize>,
    pub error: Option<String>,
    /// Not serialized, so reports of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl TrainReport {
    /// Mean of the last tenth (at least one entry) of the loss curve.
    pub fn last_decile_loss(&self) -> f64 {
        let n = self.losses.len();
        if n == 0 {
            return f64::NAN;
        }
        let k = n.div_ceil(10);
        self.losses[n - k..].iter().sum::<f64>() / k as f64
    }

    pub fn final_boundary_fraction(&self) -> f64 {
        self.snapshots.last().map_or(f64::NAN, |s| s.boundary_fraction)
    }

    pub fn initial_boundary_fraction(&self) -> f64 {
        self.snapshots.first().map_or(f64::NAN, |s| s.boundary_fraction)
    }

    /// Mean flip rate over snapshots that had enough history.
    pub fn mean_flip_rate(&self) -> f64 {
        let rates: Vec<f64> = self.snapshots.iter().skip(1).map(|s| s.mean_flip_rate).collect();
        if rates.is_empty() {
            0.0
        } else {
            rates.iter().sum::<f64>() / rates.len() as f64
        }
    }
}

/// Builds the seeded task and the initial student model.
fn setup(config: &TrainConfig) -> Result<(TaskData, QuantMlp)> {
    let granularity = config.granularity()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut widths = config.widths.clone();
    let (task, init): (TaskData, Vec<Matrix>) = match config.task {
        Task::SyntheticRegression => {
            let teacher: Vec<Matrix> = widths
                .windows(2)
                .map(|p| he_matrix(p[1], p[0], &mut init_rng))
                .collect();
            let init = teacher.clone();
            (
                TaskData::Regression {
                    teacher,
                    input_dim: widths[0],
                },
                init,
            )
        }
        Task::CharLm => {
            let mut chars: Vec<char> = CORPUS.chars().collect();
            chars.sort_unstable();
            chars.dedup();
            let text = CORPUS
                .chars()
                .map(|c| chars.binary_search(&c).expect("in vocabulary"))
                .collect();
            let vocab = chars.len();
            let last = widths.len() - 1;
            widths[0] = config.context * vocab;
            widths[last] = vocab;
            let init = widths.windows(2).map(|p| he_matrix(p[1], p[0], &mut init_rng)).collect();
            (
                TaskData::CharLm {
                    text,
                    vocab,
                    context: config.context,
                },
                init,
            )
        }
    };
    let layers = init
        .into_iter()
        .map(|w| QuantLinearLayer::new(w, config.scheme, granularity, config.lambda, config.epsilon))
        .collect::<Result<Vec<_>>>()?;
    Ok((task, QuantMlp::new(layers)?))
}

struct Monitor<'a> {
    config: &'a TrainConfig,
    history: CodeHistory,
}

impl Monitor<'_> {
    fn snapshot(&self, model: &QuantMlp, step: usize, loss: f64) -> Result<TrapReport> {
        let total = model.num_weights() as f64;
        let (mut dead, mut boundary) = (0usize, 0usize);
        let mut hist: Option<Histogram> = None;
        for l in model.layers() {
            let (q, _) = l.quantize_current()?;
            dead += deadzone_count(l.weights(), &q)?;
            boundary += boundary_count(l.weights(), &q, self.config.band)?;
            let h = weight_histogram_or_raw(l.weights(), &q, self.config.histogram_bins)?;
            match hist.as_mut() {
                None => hist = Some(h),
                Some(acc) => {
                    if acc.merge(&h).is_err() {
                        // A raw fallback cannot be merged with normalized bins;
                        // count its values as overflow so totals are conserved.
                        let last = acc.counts.len() - 1;
                        acc.counts[last] += h.total();
                    }
                }
            }
        }
        let mean_flip_rate = if self.history.len() >= 2 {
            flip_rate(&self.history)?
        } else {
            0.0
        };
        Ok(TrapReport {
            step,
            deadzone_fraction: dead as f64 / total,
            boundary_fraction: boundary as f64 / total,
            band: self.config.band,
            mean_flip_rate,
            histogram: hist.expect("at least one layer"),
            loss,
        })
    }
}

fn eval_loss(model: &QuantMlp, eval: &Batch) -> Result<f64> {
    let y = model.infer(&eval.x)?;
    Ok(loss_and_grad(&y, &eval.target).0)
}

/// Runs quantization-aware training and returns the report and the trained model.
pub fn train(config: &TrainConfig) -> Result<(TrainReport, QuantMlp)> {
    config.validate()?;
    let started = Instant::now();
    let (task, mut model) = setup(config)?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed);
    data_rng.set_stream(1);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed);
    eval_rng.set_stream(2);
    let eval = task.sample(config.eval_samples, &mut eval_rng);

    let mut opt = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut monitor = Monitor {
        config,
        history: CodeHistory::new(config.history_len),
    };

    let initial_eval_loss = eval_loss(&model, &eval)?;
    let mut report = TrainReport {
        format_version: TRAIN_REPORT_VERSION,
        config: config.clone(),
        losses: Vec::with_capacity(config.steps + 1),
        initial_eval_loss,
        final_eval_loss: initial_eval_loss,
        snapshots: Vec::new(),
        diverged: false,
        halted_at: None,
        error: None,
        wall_time: Duration::ZERO,
    };

    for step in 0..config.steps {
        monitor.history.push(model.codes()?)?;
        if step % config.snapshot_every == 0 {
            let l = if step == 0 { initial_eval_loss } else { eval_loss(&model, &eval)? };
            report.snapshots.push(monitor.snapshot(&model, step, l)?);
        }
        let batch = task.sample(config.batch_size, &mut data_rng);
        let y = model.forward(&batch.x)?;
        let (loss, g) = loss_and_grad(&y, &batch.target);
        report.losses.push(loss);
        if !loss.is_finite() {
            report.diverged = true;
            report.halted_at = Some(step);
            report.error = Some(format!("non-finite loss at step {step}"));
            break;
        }
        match model.backward_and_step(&g, &mut opt) {
            Ok(()) => {}
            Err(e @ Error::Gradient { .. }) => {
                report.diverged = true;
                report.halted_at = Some(step);
                report.error = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
        if model.layers.iter().any(|l| l.weights().as_slice().iter().any(|v| !v.is_finite())) {
            report.diverged = true;
            report.halted_at = Some(step);
            report.error = Some(format!("non-finite weights after step {step}"));
            break;
        }
    }

    if !report.diverged {
        let batch = task.sample(config.batch_size, &mut data_rng);
        let y = model.infer(&batch.x)?;
        report.losses.push(loss_and_grad(&y, &batch.target).0);
        report.final_eval_loss = eval_loss(&model, &eval)?;
        monitor.history.push(model.codes()?)?;
        report
            .snapshots
            .push(monitor.snapshot(&model, config.steps, report.final_eval_loss)?);
    }
    report.wall_time = started.elapsed();
    Ok((report, model))
}

/// Runs training and returns only the report.
pub fn train_toy(config: &TrainConfig) -> Result<TrainReport> {
    train(config).map(|(r, _)| r)
}

/// Full-precision loss of the untrained student with its quantized forward,
/// evaluated on the same evaluation set `train` uses.
pub fn initial_quantized_loss(config: &TrainConfig) -> Result<f64> {
    config.validate()?;
    let (task, model) = setup(config)?;
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed);
    eval_rng.set_stream(2);
    let eval = task.sample(config.eval_samples, &mut eval_rng);
    eval_loss(&model, &eval)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(scheme: Scheme) -> TrainConfig {
        TrainConfig {
            scheme,
            steps: 30,
            batch_size: 8,
            widths: vec![16, 12, 12, 4],
            group_size: 8,
            snapshot_every: 10,
            eval_samples: 32,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_reports_initial_loss() {
        let cfg = TrainConfig {
            steps: 0,
            ..small(Scheme::Absmean)
        };
        let r = train_toy(&cfg).unwrap();
        assert_eq!(r.losses.len(), 1);
        assert_eq!(r.final_eval_loss, initial_quantized_loss(&cfg).unwrap());
        assert_eq!(r.snapshots.len(), 1);
    }

    #[test]
    fn every_scheme_trains_and_reduces_loss() {
        for scheme in Scheme::ALL {
            let cfg = TrainConfig {
                learning_rate: 1e-3,
                steps: 60,
                ..small(scheme)
            };
            let r = train_toy(&cfg).unwrap();
            assert!(!r.diverged, "{scheme}");
            assert_eq!(r.losses.len(), 61);
            assert!(r.final_eval_loss.is_finite());
            assert!(r.final_eval_loss < r.initial_eval_loss, "{scheme}: {} -> {}", r.initial_eval_loss, r.final_eval_loss);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = small(Scheme::Tequila);
        let a = train_toy(&cfg).unwrap();
        let b = train_toy(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn zero_lambda_tequila_matches_absmean() {
        let a = train_toy(&small(Scheme::Absmean)).unwrap();
        let t = train_toy(&TrainConfig {
            lambda: 0.0,
            ..small(Scheme::Tequila)
        })
        .unwrap();
        assert_eq!(a.losses, t.losses);
        assert_eq!(a.snapshots, t.snapshots);
    }

    #[test]
    fn char_lm_runs() {
        let cfg = TrainConfig {
            task: Task::CharLm,
            widths: vec![0, 32, 32, 0],
            learning_rate: 3e-3,
            steps: 40,
            group_size: 16,
            ..small(Scheme::Tequila)
        };
        let (r, model) = train(&cfg).unwrap();
        assert!(r.final_eval_loss < r.initial_eval_loss);
        assert_eq!(model.layers()[0].cols() % cfg.context, 0);
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            learning_rate: 1e300,
            steps: 20,
            ..small(Scheme::Absmean)
        };
        let r = train_toy(&cfg).unwrap();
        assert!(r.diverged);
        assert!(r.halted_at.is_some());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small(Scheme::Absmean);
        cfg.widths = vec![4];
        assert!(train_toy(&cfg).is_err());
        let mut cfg = small(Scheme::Absmean);
        cfg.granularity = "per-row".into();
        assert!(train_toy(&cfg).is_err());
    }
}
