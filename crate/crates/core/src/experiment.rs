//! Multi-run experiments: scheme comparisons and reactivation sweeps.
//!
//! Member runs are independent and may execute on several threads; the
//! returned rows are always sorted by scheme name, lambda and seed.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qat::{train_toy, Scheme, TrainConfig, TrainReport};

/// Reactivation strengths of the default sweep.
pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

/// Summary of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub scheme: Scheme,
    /// Effective reactivation strength (0 for schemes without one).
    pub lambda: f64,
    pub seed: u64,
    pub final_loss: f64,
    pub last_decile_loss: f64,
    pub final_boundary_fraction: f64,
    pub mean_flip_rate: f64,
    pub diverged: bool,
}

impl RunRow {
    pub fn from_report(r: &TrainReport) -> Self {
        Self {
            scheme: r.config.scheme,
            lambda: if r.config.scheme.uses_lambda() { r.config.lambda } else { 0.0 },
            seed: r.config.seed,
            final_loss: r.final_eval_loss,
            last_decile_loss: r.last_decile_loss(),
            final_boundary_fraction: r.final_boundary_fraction(),
            mean_flip_rate: r.mean_flip_rate(),
            diverged: r.diverged,
        }
    }

    /// True when every metric matches bit for bit (scheme and lambda aside).
    pub fn same_metrics(&self, other: &RunRow) -> bool {
        self.seed == other.seed
            && self.final_loss.to_bits() == other.final_loss.to_bits()
            && self.last_decile_loss.to_bits() == other.last_decile_loss.to_bits()
            && self.final_boundary_fraction.to_bits() == other.final_boundary_fraction.to_bits()
            && self.mean_flip_rate.to_bits() == other.mean_flip_rate.to_bits()
            && self.diverged == other.diverged
    }
}

fn sort_rows(rows: &mut [(RunRow, TrainReport)]) {
    rows.sort_by(|(a, _), (b, _)| {
        a.scheme
            .as_str()
            .cmp(b.scheme.as_str())
            .then(a.lambda.total_cmp(&b.lambda))
            .then(a.seed.cmp(&b.seed))
    });
}

/// Trains every config, using up to `threads` workers (0 = all cores).
pub fn run_all(configs: Vec<TrainConfig>, threads: usize) -> Result<Vec<(RunRow, TrainReport)>> {
    let workers = if threads == 0 {
        thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        threads
    }
    .min(configs.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<TrainReport>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = configs.get(i) else { break };
                let r = train_toy(cfg);
                results.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    let mut rows = results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| {
            let report = r.expect("every run finished")?;
            Ok((RunRow::from_report(&report), report))
        })
        .collect::<Result<Vec<_>>>()?;
    sort_rows(&mut rows);
    Ok(rows)
}

/// One run per (scheme, seed) on top of `base`.
pub fn compare(base: &TrainConfig, schemes: &[Scheme], seeds: &[u64], threads: usize) -> Result<Vec<(RunRow, TrainReport)>> {
    if schemes.len() < 2 || seeds.is_empty() {
        return Err(Error::InvalidParam("compare needs at least two schemes and one seed".into()));
    }
    let configs = schemes
        .iter()
        .flat_map(|&scheme| {
            seeds.iter().map(move |&seed| TrainConfig {
                scheme,
                seed,
                ..base.clone()
            })
        })
        .collect();
    run_all(configs, threads)
}

/// One tequila run per (lambda, seed) on top of `base`.
pub fn lambda_sweep(base: &TrainConfig, lambdas: &[f64], seeds: &[u64], threads: usize) -> Result<Vec<(RunRow, TrainReport)>> {
    if lambdas.len() < 2 || seeds.is_empty() {
        return Err(Error::InvalidParam("a sweep needs at least two lambdas and one seed".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !l.is_finite()) {
        return Err(Error::InvalidParam(format!("lambda {l} is not finite")));
    }
    let configs = lambdas
        .iter()
        .flat_map(|&lambda| {
            seeds.iter().map(move |&seed| TrainConfig {
                scheme: Scheme::Tequila,
                lambda,
                seed,
                ..base.clone()
            })
        })
        .collect();
    run_all(configs, threads)
}

/// Median of `final_loss` over the rows of one scheme.
pub fn median_final_loss(rows: &[RunRow], scheme: Scheme) -> Option<f64> {
    let mut v: Vec<f64> = rows.iter().filter(|r| r.scheme == scheme).map(|r| r.final_loss).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub const ROW_CSV_HEADER: [&str; 8] = [
    "scheme",
    "lambda",
    "seed",
    "final_loss",
    "last_decile_loss",
    "final_boundary_fraction",
    "mean_flip_rate",
    "diverged",
];

/// CSV with a header row; reals use the shortest round-trip representation.
pub fn rows_to_csv(rows: &[RunRow]) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(ROW_CSV_HEADER).expect("in-memory write");
    for r in rows {
        wtr.write_record([
            r.scheme.to_string(),
            r.lambda.to_string(),
            r.seed.to_string(),
            r.final_loss.to_string(),
            r.last_decile_loss.to_string(),
            r.final_boundary_fraction.to_string(),
            r.mean_flip_rate.to_string(),
            r.diverged.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8")
}
