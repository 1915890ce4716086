use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use tequila_core::diagnostics::export_report;
use tequila_core::experiment::{self, median_final_loss, rows_to_csv, RunRow};
use tequila_core::packer::{
    bench_gemv, encode, lut_gemv, pack_model, pad_input, read_packed, reference_gemv, relative_error, PackedLayer,
};
use tequila_core::qat::{train, QuantMlp};
use tequila_core::{
    deadzone_mask, quantize, tequila_bias, BiasVector, Error, QuantScheme, Scheme, TrainConfig, TrainReport,
};

use crate::matrix_io::read_matrix;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Relative tolerance of `infer --verify`.
pub const VERIFY_TOLERANCE: f64 = 1e-5;

/// A run diverged; artifacts were written before reporting it.
#[derive(Debug)]
pub struct Diverged(pub String);

impl fmt::Display for Diverged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training diverged: {}", self.0)
    }
}

impl std::error::Error for Diverged {}

/// Table-lookup output disagrees with the reference product.
#[derive(Debug)]
pub struct VerifyFailed {
    pub error: f64,
}

impl fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lut output deviates from the reference by {:e} (tolerance {VERIFY_TOLERANCE:e})",
            self.error
        )
    }
}

impl std::error::Error for VerifyFailed {}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(out: &Path, config: &TrainConfig) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), config)
}

fn losses_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

/// The quantizer statistics a scheme starts from.
fn quant_scheme(scheme: Scheme) -> QuantScheme {
    match scheme {
        Scheme::Twn => QuantScheme::Twn,
        _ => QuantScheme::Absmean,
    }
}

pub fn quantize_cmd(input: &Path, mut config: TrainConfig, out: &Path) -> Result<()> {
    let w = read_matrix(input)?;
    let g = config.granularity()?.canonical(w.cols())?;
    if let tequila_core::Granularity::PerGroup { group_size } = g {
        config.granularity = "per-group".into();
        config.group_size = group_size;
    }
    let q = quantize(&w, quant_scheme(config.scheme), g)?;
    let mask = deadzone_mask(&w, &q)?;
    let bias = config
        .scheme
        .uses_lambda()
        .then(|| tequila_bias(&w, &mask, config.lambda))
        .transpose()?;
    prepare_out(out, &config)?;
    write_json(
        &out.join("quantized.json"),
        &json!({ "format_version": CHECKPOINT_VERSION, "config": config, "tensor": q }),
    )?;
    let groups: Vec<_> = q
        .scales()
        .iter()
        .zip(q.thresholds())
        .enumerate()
        .map(|(i, (a, d))| json!({ "group": i, "alpha": a, "delta": d }))
        .collect();
    write_json(
        &out.join("summary.json"),
        &json!({
            "config": config,
            "rows": w.rows(),
            "cols": w.cols(),
            "granularity": q.granularity(),
            "groups": groups,
            "deadzone_count": mask.total(),
            "deadzone_fraction": mask.total() as f64 / (w.rows() * w.cols()) as f64,
            "bias": bias.map(|b| b.0),
        }),
    )
}

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub model: QuantMlp,
}

fn write_run(dir: &Path, report: &TrainReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("report.json"), report)?;
    fs::write(dir.join("losses.csv"), losses_csv(&report.losses))?;
    if !report.snapshots.is_empty() {
        export_report(&report.snapshots, dir)?;
    }
    Ok(())
}

pub fn train_cmd(config: TrainConfig, out: &Path) -> Result<()> {
    config.validate()?;
    prepare_out(out, &config)?;
    let (report, model) = train(&config)?;
    write_run(out, &report)?;
    write_json(
        &out.join("model.json"),
        &Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: config.clone(),
            model,
        },
    )?;
    write_json(
        &out.join("timing.json"),
        &json!({ "wall_time_seconds": report.wall_time.as_secs_f64() }),
    )?;
    if report.diverged {
        bail!(Diverged(
            report.error.clone().unwrap_or_else(|| format!("halted at step {:?}", report.halted_at))
        ));
    }
    Ok(())
}

fn write_rows(out: &Path, name: &str, config: &TrainConfig, extra: serde_json::Value, rows: &[(RunRow, TrainReport)]) -> Result<()> {
    for (i, (row, report)) in rows.iter().enumerate() {
        let dir = out
            .join("runs")
            .join(format!("{i:03}-{}-lambda{}-seed{}", row.scheme, row.lambda, row.seed));
        write_run(&dir, report)?;
    }
    let plain: Vec<RunRow> = rows.iter().map(|(r, _)| r.clone()).collect();
    fs::write(out.join(format!("{name}.csv")), rows_to_csv(&plain))?;
    let mut schemes: Vec<Scheme> = plain.iter().map(|r| r.scheme).collect();
    schemes.dedup();
    let medians: serde_json::Map<String, serde_json::Value> = schemes
        .iter()
        .map(|&s| (s.to_string(), json!(median_final_loss(&plain, s))))
        .collect();
    write_json(
        &out.join(format!("{name}.json")),
        &json!({
            "config": config,
            "runs": extra,
            "rows": plain,
            "median_final_loss": medians,
        }),
    )?;
    if let Some(r) = plain.iter().find(|r| r.diverged) {
        bail!(Diverged(format!("{} seed {} lambda {}", r.scheme, r.seed, r.lambda)));
    }
    Ok(())
}

pub fn compare_cmd(config: TrainConfig, schemes: &[Scheme], seeds: &[u64], threads: usize, out: &Path) -> Result<()> {
    config.validate()?;
    prepare_out(out, &config)?;
    let rows = experiment::compare(&config, schemes, seeds, threads)?;
    write_rows(out, "compare", &config, json!({ "schemes": schemes, "seeds": seeds }), &rows)
}

pub fn lambda_sweep_cmd(config: TrainConfig, lambdas: &[f64], seeds: &[u64], threads: usize, out: &Path) -> Result<()> {
    config.validate()?;
    prepare_out(out, &config)?;
    let rows = experiment::lambda_sweep(&config, lambdas, seeds, threads)?;
    write_rows(out, "sweep", &config, json!({ "lambdas": lambdas, "seeds": seeds }), &rows)
}

fn json_error(text: &str, e: &serde_json::Error) -> Error {
    let offset: usize = text
        .split_inclusive('\n')
        .take(e.line().saturating_sub(1))
        .map(str::len)
        .sum::<usize>()
        + e.column().saturating_sub(1);
    Error::Format {
        offset: offset as u64,
        message: e.to_string(),
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| json_error(&text, &e))?;
    // re-check layer chaining, which deserialization bypasses
    QuantMlp::new(ck.model.layers().to_vec())?;
    Ok(ck)
}

pub fn pack_cmd(model_path: &Path, config: TrainConfig, out: &Path) -> Result<PathBuf> {
    let ck = read_checkpoint(model_path)?;
    let layers = ck.model.layers();
    if let Some(l) = layers.iter().find(|l| !l.scheme().is_packable()) {
        return Err(anyhow::Error::new(Error::UnsupportedScheme(l.scheme().to_string()))
            .context("only schemes whose forward is codes, scales and a bias can be packed"));
    }
    let lambda = layers[0].lambda();
    let parts = layers
        .iter()
        .map(|l| {
            let (q, mask) = l.quantize_current()?;
            Ok((q, l.weights().clone(), mask))
        })
        .collect::<tequila_core::Result<Vec<_>>>()?;
    let packed = pack_model(&parts, lambda)?;
    prepare_out(out, &config)?;
    let bytes = encode(&packed)?;
    let path = out.join("model.tqla");
    fs::write(&path, &bytes)?;
    let summary: Vec<_> = packed
        .layers
        .iter()
        .map(|l| json!({ "rows": l.rows, "cols": l.cols, "padded_cols": l.padded_cols, "group_size": l.group_size }))
        .collect();
    write_json(
        &out.join("pack.json"),
        &json!({
            "config": config,
            "source_config": ck.config,
            "lambda": lambda,
            "bytes": bytes.len(),
            "layers": summary,
        }),
    )?;
    Ok(path)
}

fn lut_layer(layer: &PackedLayer, x: &[f32]) -> Result<Vec<f32>> {
    let xp = pad_input(layer, x)?;
    Ok(lut_gemv(layer, &xp)?)
}

fn reference_layer(layer: &PackedLayer, x: &[f64]) -> Result<Vec<f64>> {
    let q = layer.to_quantized()?;
    Ok(reference_gemv(&q, &BiasVector(layer.bias_f64()), x)?)
}

pub fn infer_cmd(
    model_path: &Path,
    input: &Path,
    layer: Option<usize>,
    verify: bool,
    config: TrainConfig,
    out: &Path,
) -> Result<()> {
    let model = read_packed(model_path)?;
    let chain: Vec<&PackedLayer> = match layer {
        Some(i) => vec![model.layers.get(i).ok_or_else(|| {
            Error::InvalidParam(format!("layer {i} requested, model has {}", model.layers.len()))
        })?],
        None => model.layers.iter().collect(),
    };
    if chain.is_empty() {
        return Err(Error::InvalidParam("model has no layers".into()).into());
    }
    let x = read_matrix(input)?;
    let last = chain.len() - 1;
    let mut outputs = Vec::with_capacity(x.rows());
    let mut worst = 0.0f64;
    for b in 0..x.rows() {
        let mut h: Vec<f32> = x.row(b).iter().map(|&v| v as f32).collect();
        let mut href: Vec<f64> = h.iter().map(|&v| f64::from(v)).collect();
        for (i, l) in chain.iter().enumerate() {
            h = lut_layer(l, &h)?;
            if verify {
                href = reference_layer(l, &href)?;
            }
            if i < last {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
                href.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        if verify {
            let y: Vec<f64> = h.iter().map(|&v| f64::from(v)).collect();
            worst = worst.max(relative_error(&y, &href)?);
        }
        outputs.push(h);
    }
    prepare_out(out, &config)?;
    let width = outputs.first().map_or(0, Vec::len);
    let mut csv = (0..width).map(|i| format!("y{i}")).collect::<Vec<_>>().join(",");
    csv.push('\n');
    for row in &outputs {
        csv.push_str(&row.iter().map(f32::to_string).collect::<Vec<_>>().join(","));
        csv.push('\n');
    }
    fs::write(out.join("infer.csv"), csv)?;
    let passed = worst <= VERIFY_TOLERANCE;
    write_json(
        &out.join("infer.json"),
        &json!({
            "config": config,
            "layer": layer,
            "batch": x.rows(),
            "outputs": width,
            "verify": verify.then(|| json!({
                "tolerance": VERIFY_TOLERANCE,
                "max_relative_error": worst,
                "passed": passed,
            })),
        }),
    )?;
    if verify && !passed {
        bail!(VerifyFailed { error: worst });
    }
    Ok(())
}

pub fn parse_shape(s: &str) -> Result<(usize, usize)> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("shape `{s}` is not ROWSxCOLS"))?;
    let (r, c): (usize, usize) = (r.trim().parse()?, c.trim().parse()?);
    if r == 0 || c == 0 {
        bail!("shape `{s}` has a zero dimension");
    }
    Ok((r, c))
}

pub fn bench_cmd(shapes: &[(usize, usize)], repetitions: usize, config: TrainConfig, out: &Path) -> Result<()> {
    let report = bench_gemv(shapes, config.group_size, repetitions, config.seed)?;
    prepare_out(out, &config)?;
    write_json(
        &out.join("bench.json"),
        &json!({
            "format_version": report.format_version,
            "config": config,
            "seed": report.seed,
            "entries": report.entries,
        }),
    )?;
    write_json(&out.join("bench_timing.json"), &json!({ "timings": report.timings }))?;
    for t in &report.timings {
        eprintln!(
            "{}x{}: lut {} ns, dense {} ns, speedup {:.2}",
            t.rows, t.cols, t.lut_median_ns, t.dense_median_ns, t.speedup
        );
    }
    Ok(())
}

