use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: [&str; 5] = ["widths=[16,12,8]", "group_size=8", "batch_size=8", "eval_samples=32", "snapshot_every=10"];

fn tequila(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tequila")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = tequila(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn train(dir: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--out", p(dir)];
    args.extend_from_slice(extra);
    args.extend_from_slice(&SMALL);
    ok(&args);
}

fn csv_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn quantize_summary_of_a_small_row() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("w.csv");
    std::fs::write(&input, "0.4,-0.2,0.1,-0.9\n").unwrap();
    let out = tmp.path().join("q");
    ok(&["quantize", "--input", p(&input), "--scheme", "absmean", "--granularity", "per-tensor", "--out", p(&out)]);
    let s = json(out.join("summary.json"));
    let g = &s["groups"][0];
    assert!((g["alpha"].as_f64().unwrap() - 0.4).abs() < 1e-12);
    assert!((g["delta"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(s["deadzone_fraction"].as_f64().unwrap(), 0.25);
}

#[test]
fn empty_and_malformed_inputs_are_format_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("e.csv");
    std::fs::write(&empty, "").unwrap();
    let out = tequila(&["quantize", "--input", p(&empty), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));

    let ragged = tmp.path().join("r.csv");
    std::fs::write(&ragged, "1,2,3\n4,5\n").unwrap();
    let out = tequila(&["quantize", "--input", p(&ragged), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn per_channel_and_full_row_groups_write_the_same_files() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("w.csv");
    std::fs::write(&input, "0.4,-0.2,0.1,-0.9,0.3\n-0.05,0.7,0.0,-0.3,0.25\n").unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["quantize", "--input", p(&input), "--granularity", "per-channel", "--out", p(&a)]);
    ok(&["quantize", "--input", p(&input), "--granularity", "per-group", "--group-size", "5", "--out", p(&b)]);
    for f in ["quantized.json", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn training_is_repeatable_and_zero_lambda_matches_absmean() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs: Vec<PathBuf> = ["a", "b", "t0", "ab"].iter().map(|d| tmp.path().join(d)).collect();
    train(&dirs[0], &["--steps", "25", "--seed", "4"]);
    train(&dirs[1], &["--steps", "25", "--seed", "4"]);
    for f in ["report.json", "losses.csv", "model.json", "trap.csv", "trap.json"] {
        assert_eq!(std::fs::read(dirs[0].join(f)).unwrap(), std::fs::read(dirs[1].join(f)).unwrap(), "{f}");
    }
    train(&dirs[2], &["--steps", "25", "--seed", "4", "--scheme", "tequila", "--lambda", "0"]);
    train(&dirs[3], &["--steps", "25", "--seed", "4", "--scheme", "absmean"]);
    assert_eq!(
        std::fs::read(dirs[2].join("losses.csv")).unwrap(),
        std::fs::read(dirs[3].join("losses.csv")).unwrap()
    );
}

#[test]
fn zero_steps_gives_one_loss_row() {
    let tmp = tempfile::tempdir().unwrap();
    train(tmp.path(), &["--steps", "0"]);
    assert_eq!(csv_rows(&tmp.path().join("losses.csv")), 1);
}

#[test]
fn compare_rows_and_duplicates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    let mut args = vec!["compare", "--schemes", "absmean,tequila", "--seeds", "0,1,2", "--steps", "10", "--out", p(&out)];
    args.extend_from_slice(&SMALL);
    ok(&args);
    assert_eq!(csv_rows(&out.join("compare.csv")), 6);

    let dup = tmp.path().join("d");
    let mut args = vec!["compare", "--schemes", "minima,minima", "--seeds", "1", "--steps", "10", "--out", p(&dup)];
    args.extend_from_slice(&SMALL);
    ok(&args);
    let text = std::fs::read_to_string(dup.join("compare.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], lines[2]);
}

#[test]
fn sweep_rows_and_duplicates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let mut args = vec!["lambda-sweep", "--steps", "5", "--out", p(&out)];
    args.extend_from_slice(&SMALL);
    ok(&args);
    assert_eq!(csv_rows(&out.join("sweep.csv")), 6);

    let dup = tmp.path().join("d");
    let mut args = vec!["lambda-sweep", "--lambdas", "1e-2,1e-2", "--steps", "5", "--out", p(&dup)];
    args.extend_from_slice(&SMALL);
    ok(&args);
    let text = std::fs::read_to_string(dup.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], lines[2]);
}

#[test]
fn pack_then_verified_inference() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    train(&run, &["--steps", "20"]);
    let packed = tmp.path().join("packed");
    ok(&["pack", "--model", p(&run.join("model.json")), "--out", p(&packed)]);
    let model = packed.join("model.tqla");
    assert_eq!(&std::fs::read(&model).unwrap()[..4], b"TQLA");

    let x = tmp.path().join("x.csv");
    let row: Vec<String> = (0..16).map(|i| format!("{}", (i as f64 * 0.37).sin())).collect();
    std::fs::write(&x, format!("{}\n{}\n", row.join(","), row.join(","))).unwrap();
    let before = std::fs::read(&x).unwrap();
    let out = tmp.path().join("inf");
    ok(&["infer", "--model", p(&model), "--input", p(&x), "--verify", "--out", p(&out)]);
    assert_eq!(csv_rows(&out.join("infer.csv")), 2);
    assert_eq!(std::fs::read(&x).unwrap(), before, "input file was modified");

    let short = tmp.path().join("short.csv");
    std::fs::write(&short, "0.1,0.2,0.3\n").unwrap();
    let res = tequila(&["infer", "--model", p(&model), "--input", p(&short), "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(4));
}

#[test]
fn bench_json_schema() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["bench", "--shapes", "6x9,4x10", "--repetitions", "2", "--group-size", "4", "--out", p(tmp.path())]);
    let b = json(tmp.path().join("bench.json"));
    assert!(b["format_version"].is_u64());
    let entries = b["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    for e in entries {
        for k in ["rows", "cols", "group_size", "lut_multiplies", "lut_segment_multiplies", "dense_multiplies"] {
            assert!(e[k].is_u64(), "{k}");
        }
        let (r, c) = (e["rows"].as_u64().unwrap(), e["cols"].as_u64().unwrap());
        assert_eq!(e["dense_multiplies"].as_u64().unwrap(), r * c);
        assert_eq!(e["lut_multiplies"].as_u64().unwrap(), r * c.div_ceil(4));
        assert_eq!(e["lut_segment_multiplies"].as_u64().unwrap(), 0);
    }
    let t = json(tmp.path().join("bench_timing.json"));
    assert!(t.is_object() || t.is_array());
}

#[test]
fn exit_codes_for_bad_requests() {
    let tmp = tempfile::tempdir().unwrap();
    let o = p(tmp.path());
    assert_eq!(tequila(&["train", "--scheme", "ternary-magic", "--out", o]).status.code(), Some(7));
    assert_eq!(tequila(&["train", "no_such_key=1", "--out", o]).status.code(), Some(2));
    assert_eq!(tequila(&["train", "--granularity", "per-row", "--out", o]).status.code(), Some(2));
    assert_eq!(tequila(&["compare", "--schemes", "absmean,bogus", "--out", o]).status.code(), Some(7));
    assert_eq!(tequila(&["frobnicate"]).status.code(), Some(2));

    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "steps = 0\nwidths = [6, 4]\ngroup_size = 3\n").unwrap();
    ok(&["train", "--config", p(&cfg), "--out", p(&tmp.path().join("t"))]);
    let r = json(tmp.path().join("t").join("report.json"));
    assert_eq!(r["config"]["widths"], serde_json::json!([6, 4]));

    let bad = tmp.path().join("bad.tqla");
    std::fs::write(&bad, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
    let x = tmp.path().join("x.csv");
    std::fs::write(&x, "1\n").unwrap();
    assert_eq!(tequila(&["infer", "--model", p(&bad), "--input", p(&x), "--out", o]).status.code(), Some(3));
}
