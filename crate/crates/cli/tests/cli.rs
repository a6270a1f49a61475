use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gaas_core::casestudy;
use gaas_core::model::emit_config;
use serde_json::Value;
use tempfile::TempDir;

fn gaas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaas")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn write_config(dir: &Path, name: &str, doc: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, doc).unwrap();
    path.display().to_string()
}

fn feedback_file(dir: &Path) -> String {
    write_config(dir, "feedback.json", &emit_config(&casestudy::feedback_config()))
}

fn ramp_file(dir: &Path) -> String {
    write_config(dir, "ramp.json", &emit_config(&casestudy::ramp_config()))
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn assert_manifest_complete(out: &Path) {
    let manifest = read_json(out.join("manifest.json"));
    for path in manifest["outputs"].as_array().unwrap() {
        assert!(Path::new(path.as_str().unwrap()).exists(), "missing {path}");
    }
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
}

fn synthesize_into(cfg: &str, out: &Path, extra: &[&str]) -> Output {
    let out = s(out);
    let mut args = vec!["synthesize", "--config", cfg, "--out", &out];
    args.extend_from_slice(extra);
    gaas(&args)
}

#[test]
fn synthesize_reproduces_structure_and_passes() {
    let tmp = TempDir::new().unwrap();
    let cfg = feedback_file(tmp.path());
    let out = tmp.path().join("syn");
    let run = synthesize_into(&cfg, &out, &[]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let gains = read_json(out.join("gains.json"));
    let close = |v: &Value, want: &[f64]| {
        let got: Vec<f64> = v.as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap())).collect();
        got.len() == want.len() && got.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-9)
    };
    assert!(close(&gains["P"], &[1.0, 0.0]));
    assert!(close(&gains["S"], &[0.0, 1.0]));
    assert!(close(&gains["Q"], &[0.0]));
    assert!(close(&gains["R"], &[0.0]));
    assert_eq!(read_json(out.join("report.json"))["overall_pass"], true);
    assert_manifest_complete(&out);
}

#[test]
fn missing_gain_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let mut doc: Value = serde_json::from_str(&emit_config(&casestudy::feedback_config())).unwrap();
    doc["scenario"].as_object_mut().unwrap().remove("K");
    let cfg = write_config(tmp.path(), "nok.json", &doc.to_string());
    let run = synthesize_into(&cfg, &tmp.path().join("o"), &[]);
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("scenario.K"));
}

#[test]
fn excessive_decay_rate_fails_the_decay_record() {
    let tmp = TempDir::new().unwrap();
    let cfg = feedback_file(tmp.path());
    let out = tmp.path().join("syn");
    let run = synthesize_into(&cfg, &out, &["--a1", "1.5"]);
    assert_eq!(code(&run), 1);
    let report = read_json(out.join("report.json"));
    let decay = report["records"].as_array().unwrap().iter().find(|r| r["name"] == "lyapunov_decay").unwrap();
    assert_eq!(decay["pass"], false);
    assert_manifest_complete(&out);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&gaas(&["synthesize"])), 2);
    assert_eq!(code(&gaas(&["no-such-command"])), 2);
    let tmp = TempDir::new().unwrap();
    let missing = s(&tmp.path().join("absent.json"));
    assert_eq!(code(&gaas(&["compare", "--config", &missing, "--out", &s(tmp.path())])), 2);
}

fn synthesized_gains(tmp: &Path, cfg: &str) -> String {
    let out = tmp.join("gains_dir");
    assert_eq!(code(&synthesize_into(cfg, &out, &[])), 0);
    s(&out.join("gains.json"))
}

#[test]
fn simulate_feedback_scenario() {
    let tmp = TempDir::new().unwrap();
    let cfg = feedback_file(tmp.path());
    let gains = synthesized_gains(tmp.path(), &cfg);
    let out = tmp.path().join("sim");
    let run = gaas(&["simulate", "--config", &cfg, "--gains", &gains, "--out", &s(&out), "--horizon", "350"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stdout));
    let verify = read_json(out.join("verify.json"));
    assert!(verify["max_err"].as_f64().unwrap() <= 0.5);
    assert_eq!(verify["jumps"]["count"], 1);
    let jumps = fs::read_to_string(out.join("jumps.csv")).unwrap();
    assert_eq!(jumps.lines().count(), 2);
    assert!(jumps.lines().nth(1).unwrap().ends_with(",true"));
    assert_manifest_complete(&out);
}

#[test]
fn tightened_epsilon_fails_membership() {
    let tmp = TempDir::new().unwrap();
    let cfg = feedback_file(tmp.path());
    let gains = synthesized_gains(tmp.path(), &cfg);
    let out = tmp.path().join("sim");
    let run = gaas(&["simulate", "--config", &cfg, "--gains", &gains, "--out", &s(&out), "--horizon", "20", "--epsilon", "0.15"]);
    assert_eq!(code(&run), 1);
    assert!(String::from_utf8_lossy(&run.stderr).contains("outside the relation"));
    assert_eq!(read_json(out.join("verify.json"))["initial_in_relation"], false);
}

#[test]
fn zero_horizon_is_a_single_sample() {
    let tmp = TempDir::new().unwrap();
    let cfg = feedback_file(tmp.path());
    let gains = synthesized_gains(tmp.path(), &cfg);
    let out = tmp.path().join("sim");
    let run = gaas(&["simulate", "--config", &cfg, "--gains", &gains, "--out", &s(&out), "--horizon", "0"]);
    assert_eq!(code(&run), 0);
    assert_eq!(fs::read_to_string(out.join("trajectory.csv")).unwrap().lines().count(), 2);
}

#[test]
fn mismatched_gains_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = feedback_file(tmp.path());
    let gains_path = synthesized_gains(tmp.path(), &cfg);
    let mut gains = read_json(PathBuf::from(&gains_path));
    gains["P"] = serde_json::json!([[1.0], [0.0], [0.0]]);
    let bad = write_config(tmp.path(), "bad_gains.json", &gains.to_string());
    let run = gaas(&["simulate", "--config", &cfg, "--gains", &bad, "--out", &s(&tmp.path().join("o")), "--horizon", "1"]);
    assert_eq!(code(&run), 2);
}

#[test]
fn identical_runs_write_identical_csv_and_step_halving_agrees() {
    let tmp = TempDir::new().unwrap();
    let cfg = feedback_file(tmp.path());
    let gains = synthesized_gains(tmp.path(), &cfg);
    let run = |name: &str, step: &str| {
        let out = tmp.path().join(name);
        let r = gaas(&["simulate", "--config", &cfg, "--gains", &gains, "--out", &s(&out), "--horizon", "300", "--step", step]);
        assert_eq!(code(&r), 0);
        fs::read_to_string(out.join("trajectory.csv")).unwrap()
    };
    let a = run("a", "1e-3");
    let b = run("b", "1e-3");
    assert_eq!(a, b);
    let c = run("c", "2e-3");
    let last = |csv: &str| -> Vec<f64> { csv.lines().last().unwrap().split(',').take(4).map(|v| v.parse().unwrap()).collect() };
    let (fine, coarse) = (last(&a), last(&c));
    assert_eq!(fine[0], coarse[0]);
    for k in 1..4 {
        assert!((fine[k] - coarse[k]).abs() < 1e-6, "{fine:?} vs {coarse:?}");
    }
}

#[test]
fn digest_tracks_config_content() {
    let tmp = TempDir::new().unwrap();
    let cfg = feedback_file(tmp.path());
    let pretty: Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    let compact = write_config(tmp.path(), "compact.json", &pretty.to_string());
    let digest_of = |cfg: &str, name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        synthesize_into(cfg, &out, extra);
        read_json(out.join("manifest.json"))["config_digest"].as_str().unwrap().to_string()
    };
    let base = digest_of(&cfg, "d1", &[]);
    assert_eq!(base, digest_of(&cfg, "d2", &[]));
    assert_eq!(base, digest_of(&compact, "d3", &[]));
    assert_ne!(base, digest_of(&cfg, "d4", &["--epsilon", "0.4"]));
}

#[test]
fn compare_on_ramp_separates_the_methods() {
    let tmp = TempDir::new().unwrap();
    let cfg = ramp_file(tmp.path());
    let out = tmp.path().join("cmp");
    let run = gaas(&["compare", "--config", &cfg, "--out", &s(&out), "--csv-stride", "100"]);
    assert_eq!(code(&run), 0);
    let summary = read_json(out.join("compare.json"));
    assert!(summary["gaas"]["max_err"].as_f64().unwrap() <= 0.5);
    assert!(summary["baseline"]["max_err"].as_f64().unwrap() > 0.5);
    assert_eq!(summary["verdict"], "gaas_only_within_epsilon");
    assert_manifest_complete(&out);
}

#[test]
fn compare_with_constant_input_from_the_lift() {
    let tmp = TempDir::new().unwrap();
    let mut doc: Value = serde_json::from_str(&emit_config(&casestudy::ramp_config())).unwrap();
    // û ≡ 0.3 and x₀ = P·x̂₀ + S·û₀, so S·û stays constant along the run
    doc["policy"]["segments"] = serde_json::json!([{ "t_start": 0.0, "coeffs": [[0.3]] }]);
    doc["scenario"]["x0"] = serde_json::json!([40.1, 0.3]);
    doc["concrete"]["x0_box"] = serde_json::json!({ "lower": [40.1, 0.3], "upper": [40.1, 0.3] });
    doc["scenario"]["horizon"] = serde_json::json!(30.0);
    let cfg = write_config(tmp.path(), "const.json", &doc.to_string());
    let out = tmp.path().join("cmp");
    assert_eq!(code(&gaas(&["compare", "--config", &cfg, "--out", &s(&out)])), 0);
    let summary = read_json(out.join("compare.json"));
    assert!(summary["gaas"]["max_err"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn casestudy_default_and_explicit_epsilon_agree() {
    let tmp = TempDir::new().unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        let out_s = s(&out);
        let mut args = vec!["casestudy", "--out", &out_s, "--horizon", "350", "--csv-stride", "1000"];
        args.extend_from_slice(extra);
        let r = gaas(&args);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stdout));
        assert_manifest_complete(&out);
        read_json(out.join("summary.json"))
    };
    let default = run("default", &[]);
    assert_eq!(default, run("explicit", &["--epsilon", "0.5"]));
    assert!((default["input_bound"].as_f64().unwrap() - 0.5690).abs() < 1e-3);
    assert!((default["rbar3"].as_f64().unwrap() - 2.0558).abs() < 1e-4);
    assert!((default["rbar_max"].as_f64().unwrap() - 0.0999).abs() < 1e-4);
    assert!((default["decay_limit"].as_f64().unwrap() - 0.3996).abs() < 1e-4);
    assert_eq!(default["ramp"]["verdict"], "gaas_only_within_epsilon");
}
