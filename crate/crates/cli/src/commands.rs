use std::fs;
use std::path::{Path, PathBuf};

use gaas_core::casestudy;
use gaas_core::model::{emit_config, parse_config, CaseConfig, ConfigError};
use gaas_core::sim::{
    simulate_batch, slack_from_pair, verify_trajectory, write_jumps_csv, write_trajectory_csv, BatchJob, LoggedJump,
    Scenario, SimError, SimOptions, TrajectoryRecord, VerificationReport, VerifyLimits,
};
use gaas_core::synthesis::{check_assumption, feasibility, synthesize as synthesize_gains, ConditionReport, Feasibility, RefinementGains, SynthesisError};
use serde::Serialize;
use thiserror::Error;

use crate::artifacts::{digest, OutDir};
use crate::Overrides;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Config {
        path: String,
        #[source]
        source: ConfigError,
    },
    #[error("gains file {path}: {detail}")]
    Gains { path: PathBuf, detail: String },
    #[error("simulation failed: {0}")]
    Simulation(#[from] SimError),
    #[error("synthesis failed: {0}")]
    Synthesis(#[from] SynthesisError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Io { .. } | Self::Config { .. } | Self::Gains { .. } | Self::Simulation(SimError::InvalidInput(_)) => 2,
            Self::Simulation(_) | Self::Synthesis(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl From<bool> for Outcome {
    fn from(pass: bool) -> Self {
        if pass {
            Self::Pass
        } else {
            Self::Fail
        }
    }
}

fn apply_overrides(cfg: &mut CaseConfig, overrides: &Overrides) -> Result<(), ConfigError> {
    let s = &mut cfg.scenario;
    if let Some(v) = overrides.epsilon {
        s.epsilon = v;
    }
    if let Some(v) = overrides.a1 {
        s.a1 = v;
    }
    if let Some(v) = overrides.step {
        s.step = v;
    }
    if let Some(v) = overrides.horizon {
        s.horizon = v;
    }
    cfg.validate()
}

/// Parsed config with overrides applied, and the digest of its resolved form.
fn load_config(path: &Path, overrides: &Overrides) -> Result<(CaseConfig, String), CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let shown = path.display().to_string();
    let mut cfg = parse_config(&text).map_err(|source| CliError::Config { path: shown.clone(), source })?;
    apply_overrides(&mut cfg, overrides).map_err(|source| CliError::Config { path: shown, source })?;
    let d = digest(emit_config(&cfg).as_bytes());
    Ok((cfg, d))
}

fn load_gains(path: &Path, cfg: &CaseConfig) -> Result<RefinementGains, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let gains: RefinementGains =
        serde_json::from_str(&text).map_err(|e| CliError::Gains { path: path.to_path_buf(), detail: e.to_string() })?;
    let d = gains.dims();
    let expected = (cfg.concrete.n(), cfg.abstract_sys.n(), cfg.concrete.m(), cfg.abstract_sys.m());
    if (d.n, d.nr, d.m, d.mr) != expected {
        return Err(CliError::Gains {
            path: path.to_path_buf(),
            detail: format!("gains are for (n, n_abs, m, m_abs) = {:?}, config has {expected:?}", (d.n, d.nr, d.m, d.mr)),
        });
    }
    Ok(gains)
}

fn synthesize_and_check(cfg: &CaseConfig, force_s_zero: bool, seed: u64) -> Result<(RefinementGains, ConditionReport), SynthesisError> {
    let gains = synthesize_gains(&cfg.concrete, &cfg.abstract_sys, &cfg.scenario, &cfg.envelope, force_s_zero)?;
    let report = check_assumption(&cfg.concrete, &cfg.abstract_sys, &gains, cfg.scenario.epsilon, &cfg.envelope, Some(&cfg.policy), seed)?;
    Ok((gains, report))
}

fn print_report(report: &ConditionReport) {
    for r in &report.records {
        let op = match r.bound {
            gaas_core::synthesis::Bound::AtMost => "<=",
            gaas_core::synthesis::Bound::AtLeast => ">=",
        };
        println!("{:<4} {:<26} {:>14.6e} {op} {:.3e}", if r.pass { "ok" } else { "FAIL" }, r.name, r.value, r.tolerance);
    }
}

#[derive(Serialize)]
struct SynthesisFailure {
    overall_pass: bool,
    error: String,
}

pub fn synthesize(config: &Path, out: &Path, force_s_zero: bool, seed: u64, overrides: &Overrides) -> Result<Outcome, CliError> {
    let (cfg, config_digest) = load_config(config, overrides)?;
    let mut out = OutDir::create(out)?;
    let pass = match synthesize_and_check(&cfg, force_s_zero, seed) {
        Ok((gains, report)) => {
            out.write_json("gains.json", &gains)?;
            out.write_json("report.json", &report)?;
            print_report(&report);
            report.overall_pass
        }
        Err(err) => {
            eprintln!("synthesis failed: {err}");
            out.write_json("report.json", &SynthesisFailure { overall_pass: false, error: err.to_string() })?;
            false
        }
    };
    out.finish("synthesize", config_digest)?;
    Ok(pass.into())
}

#[derive(Serialize)]
struct VerifyDocument<'a> {
    epsilon: f64,
    rbar_max: f64,
    #[serde(flatten)]
    report: &'a VerificationReport,
    jump_log: &'a [LoggedJump],
}

/// Nominal run plus a half-step run for the slack calibration.
fn nominal_and_half<'a>(cfg: &'a CaseConfig, gains: &'a RefinementGains, id: &str) -> [BatchJob<'a>; 2] {
    let sc = Scenario::from_config(cfg);
    let options = SimOptions::for_config(cfg, gains);
    [
        BatchJob { id: id.to_string(), scenario: sc, gains, options },
        BatchJob { id: format!("{id}/half"), scenario: Scenario { step: 0.5 * sc.step, ..sc }, gains, options },
    ]
}

fn take(results: &mut std::collections::BTreeMap<String, Result<TrajectoryRecord, SimError>>, id: &str) -> Result<TrajectoryRecord, SimError> {
    results.remove(id).expect("every job reports back")
}

fn verify_pair(cfg: &CaseConfig, gains: &RefinementGains, rec: &TrajectoryRecord, half: &TrajectoryRecord) -> VerificationReport {
    let slack = slack_from_pair(rec, half);
    verify_trajectory(rec, gains, &VerifyLimits::for_config(cfg, gains, slack))
}

fn write_run(out: &mut OutDir, dir: &str, cfg: &CaseConfig, gains: &RefinementGains, rec: &TrajectoryRecord, report: &VerificationReport, stride: usize) -> Result<(), CliError> {
    let join = |name: &str| if dir.is_empty() { name.to_string() } else { format!("{dir}/{name}") };
    out.write_with(&join("trajectory.csv"), |w| write_trajectory_csv(rec, w, stride))?;
    out.write_with(&join("jumps.csv"), |w| write_jumps_csv(rec, w))?;
    let opts = SimOptions::for_config(cfg, gains);
    out.write_json(&join("verify.json"), &VerifyDocument { epsilon: opts.epsilon, rbar_max: opts.rbar_max, report, jump_log: &rec.jumps })
}

fn warn_membership(rec: &TrajectoryRecord, epsilon: f64) {
    if !rec.initial_in_relation {
        eprintln!("warning: initial triple is outside the relation (Vg = {:.6} > epsilon = {epsilon})", rec.vg[0]);
    }
}

fn print_verification(label: &str, r: &VerificationReport) {
    println!(
        "{label}: max_err = {:.6}, max_vg = {:.6}, max_u = {:.6}, jumps = {} ({} admissible), decay violations = {}, {}",
        r.max_err,
        r.max_vg,
        r.max_u,
        r.jumps.count,
        r.jumps.passed,
        r.decay_violations,
        if r.overall_pass { "PASS" } else { "FAIL" }
    );
}

pub fn simulate(config: &Path, gains_path: &Path, out: &Path, stride: usize, overrides: &Overrides) -> Result<Outcome, CliError> {
    let (cfg, config_digest) = load_config(config, overrides)?;
    let gains = load_gains(gains_path, &cfg)?;
    let mut results = simulate_batch(&nominal_and_half(&cfg, &gains, "run"));
    let rec = take(&mut results, "run")?;
    let half = take(&mut results, "run/half")?;
    warn_membership(&rec, cfg.scenario.epsilon);
    let report = verify_pair(&cfg, &gains, &rec, &half);
    let mut out = OutDir::create(out)?;
    write_run(&mut out, "", &cfg, &gains, &rec, &report, stride)?;
    out.finish("simulate", config_digest)?;
    print_verification("simulate", &report);
    Ok(report.overall_pass.into())
}

#[derive(Debug, Serialize)]
struct MethodSummary {
    max_err: f64,
    max_err_time: f64,
    max_vg: f64,
    max_u: f64,
    within_epsilon: bool,
    rbar1: f64,
    rbar2: f64,
    rbar3: f64,
    input_bound: f64,
    feasibility: Feasibility,
    jumps: usize,
    verification_pass: bool,
}

#[derive(Debug, Serialize)]
struct CompareSummary {
    epsilon: f64,
    gaas: MethodSummary,
    baseline: MethodSummary,
    verdict: &'static str,
}

fn method_summary(cfg: &CaseConfig, gains: &RefinementGains, rec: &TrajectoryRecord, report: &VerificationReport) -> MethodSummary {
    let eps = cfg.scenario.epsilon;
    MethodSummary {
        max_err: report.max_err,
        max_err_time: report.max_err_time,
        max_vg: report.max_vg,
        max_u: report.max_u,
        within_epsilon: report.max_err <= eps,
        rbar1: gains.rbar1,
        rbar2: gains.rbar2,
        rbar3: gains.rbar3,
        input_bound: gains.input_bound,
        feasibility: feasibility(gains.rbar1, gains.rbar2, gains.rbar3, &cfg.envelope, gains.a1, eps),
        jumps: rec.jumps.len(),
        verification_pass: report.overall_pass,
    }
}

fn verdict(gaas_ok: bool, baseline_ok: bool) -> &'static str {
    match (gaas_ok, baseline_ok) {
        (true, false) => "gaas_only_within_epsilon",
        (true, true) => "both_within_epsilon",
        (false, true) => "baseline_only_within_epsilon",
        (false, false) => "neither_within_epsilon",
    }
}

fn run_compare(cfg: &CaseConfig, out: &mut OutDir, prefix: &str, stride: usize) -> Result<CompareSummary, CliError> {
    let gaas = synthesize_gains(&cfg.concrete, &cfg.abstract_sys, &cfg.scenario, &cfg.envelope, false)?;
    let baseline = synthesize_gains(&cfg.concrete, &cfg.abstract_sys, &cfg.scenario, &cfg.envelope, true)?;
    let mut jobs = Vec::new();
    jobs.extend(nominal_and_half(cfg, &gaas, "gaas"));
    jobs.extend(nominal_and_half(cfg, &baseline, "baseline"));
    let mut results = simulate_batch(&jobs);

    let mut summaries = Vec::new();
    for (id, gains) in [("gaas", &gaas), ("baseline", &baseline)] {
        let rec = take(&mut results, id)?;
        let half = take(&mut results, &format!("{id}/half"))?;
        let report = verify_pair(cfg, gains, &rec, &half);
        let dir = if prefix.is_empty() { id.to_string() } else { format!("{prefix}/{id}") };
        out.write_json(&format!("{dir}/gains.json"), gains)?;
        write_run(out, &dir, cfg, gains, &rec, &report, stride)?;
        summaries.push(method_summary(cfg, gains, &rec, &report));
    }
    let baseline_summary = summaries.pop().expect("two runs");
    let gaas_summary = summaries.pop().expect("two runs");
    let v = verdict(gaas_summary.within_epsilon, baseline_summary.within_epsilon);
    Ok(CompareSummary { epsilon: cfg.scenario.epsilon, gaas: gaas_summary, baseline: baseline_summary, verdict: v })
}

fn print_compare(s: &CompareSummary) {
    println!("compare: gAAS max_err = {:.6}, S = 0 baseline max_err = {:.6}, epsilon = {}, verdict = {}", s.gaas.max_err, s.baseline.max_err, s.epsilon, s.verdict);
}

pub fn compare(config: &Path, out: &Path, stride: usize, overrides: &Overrides) -> Result<Outcome, CliError> {
    let (cfg, config_digest) = load_config(config, overrides)?;
    let mut out = OutDir::create(out)?;
    let summary = run_compare(&cfg, &mut out, "", stride)?;
    out.write_json("compare.json", &summary)?;
    out.finish("compare", config_digest)?;
    print_compare(&summary);
    Ok(Outcome::Pass)
}

#[derive(Debug, Serialize)]
struct FeedbackRun {
    horizon: f64,
    max_err: f64,
    max_vg: f64,
    max_u: f64,
    jumps: usize,
    jumps_admissible: usize,
    jumps_failing_sqrt_omega_budget: usize,
    verification_pass: bool,
}

#[derive(Debug, Serialize)]
struct CaseStudySummary {
    input_bound: f64,
    rbar1: f64,
    rbar2: f64,
    rbar3: f64,
    rbar_max: f64,
    decay_limit: f64,
    lambda_min_m: f64,
    conditions_pass: bool,
    feedback: FeedbackRun,
    ramp: CompareSummary,
    overall_pass: bool,
}

fn render_case_study(s: &CaseStudySummary) {
    let rows: [(&str, String); 14] = [
        ("input bound b", format!("{:.4}", s.input_bound)),
        ("rbar1", format!("{:.3e}", s.rbar1)),
        ("rbar2", format!("{:.3e}", s.rbar2)),
        ("rbar3", format!("{:.4}", s.rbar3)),
        ("rbar_max", format!("{:.4}", s.rbar_max)),
        ("2 rbar_max / a1", format!("{:.4}", s.decay_limit)),
        ("lambda_min(M)", format!("{:.4}", s.lambda_min_m)),
        ("conditions", pass_word(s.conditions_pass).into()),
        ("feedback max |y - yhat|", format!("{:.4}", s.feedback.max_err)),
        ("feedback max Vg", format!("{:.4}", s.feedback.max_vg)),
        ("feedback jumps admissible", format!("{}/{}", s.feedback.jumps_admissible, s.feedback.jumps)),
        ("ramp gAAS max |y - yhat|", format!("{:.4}", s.ramp.gaas.max_err)),
        ("ramp S = 0 max |y - yhat|", format!("{:.4}", s.ramp.baseline.max_err)),
        ("overall", pass_word(s.overall_pass).into()),
    ];
    for (k, v) in rows {
        println!("{k:<28} {v}");
    }
}

fn pass_word(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn casestudy(out: &Path, stride: usize, seed: u64, overrides: &Overrides) -> Result<Outcome, CliError> {
    let mut feedback = casestudy::feedback_config();
    let mut ramp = casestudy::ramp_config();
    for (name, cfg) in [("feedback", &mut feedback), ("ramp", &mut ramp)] {
        apply_overrides(cfg, overrides).map_err(|source| CliError::Config { path: format!("built-in {name} scenario"), source })?;
    }
    let mut out = OutDir::create(out)?;
    let (feedback_doc, ramp_doc) = (emit_config(&feedback), emit_config(&ramp));
    out.write_bytes("config/feedback.json", feedback_doc.as_bytes())?;
    out.write_bytes("config/ramp.json", ramp_doc.as_bytes())?;
    let config_digest = digest(format!("{feedback_doc}\n{ramp_doc}").as_bytes());

    let (gains, report) = synthesize_and_check(&feedback, false, seed)?;
    out.write_json("synthesize/gains.json", &gains)?;
    out.write_json("synthesize/report.json", &report)?;

    let mut results = simulate_batch(&nominal_and_half(&feedback, &gains, "feedback"));
    let rec = take(&mut results, "feedback")?;
    let half = take(&mut results, "feedback/half")?;
    warn_membership(&rec, feedback.scenario.epsilon);
    let verification = verify_pair(&feedback, &gains, &rec, &half);
    write_run(&mut out, "simulate", &feedback, &gains, &rec, &verification, stride)?;

    let ramp_summary = run_compare(&ramp, &mut out, "compare", stride)?;
    out.write_json("compare/compare.json", &ramp_summary)?;

    let f = feasibility(gains.rbar1, gains.rbar2, gains.rbar3, &feedback.envelope, gains.a1, feedback.scenario.epsilon);
    let overall_pass = report.overall_pass && verification.overall_pass && ramp_summary.verdict == "gaas_only_within_epsilon";
    let summary = CaseStudySummary {
        input_bound: gains.input_bound,
        rbar1: gains.rbar1,
        rbar2: gains.rbar2,
        rbar3: gains.rbar3,
        rbar_max: f.rbar_max,
        decay_limit: f.decay_limit,
        lambda_min_m: gains.lambda_min_m,
        conditions_pass: report.overall_pass,
        feedback: FeedbackRun {
            horizon: feedback.scenario.horizon,
            max_err: verification.max_err,
            max_vg: verification.max_vg,
            max_u: verification.max_u,
            jumps: verification.jumps.count,
            jumps_admissible: verification.jumps.passed,
            jumps_failing_sqrt_omega_budget: verification.jumps.sqrt_omega_failed,
            verification_pass: verification.overall_pass,
        },
        ramp: ramp_summary,
        overall_pass,
    };
    out.write_json("summary.json", &summary)?;
    out.finish("casestudy", config_digest)?;
    if !report.overall_pass {
        print_report(&report);
    }
    render_case_study(&summary);
    Ok(overall_pass.into())
}
