//! Fixed-step RK4 co-simulation of the concrete system under the interface
//! and the abstract system under its input policy, with jump logging and
//! trajectory-level verification.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    AbstractInputPolicy, AbstractLinearSystem, CaseConfig, ConcreteLinearSystem, JumpCause, JumpEvent,
    OperatingEnvelope,
};
use crate::numerics::norm2;
use crate::refine::{jump_admissible_with, omega, JumpCheck, JumpRule};
use crate::synthesis::{feasibility, RefinementGains};

/// Minimum spacing between consecutive jumps, in steps.
pub const MIN_JUMP_SEPARATION_STEPS: f64 = 10.0;
/// Region-crossing localization tolerance relative to the horizon.
pub const CROSSING_TOL_REL: f64 = 1e-9;
/// Lower bound on the integration slack used by the decay-bound check.
pub const SLACK_FLOOR: f64 = 1e-10;
const MAX_LISTED_VIOLATIONS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("policy undefined at t = {time}: {detail}")]
    DomainGap { time: f64, detail: String },
    #[error("state became non-finite at t = {time}")]
    NonFiniteState { time: f64 },
    #[error("jumps at t = {previous} and t = {time} are closer than {min_separation}")]
    JumpsTooClose { previous: f64, time: f64, min_separation: f64 },
    #[error("invalid simulation input: {0}")]
    InvalidInput(String),
}

/// Policy output at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub uhat: Vec<f64>,
    pub uhatdot: Vec<f64>,
    /// Active segment or region index.
    pub piece: usize,
}

/// û and its analytic derivative at (t, x̂). Segments are right-continuous
/// and regions are resolved first-match.
pub fn eval_policy(
    policy: &AbstractInputPolicy,
    abstract_sys: &AbstractLinearSystem,
    t: f64,
    xhat: &[f64],
) -> Result<PolicySample, SimError> {
    let piece = active_piece(policy, t, xhat)?;
    let mut uhat = vec![0.0; abstract_sys.m()];
    let mut uhatdot = vec![0.0; abstract_sys.m()];
    uhat_into(policy, piece, t, xhat, &mut uhat);
    uhatdot_into(policy, abstract_sys, piece, t, xhat, &uhat, &mut uhatdot);
    Ok(PolicySample { uhat, uhatdot, piece })
}

fn active_piece(policy: &AbstractInputPolicy, t: f64, xhat: &[f64]) -> Result<usize, SimError> {
    match policy {
        AbstractInputPolicy::OpenLoop { .. } => policy
            .segment_at(t)
            .ok_or_else(|| SimError::DomainGap { time: t, detail: "no open-loop segment covers this time".into() }),
        AbstractInputPolicy::SwitchedFeedback { .. } => policy
            .region_at(xhat)
            .ok_or_else(|| SimError::DomainGap { time: t, detail: format!("abstract state {xhat:?} lies in no region") }),
    }
}

fn uhat_into(policy: &AbstractInputPolicy, piece: usize, t: f64, xhat: &[f64], out: &mut [f64]) {
    match policy {
        AbstractInputPolicy::OpenLoop { segments } => {
            for (o, c) in out.iter_mut().zip(&segments[piece].coeffs) {
                *o = c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck);
            }
        }
        AbstractInputPolicy::SwitchedFeedback { regions } => {
            regions[piece].gain.mul_vec_into(xhat, out);
            out.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

fn uhatdot_into(
    policy: &AbstractInputPolicy,
    abstract_sys: &AbstractLinearSystem,
    piece: usize,
    t: f64,
    xhat: &[f64],
    uhat: &[f64],
    out: &mut [f64],
) {
    match policy {
        AbstractInputPolicy::OpenLoop { segments } => {
            for (o, c) in out.iter_mut().zip(&segments[piece].coeffs) {
                *o = c.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, &ck)| acc * t + k as f64 * ck);
            }
        }
        AbstractInputPolicy::SwitchedFeedback { regions } => {
            // d/dt(−G·x̂) = −G·(Â·x̂ + B̂·û)
            let mut xhatdot = abstract_sys.a.mul_vec(xhat);
            abstract_sys.b.mul_vec_acc(uhat, &mut xhatdot);
            regions[piece].gain.mul_vec_into(&xhatdot, out);
            out.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

/// Everything a single run needs besides the gains.
#[derive(Debug, Clone, Copy)]
pub struct Scenario<'a> {
    pub concrete: &'a ConcreteLinearSystem,
    pub abstract_sys: &'a AbstractLinearSystem,
    pub policy: &'a AbstractInputPolicy,
    pub x0: &'a [f64],
    pub xhat0: &'a [f64],
    pub horizon: f64,
    pub step: f64,
}

impl<'a> Scenario<'a> {
    pub fn from_config(config: &'a CaseConfig) -> Self {
        Self {
            concrete: &config.concrete,
            abstract_sys: &config.abstract_sys,
            policy: &config.policy,
            x0: &config.scenario.x0,
            xhat0: &config.scenario.xhat0,
            horizon: config.scenario.horizon,
            step: config.scenario.step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// ε used for the logged jump checks.
    pub epsilon: f64,
    /// r̄_max used for the logged jump checks.
    pub rbar_max: f64,
}

impl SimOptions {
    /// ε from the scenario and r̄_max from the gains over the declared envelope.
    pub fn for_config(config: &CaseConfig, gains: &RefinementGains) -> Self {
        let eps = config.scenario.epsilon;
        let f = feasibility(gains.rbar1, gains.rbar2, gains.rbar3, &config.envelope, gains.a1, eps);
        Self { epsilon: eps, rbar_max: f.rbar_max }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub nr: usize,
    pub mr: usize,
}

/// One logged input discontinuity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedJump {
    pub event: JumpEvent,
    /// Index of the grid sample at the jump time.
    pub sample: usize,
    pub uhat_before: Vec<f64>,
    pub uhat_after: Vec<f64>,
    pub vg_before: f64,
    pub vg_after: f64,
    /// Time since the previous jump (or since t₀).
    pub tau: f64,
    /// V_g right after the previous jump (or at t₀).
    pub vg_reference: f64,
    pub check: JumpCheck,
    /// Same jump judged with the square-root budget.
    pub sqrt_omega_check: JumpCheck,
}

/// Sampled trajectory in structure-of-arrays layout. Vector quantities are
/// stored row after row, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub dims: Dims,
    pub step: f64,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub xhat: Vec<f64>,
    pub uhat: Vec<f64>,
    pub uhatdot: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub yhat: Vec<f64>,
    pub vg: Vec<f64>,
    pub err: Vec<f64>,
    pub jumps: Vec<LoggedJump>,
    /// V_g(x₀, x̂₀, û₀) ≤ ε at the start.
    pub initial_in_relation: bool,
}

impl TrajectoryRecord {
    fn with_dims(dims: Dims, step: f64, capacity: usize) -> Self {
        Self {
            dims,
            step,
            t: Vec::with_capacity(capacity),
            x: Vec::with_capacity(capacity * dims.n),
            xhat: Vec::with_capacity(capacity * dims.nr),
            uhat: Vec::with_capacity(capacity * dims.mr),
            uhatdot: Vec::with_capacity(capacity * dims.mr),
            u: Vec::with_capacity(capacity * dims.m),
            y: Vec::with_capacity(capacity * dims.p),
            yhat: Vec::with_capacity(capacity * dims.p),
            vg: Vec::with_capacity(capacity),
            err: Vec::with_capacity(capacity),
            jumps: Vec::new(),
            initial_in_relation: true,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x[i * self.dims.n..(i + 1) * self.dims.n]
    }

    pub fn xhat_at(&self, i: usize) -> &[f64] {
        &self.xhat[i * self.dims.nr..(i + 1) * self.dims.nr]
    }

    pub fn uhat_at(&self, i: usize) -> &[f64] {
        &self.uhat[i * self.dims.mr..(i + 1) * self.dims.mr]
    }

    pub fn uhatdot_at(&self, i: usize) -> &[f64] {
        &self.uhatdot[i * self.dims.mr..(i + 1) * self.dims.mr]
    }

    pub fn u_at(&self, i: usize) -> &[f64] {
        &self.u[i * self.dims.m..(i + 1) * self.dims.m]
    }

    pub fn y_at(&self, i: usize) -> &[f64] {
        &self.y[i * self.dims.p..(i + 1) * self.dims.p]
    }

    pub fn yhat_at(&self, i: usize) -> &[f64] {
        &self.yhat[i * self.dims.p..(i + 1) * self.dims.p]
    }

    pub fn max_err(&self) -> f64 {
        self.err.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_vg(&self) -> f64 {
        self.vg.iter().copied().fold(0.0, f64::max)
    }

    /// Final joint state [x; x̂].
    pub fn terminal_state(&self) -> Vec<f64> {
        let last = self.len() - 1;
        let mut z = self.x_at(last).to_vec();
        z.extend_from_slice(self.xhat_at(last));
        z
    }
}

struct Scratch {
    uhat: Vec<f64>,
    e: Vec<f64>,
    u: Vec<f64>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

struct Engine<'a> {
    sc: &'a Scenario<'a>,
    gains: &'a RefinementGains,
    dims: Dims,
}

impl Engine<'_> {
    fn scratch(&self) -> Scratch {
        let len = self.dims.n + self.dims.nr;
        Scratch {
            uhat: vec![0.0; self.dims.mr],
            e: vec![0.0; self.dims.n],
            u: vec![0.0; self.dims.m],
            k: std::array::from_fn(|_| vec![0.0; len]),
            tmp: vec![0.0; len],
        }
    }

    fn deriv(&self, piece: usize, t: f64, z: &[f64], dz: &mut [f64], uhat: &mut [f64], e: &mut [f64], u: &mut [f64]) {
        let (x, xhat) = z.split_at(self.dims.n);
        uhat_into(self.sc.policy, piece, t, xhat, uhat);
        self.gains.error_into(x, xhat, uhat, e);
        self.gains.interface_into(e, xhat, uhat, u);
        let (dx, dxhat) = dz.split_at_mut(self.dims.n);
        self.sc.concrete.a.mul_vec_into(x, dx);
        self.sc.concrete.b.mul_vec_acc(u, dx);
        self.sc.abstract_sys.a.mul_vec_into(xhat, dxhat);
        self.sc.abstract_sys.b.mul_vec_acc(uhat, dxhat);
    }

    /// One classical RK4 step of length h with the policy piece frozen.
    fn rk4(&self, s: &mut Scratch, piece: usize, t: f64, z: &[f64], h: f64, out: &mut [f64]) {
        let Scratch { uhat, e, u, k, tmp } = s;
        let [k1, k2, k3, k4] = k;
        self.deriv(piece, t, z, k1, uhat, e, u);
        for i in 0..z.len() {
            tmp[i] = z[i] + 0.5 * h * k1[i];
        }
        self.deriv(piece, t + 0.5 * h, tmp, k2, uhat, e, u);
        for i in 0..z.len() {
            tmp[i] = z[i] + 0.5 * h * k2[i];
        }
        self.deriv(piece, t + 0.5 * h, tmp, k3, uhat, e, u);
        for i in 0..z.len() {
            tmp[i] = z[i] + h * k3[i];
        }
        self.deriv(piece, t + h, tmp, k4, uhat, e, u);
        for i in 0..z.len() {
            out[i] = z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    fn vg_with(&self, z: &[f64], uhat: &[f64]) -> f64 {
        let (x, xhat) = z.split_at(self.dims.n);
        let mut e = vec![0.0; self.dims.n];
        self.gains.error_into(x, xhat, uhat, &mut e);
        self.gains.weighted_norm(&e)
    }

    fn push_sample(&self, rec: &mut TrajectoryRecord, piece: usize, t: f64, z: &[f64]) -> f64 {
        let d = self.dims;
        let (x, xhat) = z.split_at(d.n);
        let mut uhat = vec![0.0; d.mr];
        let mut uhatdot = vec![0.0; d.mr];
        uhat_into(self.sc.policy, piece, t, xhat, &mut uhat);
        uhatdot_into(self.sc.policy, self.sc.abstract_sys, piece, t, xhat, &uhat, &mut uhatdot);
        let mut e = vec![0.0; d.n];
        self.gains.error_into(x, xhat, &uhat, &mut e);
        let vg = self.gains.weighted_norm(&e);
        let mut u = vec![0.0; d.m];
        self.gains.interface_into(&e, xhat, &uhat, &mut u);
        let y = self.sc.concrete.c.mul_vec(x);
        let yhat = self.sc.abstract_sys.c.mul_vec(xhat);
        let diff: Vec<f64> = y.iter().zip(&yhat).map(|(a, b)| a - b).collect();

        rec.t.push(t);
        rec.x.extend_from_slice(x);
        rec.xhat.extend_from_slice(xhat);
        rec.uhat.extend_from_slice(&uhat);
        rec.uhatdot.extend_from_slice(&uhatdot);
        rec.u.extend_from_slice(&u);
        rec.y.extend_from_slice(&y);
        rec.yhat.extend_from_slice(&yhat);
        rec.vg.push(vg);
        rec.err.push(norm2(&diff));
        vg
    }
}

fn check_inputs(sc: &Scenario, gains: &RefinementGains) -> Result<Dims, SimError> {
    let dims = Dims {
        n: sc.concrete.n(),
        m: sc.concrete.m(),
        p: sc.concrete.p(),
        nr: sc.abstract_sys.n(),
        mr: sc.abstract_sys.m(),
    };
    if !(sc.step > 0.0 && sc.step.is_finite()) {
        return Err(SimError::InvalidInput(format!("step must be positive and finite, got {}", sc.step)));
    }
    if !(sc.horizon >= 0.0 && sc.horizon.is_finite()) {
        return Err(SimError::InvalidInput(format!("horizon must be nonnegative and finite, got {}", sc.horizon)));
    }
    if sc.x0.len() != dims.n || sc.xhat0.len() != dims.nr {
        return Err(SimError::InvalidInput("initial state dimensions do not match the systems".into()));
    }
    let g = gains.dims();
    if (g.n, g.nr, g.m, g.mr) != (dims.n, dims.nr, dims.m, dims.mr) || gains.q.shape() != (dims.m, dims.nr) || gains.r.shape() != (dims.m, dims.mr) {
        return Err(SimError::InvalidInput(format!(
            "gains are for (n, n̂, m, m̂) = ({}, {}, {}, {}), systems are ({}, {}, {}, {})",
            g.n, g.nr, g.m, g.mr, dims.n, dims.nr, dims.m, dims.mr
        )));
    }
    Ok(dims)
}

/// Grid targets t₀ + k·h, the horizon itself, and open-loop breakpoints.
/// The flag marks breakpoints, where the active segment changes.
fn grid_targets(policy: &AbstractInputPolicy, horizon: f64, h: f64) -> Vec<(f64, bool)> {
    if horizon == 0.0 {
        return Vec::new();
    }
    let steps = (horizon / h - 1e-9).ceil().max(1.0) as usize;
    let mut targets: Vec<(f64, bool)> = (1..steps).map(|k| (k as f64 * h, false)).collect();
    targets.push((horizon, false));
    let snap = 1e-9 * h;
    for bp in policy.breakpoints_within(0.0, horizon) {
        let idx = targets.partition_point(|&(t, _)| t < bp - snap);
        match targets.get_mut(idx) {
            Some(slot) if (slot.0 - bp).abs() <= snap => *slot = (bp, true),
            _ => targets.insert(idx, (bp, true)),
        }
    }
    targets
}

/// Integrates [x; x̂] with u = u_g at every stage. Open-loop breakpoints are
/// grid points; region crossings are bisected and added to the grid. The
/// sample at a jump time stores the post-jump input.
pub fn simulate(sc: &Scenario, gains: &RefinementGains, opts: &SimOptions) -> Result<TrajectoryRecord, SimError> {
    let dims = check_inputs(sc, gains)?;
    let engine = Engine { sc, gains, dims };
    let h = sc.step;
    let targets = grid_targets(sc.policy, sc.horizon, h);
    let crossing_tol = (CROSSING_TOL_REL * sc.horizon).max(f64::EPSILON);
    let min_separation = MIN_JUMP_SEPARATION_STEPS * h;
    let feedback = matches!(sc.policy, AbstractInputPolicy::SwitchedFeedback { .. });

    let mut rec = TrajectoryRecord::with_dims(dims, h, targets.len() + 1);
    let mut scratch = engine.scratch();
    let mut z: Vec<f64> = sc.x0.iter().chain(sc.xhat0).copied().collect();
    let mut next = vec![0.0; z.len()];
    let mut t = 0.0;
    let mut piece = active_piece(sc.policy, t, sc.xhat0)?;
    let vg0 = engine.push_sample(&mut rec, piece, t, &z);
    rec.initial_in_relation = vg0 <= opts.epsilon;

    let mut reference = (0.0, vg0);
    let mut last_jump: Option<f64> = None;
    let mut log_jump = |rec: &mut TrajectoryRecord, time: f64, z: &[f64], from: usize, to: usize, cause: JumpCause| {
        if let Some(prev) = last_jump {
            if time - prev < min_separation {
                return Err(SimError::JumpsTooClose { previous: prev, time, min_separation });
            }
        }
        let xhat = &z[dims.n..];
        let mut before = vec![0.0; dims.mr];
        let mut after = vec![0.0; dims.mr];
        uhat_into(sc.policy, from, time, xhat, &mut before);
        uhat_into(sc.policy, to, time, xhat, &mut after);
        let delta: Vec<f64> = after.iter().zip(&before).map(|(a, b)| a - b).collect();
        let tau = time - reference.0;
        let check = jump_admissible_with(JumpRule::DecayBound, &delta, tau, reference.1, gains, opts.epsilon, opts.rbar_max);
        let literal = jump_admissible_with(JumpRule::SqrtOmega, &delta, tau, reference.1, gains, opts.epsilon, opts.rbar_max);
        let vg_after = engine.vg_with(z, &after);
        rec.jumps.push(LoggedJump {
            event: JumpEvent { time, delta, cause },
            sample: rec.len(),
            vg_before: engine.vg_with(z, &before),
            vg_after,
            uhat_before: before,
            uhat_after: after,
            tau,
            vg_reference: reference.1,
            check,
            sqrt_omega_check: literal,
        });
        reference = (time, vg_after);
        last_jump = Some(time);
        Ok(())
    };

    for &(target, is_breakpoint) in &targets {
        loop {
            let span = target - t;
            engine.rk4(&mut scratch, piece, t, &z, span, &mut next);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFiniteState { time: target });
            }
            let left_region = feedback && sc.policy.region_at(&next[dims.n..]) != Some(piece);
            if !left_region {
                std::mem::swap(&mut z, &mut next);
                t = target;
                if is_breakpoint {
                    let to = active_piece(sc.policy, t, &z[dims.n..])?;
                    log_jump(&mut rec, t, &z, piece, to, JumpCause::SegmentBoundary)?;
                    piece = to;
                }
                engine.push_sample(&mut rec, piece, t, &z);
                break;
            }

            // shortest step length at which x̂ has left the current region
            let (mut lo, mut hi) = (0.0, span);
            while hi - lo > crossing_tol {
                let mid = 0.5 * (lo + hi);
                engine.rk4(&mut scratch, piece, t, &z, mid, &mut next);
                if sc.policy.region_at(&next[dims.n..]) == Some(piece) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            engine.rk4(&mut scratch, piece, t, &z, hi, &mut next);
            std::mem::swap(&mut z, &mut next);
            let reached = hi >= span;
            t = if reached { target } else { t + hi };
            let to = active_piece(sc.policy, t, &z[dims.n..])?;
            log_jump(&mut rec, t, &z, piece, to, JumpCause::RegionCrossing)?;
            piece = to;
            engine.push_sample(&mut rec, piece, t, &z);
            if reached {
                break;
            }
        }
    }
    Ok(rec)
}

/// Independent runs, one thread each, merged by identifier.
pub struct BatchJob<'a> {
    pub id: String,
    pub scenario: Scenario<'a>,
    pub gains: &'a RefinementGains,
    pub options: SimOptions,
}

pub fn simulate_batch(jobs: &[BatchJob]) -> BTreeMap<String, Result<TrajectoryRecord, SimError>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|job| (job.id.clone(), scope.spawn(move || simulate(&job.scenario, job.gains, &job.options))))
            .collect();
        handles
            .into_iter()
            .map(|(id, handle)| (id, handle.join().expect("simulation thread panicked")))
            .collect()
    })
}

/// Decay-bound slack from a step-halving comparison: the largest V_g gap
/// between runs at h and h/2 on shared grid times, scaled by 16/15 (the
/// Richardson factor for a fourth-order method), floored at
/// [`SLACK_FLOOR`].
pub fn calibrate_slack(sc: &Scenario, gains: &RefinementGains, opts: &SimOptions) -> Result<f64, SimError> {
    let coarse = simulate(sc, gains, opts)?;
    let fine = simulate(&Scenario { step: 0.5 * sc.step, ..*sc }, gains, opts)?;
    Ok(slack_from_pair(&coarse, &fine))
}

pub fn slack_from_pair(coarse: &TrajectoryRecord, fine: &TrajectoryRecord) -> f64 {
    let mut gap = 0.0_f64;
    let mut j = 0;
    for (i, &t) in coarse.t.iter().enumerate() {
        while j < fine.t.len() && fine.t[j] < t {
            j += 1;
        }
        if j < fine.t.len() && fine.t[j] == t {
            gap = gap.max((coarse.vg[i] - fine.vg[j]).abs());
        }
    }
    (gap * 16.0 / 15.0).max(SLACK_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyLimits {
    pub epsilon: f64,
    pub envelope: OperatingEnvelope,
    pub input_ball_radius: f64,
    pub rbar_max: f64,
    pub a1: f64,
    /// Integration slack added to the decay bound.
    pub slack: f64,
}

impl VerifyLimits {
    pub fn for_config(config: &CaseConfig, gains: &RefinementGains, slack: f64) -> Self {
        let opts = SimOptions::for_config(config, gains);
        Self {
            epsilon: config.scenario.epsilon,
            envelope: config.envelope,
            input_ball_radius: config.concrete.input_ball_radius,
            rbar_max: opts.rbar_max,
            a1: gains.a1,
            slack,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    OutputError,
    SimulationFunction,
    InputBall,
    EnvelopeXhat,
    EnvelopeUhat,
    EnvelopeUhatdot,
    DecayBound,
    Jump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub time: f64,
    pub kind: ViolationKind,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JumpSummary {
    pub count: usize,
    pub passed: usize,
    pub failed: usize,
    /// Jumps whose logged verdict differs from the re-evaluation.
    pub mismatched: usize,
    /// Failures under the square-root budget; reported, not gating.
    pub sqrt_omega_failed: usize,
    pub max_lhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub samples: usize,
    pub max_err: f64,
    pub max_err_time: f64,
    pub max_vg: f64,
    pub max_u: f64,
    pub max_xhat: f64,
    pub max_uhat: f64,
    pub max_uhatdot: f64,
    pub initial_in_relation: bool,
    pub decay_violations: usize,
    pub slack: f64,
    pub jumps: JumpSummary,
    pub violation_counts: BTreeMap<ViolationKind, usize>,
    /// The first violations in time order, capped in length.
    pub violations: Vec<Violation>,
    pub overall_pass: bool,
}

/// Checks every sample against ε, b_U and the envelope, checks V_g against
/// the decay bound restarted at each jump, and re-evaluates each jump.
pub fn verify_trajectory(rec: &TrajectoryRecord, gains: &RefinementGains, limits: &VerifyLimits) -> VerificationReport {
    let mut counts: BTreeMap<ViolationKind, usize> = BTreeMap::new();
    let mut listed = Vec::new();
    let mut flag = |time: f64, kind: ViolationKind, value: f64, limit: f64| {
        *counts.entry(kind).or_default() += 1;
        if listed.len() < MAX_LISTED_VIOLATIONS {
            listed.push(Violation { time, kind, value, limit });
        }
    };
    let env = &limits.envelope;
    let env_tol = |limit: f64| limit + 1e-12 * limit.abs().max(1.0);

    let (mut max_err, mut max_err_time, mut max_vg, mut max_u) = (0.0_f64, 0.0, 0.0_f64, 0.0_f64);
    let (mut max_xhat, mut max_uhat, mut max_uhatdot) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut decay_violations = 0;
    let mut jump_iter = rec.jumps.iter().peekable();
    let mut reference = (rec.t.first().copied().unwrap_or(0.0), rec.vg.first().copied().unwrap_or(0.0));

    for i in 0..rec.len() {
        let t = rec.t[i];
        if jump_iter.peek().is_some_and(|j| j.sample == i) {
            jump_iter.next();
            reference = (t, rec.vg[i]);
        }
        let (err, vg) = (rec.err[i], rec.vg[i]);
        if err > max_err {
            max_err = err;
            max_err_time = t;
        }
        max_vg = max_vg.max(vg);
        let u = norm2(rec.u_at(i));
        let xh = norm2(rec.xhat_at(i));
        let uh = norm2(rec.uhat_at(i));
        let uhd = norm2(rec.uhatdot_at(i));
        max_u = max_u.max(u);
        max_xhat = max_xhat.max(xh);
        max_uhat = max_uhat.max(uh);
        max_uhatdot = max_uhatdot.max(uhd);

        if err > limits.epsilon {
            flag(t, ViolationKind::OutputError, err, limits.epsilon);
        }
        if vg > limits.epsilon {
            flag(t, ViolationKind::SimulationFunction, vg, limits.epsilon);
        }
        if u > limits.input_ball_radius {
            flag(t, ViolationKind::InputBall, u, limits.input_ball_radius);
        }
        if xh > env_tol(env.xhat_max) {
            flag(t, ViolationKind::EnvelopeXhat, xh, env.xhat_max);
        }
        if uh > env_tol(env.uhat_max) {
            flag(t, ViolationKind::EnvelopeUhat, uh, env.uhat_max);
        }
        if uhd > env_tol(env.uhatdot_max) {
            flag(t, ViolationKind::EnvelopeUhatdot, uhd, env.uhatdot_max);
        }
        let bound = omega(t - reference.0, reference.1, limits.a1, limits.rbar_max) + limits.slack;
        if vg > bound {
            decay_violations += 1;
            flag(t, ViolationKind::DecayBound, vg, bound);
        }
    }

    let mut jumps = JumpSummary { count: rec.jumps.len(), ..Default::default() };
    for j in &rec.jumps {
        let check = jump_admissible_with(
            JumpRule::DecayBound,
            &j.event.delta,
            j.tau,
            j.vg_reference,
            gains,
            limits.epsilon,
            limits.rbar_max,
        );
        let literal = jump_admissible_with(
            JumpRule::SqrtOmega,
            &j.event.delta,
            j.tau,
            j.vg_reference,
            gains,
            limits.epsilon,
            limits.rbar_max,
        );
        jumps.max_lhs = jumps.max_lhs.max(check.lhs);
        if check.pass {
            jumps.passed += 1;
        } else {
            jumps.failed += 1;
            flag(j.event.time, ViolationKind::Jump, check.lhs, check.rhs);
        }
        if check.pass != j.check.pass {
            jumps.mismatched += 1;
        }
        if !literal.pass {
            jumps.sqrt_omega_failed += 1;
        }
    }

    listed.sort_by(|a, b| a.time.total_cmp(&b.time));
    let overall_pass = counts.is_empty() && rec.initial_in_relation;
    VerificationReport {
        samples: rec.len(),
        max_err,
        max_err_time,
        max_vg,
        max_u,
        max_xhat,
        max_uhat,
        max_uhatdot,
        initial_in_relation: rec.initial_in_relation,
        decay_violations,
        slack: limits.slack,
        jumps,
        violation_counts: counts,
        violations: listed,
        overall_pass,
    }
}

/// Decimal rendering with 15 significant digits, trailing zeros trimmed.
pub fn fmt15(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..15).contains(&exp) {
        return format!("{v:.14e}");
    }
    let decimals = (14 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn header_group(out: &mut Vec<String>, name: &str, count: usize) {
    out.extend((1..=count).map(|i| format!("{name}{i}")));
}

pub fn trajectory_header(dims: &Dims) -> String {
    let mut cols = vec!["t".to_string()];
    header_group(&mut cols, "x", dims.n);
    header_group(&mut cols, "xhat", dims.nr);
    header_group(&mut cols, "uhat", dims.mr);
    header_group(&mut cols, "uhatdot", dims.mr);
    header_group(&mut cols, "u", dims.m);
    header_group(&mut cols, "y", dims.p);
    header_group(&mut cols, "yhat", dims.p);
    cols.push("vg".into());
    cols.push("err".into());
    cols.join(",")
}

/// Writes one row per sample. With `stride > 1` only every stride-th sample,
/// the last sample and every jump sample are written.
pub fn write_trajectory_csv<W: Write>(rec: &TrajectoryRecord, mut w: W, stride: usize) -> io::Result<()> {
    let stride = stride.max(1);
    writeln!(w, "{}", trajectory_header(&rec.dims))?;
    let mut jump_samples = rec.jumps.iter().map(|j| j.sample).peekable();
    let mut line = String::new();
    for i in 0..rec.len() {
        let at_jump = jump_samples.peek() == Some(&i);
        if at_jump {
            jump_samples.next();
        }
        if !(i % stride == 0 || i + 1 == rec.len() || at_jump) {
            continue;
        }
        line.clear();
        line.push_str(&fmt15(rec.t[i]));
        for group in [rec.x_at(i), rec.xhat_at(i), rec.uhat_at(i), rec.uhatdot_at(i), rec.u_at(i), rec.y_at(i), rec.yhat_at(i)] {
            for v in group {
                line.push(',');
                line.push_str(&fmt15(*v));
            }
        }
        for v in [rec.vg[i], rec.err[i]] {
            line.push(',');
            line.push_str(&fmt15(v));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn write_jumps_csv<W: Write>(rec: &TrajectoryRecord, mut w: W) -> io::Result<()> {
    let mut cols = vec!["tau".to_string()];
    header_group(&mut cols, "delta", rec.dims.mr);
    cols.extend(["lhs", "rhs", "pass"].map(String::from));
    writeln!(w, "{}", cols.join(","))?;
    for j in &rec.jumps {
        let mut fields = vec![fmt15(j.event.time)];
        fields.extend(j.event.delta.iter().map(|v| fmt15(*v)));
        fields.push(fmt15(j.check.lhs));
        fields.push(fmt15(j.check.rhs));
        fields.push(j.check.pass.to_string());
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}
