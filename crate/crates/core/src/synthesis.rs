//! Computes the refinement parameter bundle from the system pair, the
//! stabilizing gain K and the decay rate a₁, and checks every hypothesis
//! the closeness guarantee rests on.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_pair, AbstractInputPolicy, AbstractLinearSystem, ConcreteLinearSystem, OperatingEnvelope, ScenarioParams,
};
use crate::numerics::{
    psd_sqrt, real_spectral_abscissa, solve_constrained, solve_sylvester, spectral_norm, sym_eig, DenseMatrix,
    LstsqOptions, NumericsError,
};
use crate::refine::{lift_initial, vg, RelationPoint};

/// Tolerance for the CP = Ĉ and CS = 0 equalities (Frobenius).
pub const EQUALITY_TOL: f64 = 1e-9;
/// Relative tolerance for the decay inequality and CᵀC ⪯ M.
pub const SPECTRAL_TOL: f64 = 1e-9;
/// Safety factor applied when scaling a synthesized weight above CᵀC.
const DOMINANCE_MARGIN: f64 = 1e-6;
const OPTIMALITY_TOL: f64 = 1e-9;
const RANDOM_RESTARTS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("A + BK is not Hurwitz (spectral abscissa {abscissa})")]
    NotStabilizing { abscissa: f64 },
    #[error("decay rate a1 = {a1} must be below {limit} for this gain")]
    DecayRateTooLarge { a1: f64, limit: f64 },
    #[error("weight matrix must be symmetric positive definite (min eigenvalue {min_eigenvalue:e})")]
    WeightNotPositiveDefinite { min_eigenvalue: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Everything that defines V_g and u_g, plus the derived constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementGains {
    #[serde(rename = "M")]
    pub m: DenseMatrix,
    #[serde(rename = "M_sqrt")]
    pub m_sqrt: DenseMatrix,
    #[serde(rename = "K")]
    pub k: DenseMatrix,
    #[serde(rename = "P")]
    pub p: DenseMatrix,
    #[serde(rename = "Q")]
    pub q: DenseMatrix,
    #[serde(rename = "S")]
    pub s: DenseMatrix,
    #[serde(rename = "R")]
    pub r: DenseMatrix,
    pub a1: f64,
    pub epsilon: f64,
    pub rbar1: f64,
    pub rbar2: f64,
    pub rbar3: f64,
    #[serde(rename = "lambda_min_M")]
    pub lambda_min_m: f64,
    pub input_bound: f64,
    /// Baseline mode: S pinned to zero, R fitted alone.
    #[serde(default)]
    pub s_forced_zero: bool,
}

impl RefinementGains {
    /// e = x − P·x̂ − S·û, written into `e`.
    pub fn error_into(&self, x: &[f64], xhat: &[f64], uhat: &[f64], e: &mut [f64]) {
        e.copy_from_slice(x);
        for i in 0..e.len() {
            let p_row = self.p.row(i);
            let s_row = self.s.row(i);
            let mut acc = 0.0;
            for (a, b) in p_row.iter().zip(xhat) {
                acc += a * b;
            }
            for (a, b) in s_row.iter().zip(uhat) {
                acc += a * b;
            }
            e[i] -= acc;
        }
    }

    /// √(eᵀ M e)
    pub fn weighted_norm(&self, e: &[f64]) -> f64 {
        let n = e.len();
        let mut acc = 0.0;
        for i in 0..n {
            let row = self.m.row(i);
            let mut dot = 0.0;
            for j in 0..n {
                dot += row[j] * e[j];
            }
            acc += e[i] * dot;
        }
        acc.max(0.0).sqrt()
    }

    /// u = K·e + Q·x̂ + R·û, written into `u`.
    pub fn interface_into(&self, e: &[f64], xhat: &[f64], uhat: &[f64], u: &mut [f64]) {
        self.k.mul_vec_into(e, u);
        self.q.mul_vec_acc(xhat, u);
        self.r.mul_vec_acc(uhat, u);
    }

    /// Replaces M and refreshes M^{1/2} and λ_min(M).
    pub fn set_weight(&mut self, m: DenseMatrix) -> Result<(), SynthesisError> {
        let w = weight_from(&m)?;
        self.m = w.m;
        self.m_sqrt = w.m_sqrt;
        self.lambda_min_m = w.lambda_min;
        Ok(())
    }

    pub fn dims(&self) -> GainDims {
        GainDims { n: self.p.rows(), nr: self.p.cols(), m: self.k.rows(), mr: self.s.cols() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GainDims {
    pub n: usize,
    pub nr: usize,
    pub m: usize,
    pub mr: usize,
}

#[derive(Debug, Clone)]
pub struct Weight {
    pub m: DenseMatrix,
    pub m_sqrt: DenseMatrix,
    pub lambda_min: f64,
}

/// Validates a user-supplied weight and derives M^{1/2} and λ_min(M).
pub fn weight_from(m: &DenseMatrix) -> Result<Weight, SynthesisError> {
    let eig = sym_eig(m)?;
    if !(eig.min() > 0.0) {
        return Err(SynthesisError::WeightNotPositiveDefinite { min_eigenvalue: eig.min() });
    }
    let m = m.symmetrized();
    Ok(Weight { m_sqrt: psd_sqrt(&m)?, lambda_min: eig.min(), m })
}

fn closed_loop(a: &DenseMatrix, b: &DenseMatrix, k: &DenseMatrix) -> DenseMatrix {
    a + &(b * k)
}

/// Supremum of admissible a₁: −2·max Re λ(A + BK).
pub fn max_feasible_a1(a: &DenseMatrix, b: &DenseMatrix, k: &DenseMatrix) -> Result<f64, SynthesisError> {
    let abscissa = real_spectral_abscissa(&closed_loop(a, b, k))?;
    if abscissa >= 0.0 {
        return Err(SynthesisError::NotStabilizing { abscissa });
    }
    Ok(-2.0 * abscissa)
}

/// Lyapunov weight for the shifted closed loop, scaled so that CᵀC ⪯ M.
///
/// Solves (A+BK+a₁/2·I)ᵀM₀ + M₀(A+BK+a₁/2·I) = −I and sets M = c·M₀ with
/// c = max(1, λ_max(M₀^{-1/2}CᵀCM₀^{-1/2})·(1 + 1e-6)). The decay
/// inequality is homogeneous in M, so scaling keeps it.
pub fn synthesize_m(
    a: &DenseMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    k: &DenseMatrix,
    a1: f64,
) -> Result<Weight, SynthesisError> {
    let limit = max_feasible_a1(a, b, k)?;
    if !(a1 < limit) {
        return Err(SynthesisError::DecayRateTooLarge { a1, limit });
    }
    let n = a.rows();
    let shifted = &closed_loop(a, b, k) + &DenseMatrix::identity(n).scale(0.5 * a1);
    let m0 = solve_sylvester(&shifted.transpose(), &shifted, &DenseMatrix::identity(n).scale(-1.0))?.symmetrized();

    let eig = sym_eig(&m0)?;
    if !(eig.min() > 0.0) {
        return Err(SynthesisError::WeightNotPositiveDefinite { min_eigenvalue: eig.min() });
    }
    let inv_sqrt = eig.reconstruct_with(|l| 1.0 / l.sqrt());
    let ctc = &c.transpose() * c;
    let pencil = (&(&inv_sqrt * &ctc) * &inv_sqrt).symmetrized();
    let ratio = sym_eig(&pencil)?.max();
    let scale = (ratio * (1.0 + DOMINANCE_MARGIN)).max(1.0);
    weight_from(&m0.scale(scale))
}

fn kron_eye_left(k: usize, a: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::identity(k).kron(a)
}

/// Objective and constraint operators for (P, Q) over [vec P; vec Q].
fn pq_problem(
    a: &DenseMatrix,
    ahat: &DenseMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    chat: &DenseMatrix,
    m_sqrt: &DenseMatrix,
) -> (DenseMatrix, DenseMatrix, DenseMatrix, DenseMatrix) {
    let (n, m, nr, p) = (a.rows(), b.cols(), ahat.rows(), c.rows());
    // vec(M½(AP − PÂ + BQ)) = (I⊗M½A − Âᵀ⊗M½)·vec P + (I⊗M½B)·vec Q
    let on_p = &kron_eye_left(nr, &(m_sqrt * a)) - &ahat.transpose().kron(m_sqrt);
    let on_q = kron_eye_left(nr, &(m_sqrt * b));
    let obj = on_p.hstack(&on_q);
    let obj_rhs = DenseMatrix::zeros(n * nr, 1);
    // vec(CP) = (I⊗C)·vec P
    let eq = kron_eye_left(nr, c).hstack(&DenseMatrix::zeros(p * nr, m * nr));
    let eq_rhs = DenseMatrix::column(&chat.vec());
    (obj, obj_rhs, eq, eq_rhs)
}

/// Minimizes ‖M^{1/2}(AP − PÂ + BQ)‖_F subject to CP = Ĉ; returns (P, Q, r̄₁)
/// with r̄₁ the spectral norm of the achieved weighted residual.
pub fn solve_pq(
    a: &DenseMatrix,
    ahat: &DenseMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    chat: &DenseMatrix,
    m_sqrt: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix, f64), SynthesisError> {
    let (n, m, nr) = (a.rows(), b.cols(), ahat.rows());
    let (obj, obj_rhs, eq, eq_rhs) = pq_problem(a, ahat, b, c, chat, m_sqrt);
    let sol = solve_constrained(&obj, &obj_rhs, Some(&eq), Some(&eq_rhs), LstsqOptions::default())?;
    let z = sol.solution.as_slice();
    let p = DenseMatrix::unvec(&z[..n * nr], n, nr);
    let q = DenseMatrix::unvec(&z[n * nr..], m, nr);
    let rbar1 = spectral_norm(&pq_residual(a, ahat, b, m_sqrt, &p, &q));
    Ok((p, q, rbar1))
}

/// M^{1/2}(AP − PÂ + BQ)
pub fn pq_residual(
    a: &DenseMatrix,
    ahat: &DenseMatrix,
    b: &DenseMatrix,
    m_sqrt: &DenseMatrix,
    p: &DenseMatrix,
    q: &DenseMatrix,
) -> DenseMatrix {
    m_sqrt * &(&(&(a * p) - &(p * ahat)) + &(b * q))
}

/// M^{1/2}(AS + BR − PB̂)
pub fn sr_residual(
    a: &DenseMatrix,
    b: &DenseMatrix,
    p: &DenseMatrix,
    bhat: &DenseMatrix,
    m_sqrt: &DenseMatrix,
    s: &DenseMatrix,
    r: &DenseMatrix,
) -> DenseMatrix {
    m_sqrt * &(&(&(a * s) + &(b * r)) - &(p * bhat))
}

fn sr_problem(
    a: &DenseMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    p: &DenseMatrix,
    bhat: &DenseMatrix,
    m_sqrt: &DenseMatrix,
    force_s_zero: bool,
) -> (DenseMatrix, DenseMatrix, Option<(DenseMatrix, DenseMatrix)>) {
    let (m, mr, pout) = (b.cols(), bhat.cols(), c.rows());
    let obj_rhs = DenseMatrix::column(&(m_sqrt * &(p * bhat)).vec());
    let on_r = kron_eye_left(mr, &(m_sqrt * b));
    if force_s_zero {
        return (on_r, obj_rhs, None);
    }
    let on_s = kron_eye_left(mr, &(m_sqrt * a));
    let obj = on_s.hstack(&on_r);
    let eq = kron_eye_left(mr, c).hstack(&DenseMatrix::zeros(pout * mr, m * mr));
    let eq_rhs = DenseMatrix::zeros(pout * mr, 1);
    (obj, obj_rhs, Some((eq, eq_rhs)))
}

/// Minimizes ‖M^{1/2}(AS + BR − PB̂)‖_F subject to CS = 0; returns
/// (S, R, r̄₂). With `force_s_zero`, S is pinned to zero and only R is
/// fitted, which reproduces the classical interface.
pub fn solve_sr(
    a: &DenseMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    p: &DenseMatrix,
    bhat: &DenseMatrix,
    m_sqrt: &DenseMatrix,
    force_s_zero: bool,
) -> Result<(DenseMatrix, DenseMatrix, f64), SynthesisError> {
    let (n, m, mr) = (a.rows(), b.cols(), bhat.cols());
    let (obj, obj_rhs, eq) = sr_problem(a, b, c, p, bhat, m_sqrt, force_s_zero);
    let sol = match &eq {
        Some((e, d)) => solve_constrained(&obj, &obj_rhs, Some(e), Some(d), LstsqOptions::default())?,
        None => solve_constrained(&obj, &obj_rhs, None, None, LstsqOptions::default())?,
    };
    let z = sol.solution.as_slice();
    let (s, r) = if force_s_zero {
        (DenseMatrix::zeros(n, mr), DenseMatrix::unvec(z, m, mr))
    } else {
        (DenseMatrix::unvec(&z[..n * mr], n, mr), DenseMatrix::unvec(&z[n * mr..], m, mr))
    };
    let rbar2 = spectral_norm(&sr_residual(a, b, p, bhat, m_sqrt, &s, &r));
    Ok((s, r, rbar2))
}

/// r̄₃ = ‖M^{1/2}S‖
pub fn rbar3_of(m_sqrt: &DenseMatrix, s: &DenseMatrix) -> f64 {
    spectral_norm(&(m_sqrt * s))
}

/// b = ‖K‖·ε/√λ_min(M) + ‖Q‖·x̂_max + ‖R‖·û_max, and whether b ≤ b_U.
pub fn input_bound(
    k: &DenseMatrix,
    q: &DenseMatrix,
    r: &DenseMatrix,
    lambda_min_m: f64,
    epsilon: f64,
    envelope: &OperatingEnvelope,
    input_ball_radius: f64,
) -> (f64, bool) {
    let b = spectral_norm(k) * epsilon / lambda_min_m.sqrt()
        + spectral_norm(q) * envelope.xhat_max
        + spectral_norm(r) * envelope.uhat_max;
    (b, b <= input_ball_radius)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub rbar_max: f64,
    /// 2·r̄_max/a₁, the level V_g decays towards
    pub decay_limit: f64,
    /// ε − 2·r̄_max/a₁
    pub margin: f64,
    pub pass: bool,
}

/// r̄_max over the envelope and the condition 2·r̄_max/a₁ ≤ ε.
pub fn feasibility(rbar1: f64, rbar2: f64, rbar3: f64, envelope: &OperatingEnvelope, a1: f64, epsilon: f64) -> Feasibility {
    let rbar_max = rbar1 * envelope.xhat_max + rbar2 * envelope.uhat_max + rbar3 * envelope.uhatdot_max;
    let decay_limit = 2.0 * rbar_max / a1;
    Feasibility { rbar_max, decay_limit, margin: epsilon - decay_limit, pass: decay_limit <= epsilon }
}

/// Full pipeline: weight (supplied or synthesized), (P, Q), (S, R), r̄'s and b.
pub fn synthesize(
    concrete: &ConcreteLinearSystem,
    abstract_sys: &AbstractLinearSystem,
    scenario: &ScenarioParams,
    envelope: &OperatingEnvelope,
    force_s_zero: bool,
) -> Result<RefinementGains, SynthesisError> {
    let weight = match &scenario.m {
        Some(m) => weight_from(m)?,
        None => synthesize_m(&concrete.a, &concrete.b, &concrete.c, &scenario.k, scenario.a1)?,
    };
    let (p, q, rbar1) = solve_pq(&concrete.a, &abstract_sys.a, &concrete.b, &concrete.c, &abstract_sys.c, &weight.m_sqrt)?;
    let (s, r, rbar2) = solve_sr(&concrete.a, &concrete.b, &concrete.c, &p, &abstract_sys.b, &weight.m_sqrt, force_s_zero)?;
    let rbar3 = rbar3_of(&weight.m_sqrt, &s);
    let (b, _) = input_bound(&scenario.k, &q, &r, weight.lambda_min, scenario.epsilon, envelope, concrete.input_ball_radius);
    Ok(RefinementGains {
        m: weight.m,
        m_sqrt: weight.m_sqrt,
        k: scenario.k.clone(),
        p,
        q,
        s,
        r,
        a1: scenario.a1,
        epsilon: scenario.epsilon,
        rbar1,
        rbar2,
        rbar3,
        lambda_min_m: weight.lambda_min,
        input_bound: b,
        s_forced_zero: force_s_zero,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// pass iff value ≤ tolerance
    AtMost,
    /// pass iff value ≥ tolerance
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub tolerance: f64,
    pub pass: bool,
}

impl ConditionRecord {
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.to_string(), value, bound: Bound::AtMost, tolerance, pass: value <= tolerance }
    }

    fn at_least(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.to_string(), value, bound: Bound::AtLeast, tolerance, pass: value >= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub records: Vec<ConditionRecord>,
    /// Derived constants worth surfacing alongside the checks.
    pub quantities: BTreeMap<String, f64>,
    pub overall_pass: bool,
}

impl ConditionReport {
    pub fn record(&self, name: &str) -> Option<&ConditionRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConditionRecord> {
        self.records.iter().filter(|r| !r.pass)
    }
}

/// Stable record names used in [`ConditionReport`].
pub mod records {
    pub const PAIR_DIMENSIONS: &str = "pair_dimensions";
    pub const CP_EQUALS_CHAT: &str = "cp_equals_chat";
    pub const CS_ZERO: &str = "cs_zero";
    pub const WEIGHT_SYMMETRIC: &str = "weight_symmetric";
    pub const WEIGHT_POSITIVE_DEFINITE: &str = "weight_positive_definite";
    pub const OUTPUT_DOMINATED: &str = "ctc_dominated_by_weight";
    pub const LYAPUNOV_DECAY: &str = "lyapunov_decay";
    pub const PQ_OPTIMALITY: &str = "pq_optimality";
    pub const SR_OPTIMALITY: &str = "sr_optimality";
    pub const RBAR_CONSISTENT: &str = "rbar_consistent";
    pub const INPUT_BOUND: &str = "input_bound";
    pub const FEASIBILITY: &str = "feasibility";
    pub const INITIAL_LIFT: &str = "initial_lift";
}

/// λ_max((A+BK)ᵀM + M(A+BK) + a₁M)
pub fn lyapunov_decay_margin(a: &DenseMatrix, b: &DenseMatrix, k: &DenseMatrix, m: &DenseMatrix, a1: f64) -> Result<f64, SynthesisError> {
    let cl = closed_loop(a, b, k);
    let lhs = &(&(&cl.transpose() * m) + &(m * &cl)) + &m.scale(a1);
    Ok(sym_eig(&lhs.symmetrized())?.max())
}

/// Objective gap of `current` against the re-solved optimum and against
/// random feasible perturbations. Returns the largest improvement found.
fn optimality_gap(
    obj: &DenseMatrix,
    obj_rhs: &DenseMatrix,
    eq: Option<(&DenseMatrix, &DenseMatrix)>,
    current: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<f64, SynthesisError> {
    let f = |z: &DenseMatrix| (&(obj * z) - obj_rhs).frobenius_norm();
    let z = DenseMatrix::column(current);
    let here = f(&z);
    let best = match eq {
        Some((e, d)) => solve_constrained(obj, obj_rhs, Some(e), Some(d), LstsqOptions::default())?,
        None => solve_constrained(obj, obj_rhs, None, None, LstsqOptions::default())?,
    };
    let mut gap = (here - best.objective).max(0.0);

    // perturbations inside the null space of the constraint
    let unknowns = current.len();
    let projector = match eq {
        Some((e, _)) => &DenseMatrix::identity(unknowns) - &(&crate::numerics::pinv(e, crate::numerics::DEFAULT_RANK_TOL) * e),
        None => DenseMatrix::identity(unknowns),
    };
    for _ in 0..RANDOM_RESTARTS {
        let dir: Vec<f64> = (0..unknowns).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scale = 10f64.powf(rng.gen_range(-6.0..0.0));
        let step = (&projector * &DenseMatrix::column(&dir)).scale(scale);
        gap = gap.max(here - f(&(&z + &step)));
    }
    Ok(gap / (1.0 + here))
}

/// Evaluates every hypothesis on a gains bundle. `policy`, when given,
/// supplies û₀ for the initial-lift check; otherwise û₀ = 0.
#[allow(clippy::too_many_arguments)]
pub fn check_assumption(
    concrete: &ConcreteLinearSystem,
    abstract_sys: &AbstractLinearSystem,
    gains: &RefinementGains,
    epsilon: f64,
    envelope: &OperatingEnvelope,
    policy: Option<&AbstractInputPolicy>,
    seed: u64,
) -> Result<ConditionReport, SynthesisError> {
    use records::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b, c) = (&concrete.a, &concrete.b, &concrete.c);
    let m = &gains.m;
    let mut recs = Vec::new();
    let mut quantities = BTreeMap::new();

    let pair = validate_pair(concrete, abstract_sys);
    recs.push(ConditionRecord::at_least(PAIR_DIMENSIONS, if pair.all_pass() { 1.0 } else { 0.0 }, 1.0));

    recs.push(ConditionRecord::at_most(CP_EQUALS_CHAT, (&(c * &gains.p) - &abstract_sys.c).frobenius_norm(), EQUALITY_TOL));
    recs.push(ConditionRecord::at_most(CS_ZERO, (c * &gains.s).frobenius_norm(), EQUALITY_TOL));

    let m_norm = spectral_norm(m);
    recs.push(ConditionRecord::at_most(WEIGHT_SYMMETRIC, m.asymmetry(), 1e-12 * m_norm));
    let sym_m = m.symmetrized();
    let eig_m = sym_eig(&sym_m)?;
    recs.push(ConditionRecord::at_least(WEIGHT_POSITIVE_DEFINITE, eig_m.min(), f64::MIN_POSITIVE));
    let dominance = sym_eig(&(&sym_m - &(&c.transpose() * c)).symmetrized())?.min();
    recs.push(ConditionRecord::at_least(OUTPUT_DOMINATED, dominance, -SPECTRAL_TOL * eig_m.max()));

    let decay = lyapunov_decay_margin(a, b, &gains.k, &sym_m, gains.a1)?;
    recs.push(ConditionRecord::at_most(LYAPUNOV_DECAY, decay, SPECTRAL_TOL * m_norm));

    // (P, Q) optimality against a re-solve and random restarts
    let (obj, obj_rhs, eq, eq_rhs) = pq_problem(a, &abstract_sys.a, b, c, &abstract_sys.c, &gains.m_sqrt);
    let mut z = gains.p.vec();
    z.extend(gains.q.vec());
    let pq_gap = optimality_gap(&obj, &obj_rhs, Some((&eq, &eq_rhs)), &z, &mut rng)?;
    recs.push(ConditionRecord::at_most(PQ_OPTIMALITY, pq_gap, OPTIMALITY_TOL));

    let (obj, obj_rhs, eq) = sr_problem(a, b, c, &gains.p, &abstract_sys.b, &gains.m_sqrt, gains.s_forced_zero);
    let z = if gains.s_forced_zero {
        gains.r.vec()
    } else {
        let mut z = gains.s.vec();
        z.extend(gains.r.vec());
        z
    };
    let sr_gap = optimality_gap(&obj, &obj_rhs, eq.as_ref().map(|(e, d)| (e, d)), &z, &mut rng)?;
    recs.push(ConditionRecord::at_most(SR_OPTIMALITY, sr_gap, OPTIMALITY_TOL));

    let r1 = spectral_norm(&pq_residual(a, &abstract_sys.a, b, &gains.m_sqrt, &gains.p, &gains.q));
    let r2 = spectral_norm(&sr_residual(a, b, &gains.p, &abstract_sys.b, &gains.m_sqrt, &gains.s, &gains.r));
    let r3 = rbar3_of(&gains.m_sqrt, &gains.s);
    let drift = (r1 - gains.rbar1).abs().max((r2 - gains.rbar2).abs()).max((r3 - gains.rbar3).abs());
    recs.push(ConditionRecord::at_most(RBAR_CONSISTENT, drift, 1e-9));

    let (b_val, _) = input_bound(&gains.k, &gains.q, &gains.r, eig_m.min(), epsilon, envelope, concrete.input_ball_radius);
    recs.push(ConditionRecord::at_most(INPUT_BOUND, b_val, concrete.input_ball_radius));

    let feas = feasibility(r1, r2, r3, envelope, gains.a1, epsilon);
    recs.push(ConditionRecord::at_most(FEASIBILITY, feas.decay_limit, epsilon));

    // every corner of X̂₀ must have a concrete partner in X₀ inside the
    // relation; the lift clamped onto X₀ is the witness
    let mut worst_lift = 0.0_f64;
    for xhat0 in abstract_sys.x0_box.corners() {
        let uhat0 = initial_abstract_input(policy, &xhat0, abstract_sys.m());
        let lift = lift_initial(&xhat0, &uhat0, gains);
        let witness = concrete.x0_box.clamp(&lift);
        worst_lift = worst_lift.max(vg(&RelationPoint::new(&witness, &xhat0, &uhat0), gains));
    }
    recs.push(ConditionRecord::at_most(INITIAL_LIFT, worst_lift, epsilon));

    if let Ok(limit) = max_feasible_a1(a, b, &gains.k) {
        quantities.insert("max_feasible_a1".into(), limit);
    }
    quantities.insert("rbar1".into(), r1);
    quantities.insert("rbar2".into(), r2);
    quantities.insert("rbar3".into(), r3);
    quantities.insert("rbar_max".into(), feas.rbar_max);
    quantities.insert("decay_limit".into(), feas.decay_limit);
    quantities.insert("feasibility_margin".into(), feas.margin);
    quantities.insert("input_bound".into(), b_val);
    quantities.insert("lambda_min_M".into(), eig_m.min());
    quantities.insert("epsilon".into(), epsilon);
    quantities.insert("a1".into(), gains.a1);

    let overall_pass = recs.iter().all(|r| r.pass);
    Ok(ConditionReport { records: recs, quantities, overall_pass })
}

/// û(t₀) the policy would issue at x̂₀.
pub fn initial_abstract_input(policy: Option<&AbstractInputPolicy>, xhat0: &[f64], mr: usize) -> Vec<f64> {
    match policy {
        Some(AbstractInputPolicy::OpenLoop { segments }) => {
            policy.and_then(|p| p.segment_at(0.0)).map_or_else(|| vec![0.0; mr], |i| segments[i].value(0.0))
        }
        Some(p @ AbstractInputPolicy::SwitchedFeedback { regions }) => match p.region_at(xhat0) {
            Some(i) => regions[i].gain.mul_vec(xhat0).into_iter().map(|v| -v).collect(),
            None => vec![0.0; mr],
        },
        None => vec![0.0; mr],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::casestudy;
    use proptest::prelude::{prop, prop_assert, proptest, ProptestConfig};

    fn m2(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn max_feasible_a1_examples() {
        let neg_i = DenseMatrix::identity(2).scale(-1.0);
        let zero_b = DenseMatrix::zeros(2, 1);
        let zero_k = DenseMatrix::zeros(1, 2);
        assert!((max_feasible_a1(&neg_i, &zero_b, &zero_k).unwrap() - 2.0).abs() < 1e-14);

        let cfg = casestudy::feedback_config();
        let limit = max_feasible_a1(&cfg.concrete.a, &cfg.concrete.b, &cfg.scenario.k).unwrap();
        assert!((limit - 1.4108).abs() < 1e-10);

        let err = max_feasible_a1(&cfg.concrete.a, &cfg.concrete.b, &zero_k).unwrap_err();
        assert!(matches!(err, SynthesisError::NotStabilizing { .. }));
    }

    #[test]
    fn scalar_weight_synthesis() {
        let one = |v: f64| DenseMatrix::from_diag(&[v]);
        let w = synthesize_m(&one(-1.0), &one(0.0), &one(1.0), &one(0.0), 1.0).unwrap();
        // (−1 + 0.5)·2·M₀ = −1 → M₀ = 1, then lifted just above CᵀC = 1
        assert!((w.m[(0, 0)] - 1.0).abs() < 1e-5);
        assert!(w.m[(0, 0)] >= 1.0);
    }

    #[test]
    fn case_study_weight_synthesis_satisfies_decay() {
        let cfg = casestudy::feedback_config();
        let w = synthesize_m(&cfg.concrete.a, &cfg.concrete.b, &cfg.concrete.c, &cfg.scenario.k, 0.5).unwrap();
        let margin = lyapunov_decay_margin(&cfg.concrete.a, &cfg.concrete.b, &cfg.scenario.k, &w.m, 0.5).unwrap();
        assert!(margin <= 0.0);
        let dom = sym_eig(&(&w.m - &(&cfg.concrete.c.transpose() * &cfg.concrete.c)).symmetrized()).unwrap().min();
        assert!(dom >= 0.0);
        assert!(matches!(
            synthesize_m(&cfg.concrete.a, &cfg.concrete.b, &cfg.concrete.c, &cfg.scenario.k, 1.5),
            Err(SynthesisError::DecayRateTooLarge { .. })
        ));
    }

    #[test]
    fn reference_weight_passes_decay_check() {
        let cfg = casestudy::feedback_config();
        let m = casestudy::reference_weight();
        let cl = closed_loop(&cfg.concrete.a, &cfg.concrete.b, &cfg.scenario.k);
        let test = &(&(&cl.transpose() * &m) + &(&m * &cl)) + &m.scale(0.5);
        assert!((test[(0, 0)] + 1.1625).abs() < 1e-4);
        assert!((test[(0, 1)] + 2.7408).abs() < 1e-4);
        assert!((test[(1, 1)] + 7.4505).abs() < 1e-4);
        let det = test[(0, 0)] * test[(1, 1)] - test[(0, 1)] * test[(1, 0)];
        assert!(det > 0.0 && test.trace() < 0.0);
        assert!((det - 1.149).abs() < 1e-3);
        let margin = lyapunov_decay_margin(&cfg.concrete.a, &cfg.concrete.b, &cfg.scenario.k, &m, 0.5).unwrap();
        assert!(margin < 0.0);
    }

    #[test]
    fn case_study_structure() {
        let cfg = casestudy::feedback_config();
        let w = weight_from(&casestudy::reference_weight()).unwrap();
        let (p, q, r1) = solve_pq(&cfg.concrete.a, &cfg.abstract_sys.a, &cfg.concrete.b, &cfg.concrete.c, &cfg.abstract_sys.c, &w.m_sqrt).unwrap();
        assert!(p.approx_eq(&DenseMatrix::column(&[1.0, 0.0]), 1e-12));
        assert!(q.approx_eq(&DenseMatrix::zeros(1, 1), 1e-12));
        assert!(r1 < 1e-9);
        let (s, r, r2) = solve_sr(&cfg.concrete.a, &cfg.concrete.b, &cfg.concrete.c, &p, &cfg.abstract_sys.b, &w.m_sqrt, false).unwrap();
        assert!(s.approx_eq(&DenseMatrix::column(&[0.0, 1.0]), 1e-12));
        assert!(r.approx_eq(&DenseMatrix::zeros(1, 1), 1e-12));
        assert!(r2 < 1e-9);
        let r3 = rbar3_of(&w.m_sqrt, &s);
        assert!((r3 - 4.2262_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn forced_zero_s_leaves_residual() {
        let cfg = casestudy::feedback_config();
        let w = weight_from(&casestudy::reference_weight()).unwrap();
        let p = DenseMatrix::column(&[1.0, 0.0]);
        let (s, r, r2) = solve_sr(&cfg.concrete.a, &cfg.concrete.b, &cfg.concrete.c, &p, &cfg.abstract_sys.b, &w.m_sqrt, true).unwrap();
        assert_eq!(s, DenseMatrix::zeros(2, 1));
        // 1-D least squares: minimize ‖M½([0;1]·r − [1;0])‖² = (r·e₂ − e₁)ᵀ M (r·e₂ − e₁)
        //   = M11 − 2r·M12 + r²·M22  →  r* = M12/M22
        let (m11, m12, m22) = (3.9544, 1.1805, 4.2262);
        let r_star = m12 / m22;
        assert!((r[(0, 0)] - r_star).abs() < 1e-12);
        let resid = (m11 - 2.0 * r_star * m12 + r_star * r_star * m22).sqrt();
        assert!((r2 - resid).abs() < 1e-10);
        assert!(r2 > 0.0);
    }

    #[test]
    fn zero_abstract_input_matrix_gives_zero_sr() {
        let cfg = casestudy::feedback_config();
        let w = weight_from(&casestudy::reference_weight()).unwrap();
        let p = DenseMatrix::column(&[1.0, 0.0]);
        let (s, r, r2) = solve_sr(&cfg.concrete.a, &cfg.concrete.b, &cfg.concrete.c, &p, &DenseMatrix::zeros(1, 1), &w.m_sqrt, false).unwrap();
        assert_eq!(s, DenseMatrix::zeros(2, 1));
        assert_eq!(r, DenseMatrix::zeros(1, 1));
        assert_eq!(r2, 0.0);
    }

    #[test]
    fn rbar3_examples() {
        assert_eq!(rbar3_of(&DenseMatrix::identity(2), &DenseMatrix::zeros(2, 1)), 0.0);
        assert!((rbar3_of(&DenseMatrix::identity(2), &DenseMatrix::column(&[0.0, 1.0])) - 1.0).abs() < 1e-15);
        let w = weight_from(&casestudy::reference_weight()).unwrap();
        let r3 = rbar3_of(&w.m_sqrt, &DenseMatrix::column(&[0.0, 1.0]));
        assert!((r3 - 2.05577).abs() < 1e-5);
    }

    #[test]
    fn input_bound_examples() {
        let cfg = casestudy::feedback_config();
        let env = cfg.envelope;
        let w = weight_from(&casestudy::reference_weight()).unwrap();
        let zero = DenseMatrix::zeros(1, 1);
        let (b, pass) = input_bound(&cfg.scenario.k, &zero, &zero, w.lambda_min, 0.5, &env, 0.6);
        assert!((b - 0.5690).abs() < 5e-4 && pass);
        let (b2, _) = input_bound(&cfg.scenario.k, &zero, &zero, w.lambda_min, 1.0, &env, 0.6);
        assert!((b2 - 2.0 * b).abs() < 1e-15);
        let (b0, _) = input_bound(&DenseMatrix::zeros(1, 2), &zero, &zero, w.lambda_min, 0.5, &env, 0.6);
        assert_eq!(b0, 0.0);
    }

    #[test]
    fn feasibility_examples() {
        let r3 = 4.2262_f64.sqrt();
        let env = OperatingEnvelope { xhat_max: 40.1, uhat_max: 1.0, uhatdot_max: 0.0486 };
        let f = feasibility(0.0, 0.0, r3, &env, 0.5, 0.5);
        assert!((f.rbar_max - r3 * 0.0486).abs() < 1e-15);
        assert!((f.rbar_max - 0.09991).abs() < 1e-5);
        assert!((f.decay_limit - 0.39964).abs() < 1e-4);
        assert!(f.pass);

        let f0 = feasibility(0.0, 0.0, 0.0, &env, 0.5, 0.5);
        assert!(f0.pass && f0.margin == 0.5);

        let fast = OperatingEnvelope { uhatdot_max: 0.07, ..env };
        let f = feasibility(0.0, 0.0, r3, &fast, 0.5, 0.5);
        assert!((f.decay_limit - 0.5756).abs() < 1e-4);
        assert!(!f.pass);
    }

    #[test]
    fn check_assumption_examples() {
        let cfg = casestudy::feedback_config();
        let gains = casestudy::reference_gains();
        let report = check_assumption(&cfg.concrete, &cfg.abstract_sys, &gains, 0.5, &cfg.envelope, Some(&cfg.policy), 7).unwrap();
        assert!(report.overall_pass, "{:?}", report.failures().collect::<Vec<_>>());

        let mut bad = gains.clone();
        bad.s = DenseMatrix::column(&[0.1, 1.0]);
        let report = check_assumption(&cfg.concrete, &cfg.abstract_sys, &bad, 0.5, &cfg.envelope, Some(&cfg.policy), 7).unwrap();
        assert!(!report.record(records::CS_ZERO).unwrap().pass);
        assert!(!report.overall_pass);

        let mut fast = gains.clone();
        fast.a1 = 1.5;
        let report = check_assumption(&cfg.concrete, &cfg.abstract_sys, &fast, 0.5, &cfg.envelope, Some(&cfg.policy), 7).unwrap();
        assert!(!report.record(records::LYAPUNOV_DECAY).unwrap().pass);
    }

    #[test]
    fn decay_record_is_scale_invariant() {
        let cfg = casestudy::feedback_config();
        for c in [0.5, 2.0, 10.0] {
            let m = casestudy::reference_weight().scale(c);
            let margin = lyapunov_decay_margin(&cfg.concrete.a, &cfg.concrete.b, &cfg.scenario.k, &m, 0.5).unwrap();
            assert!(margin <= SPECTRAL_TOL * spectral_norm(&m));
        }
    }

    #[test]
    fn resolving_is_idempotent() {
        let cfg = casestudy::feedback_config();
        let g = synthesize(&cfg.concrete, &cfg.abstract_sys, &cfg.scenario, &cfg.envelope, false).unwrap();
        let (p, q, _) = solve_pq(&cfg.concrete.a, &cfg.abstract_sys.a, &cfg.concrete.b, &cfg.concrete.c, &cfg.abstract_sys.c, &g.m_sqrt).unwrap();
        let (s, r, _) = solve_sr(&cfg.concrete.a, &cfg.concrete.b, &cfg.concrete.c, &p, &cfg.abstract_sys.b, &g.m_sqrt, false).unwrap();
        assert!(p.approx_eq(&g.p, 1e-10) && q.approx_eq(&g.q, 1e-10) && s.approx_eq(&g.s, 1e-10) && r.approx_eq(&g.r, 1e-10));
    }

    #[test]
    fn self_abstraction_is_identity_refinement() {
        let a = m2(&[&[0.3, 1.0, -0.2], &[-1.0, -0.5, 0.4], &[0.2, 0.1, -1.1]]);
        let b = m2(&[&[0.0], &[1.0], &[0.5]]);
        let c = m2(&[&[1.0, 0.0, 0.3]]);
        let w = weight_from(&DenseMatrix::from_diag(&[2.0, 1.0, 3.0])).unwrap();
        let (p, q, r1) = solve_pq(&a, &a, &b, &c, &c, &w.m_sqrt).unwrap();
        assert!(p.approx_eq(&DenseMatrix::identity(3), 1e-8), "{p:?}");
        assert!(q.approx_eq(&DenseMatrix::zeros(1, 3), 1e-8));
        assert!(r1 < 1e-9);
    }

    /// Independent oracle: eliminate the constrained entry of P by hand and
    /// minimize the remaining convex quadratic by exact coordinate line
    /// searches from several random starts.
    fn brute_force_rbar1(a: &DenseMatrix, ahat: f64, b: &DenseMatrix, c: &[f64; 3], chat: f64, m_sqrt: &DenseMatrix, seed: u64) -> f64 {
        let objective = |free: &[f64; 3]| -> f64 {
            // P = [p1, p2, p3]ᵀ with p1 fixed by c·P = ĉ (c1 ≠ 0)
            let (p2, p3, q) = (free[0], free[1], free[2]);
            let p1 = (chat - c[1] * p2 - c[2] * p3) / c[0];
            let p = [p1, p2, p3];
            let mut resid = [0.0; 3];
            for i in 0..3 {
                resid[i] = (0..3).map(|j| a[(i, j)] * p[j]).sum::<f64>() - p[i] * ahat + b[(i, 0)] * q;
            }
            let w: Vec<f64> = (0..3).map(|i| (0..3).map(|j| m_sqrt[(i, j)] * resid[j]).sum()).collect();
            w.iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = f64::INFINITY;
        for _ in 0..5 {
            let mut x = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            for _ in 0..20000 {
                for k in 0..3 {
                    // f² is quadratic along each coordinate; fit through three points
                    let f2 = |t: f64| {
                        let mut y = x;
                        y[k] = t;
                        objective(&y).powi(2)
                    };
                    let (t0, h) = (x[k], 1.0);
                    let (fm, f0, fp) = (f2(t0 - h), f2(t0), f2(t0 + h));
                    let curv = fm - 2.0 * f0 + fp;
                    if curv > 1e-300 {
                        x[k] = t0 - h * (fp - fm) / (2.0 * curv);
                    }
                }
            }
            best = best.min(objective(&x));
        }
        best
    }

    #[test]
    fn random_pair_rbar1_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..5 {
            let a = DenseMatrix::new(3, 3, (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let b = DenseMatrix::new(3, 1, (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let c = [1.0 + rng.gen_range(0.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let ahat = rng.gen_range(-1.0..1.0);
            let chat = rng.gen_range(0.5..2.0);
            let l = DenseMatrix::new(3, 3, (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let m = (&(&l * &l.transpose()) + &DenseMatrix::identity(3)).symmetrized();
            let w = weight_from(&m).unwrap();
            let (_, _, r1) = solve_pq(&a, &DenseMatrix::from_diag(&[ahat]), &b, &DenseMatrix::new(1, 3, c.to_vec()).unwrap(), &DenseMatrix::from_diag(&[chat]), &w.m_sqrt).unwrap();
            let oracle = brute_force_rbar1(&a, ahat, &b, &c, chat, &w.m_sqrt, trial);
            assert!((r1 - oracle).abs() <= 1e-6, "trial {trial}: {r1} vs {oracle}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn feasibility_is_monotone(r in prop::collection::vec(0.0f64..2.0, 3), env in prop::collection::vec(0.0f64..2.0, 3), bump in 0.0f64..1.0, which in 0usize..3, eps in 0.1f64..1.0) {
            let base = OperatingEnvelope { xhat_max: env[0], uhat_max: env[1], uhatdot_max: env[2] };
            let mut bigger = base;
            match which {
                0 => bigger.xhat_max += bump,
                1 => bigger.uhat_max += bump,
                _ => bigger.uhatdot_max += bump,
            }
            let f0 = feasibility(r[0], r[1], r[2], &base, 0.5, eps);
            let f1 = feasibility(r[0], r[1], r[2], &bigger, 0.5, eps);
            prop_assert!(f1.rbar_max >= f0.rbar_max);
            let f2 = feasibility(r[0], r[1], r[2], &base, 0.5, eps + bump);
            prop_assert!(f2.margin >= f0.margin);
        }
    }

    #[test]
    fn input_bound_dominates_random_interface_outputs() {
        let cfg = casestudy::feedback_config();
        let mut g = casestudy::reference_gains();
        g.q = DenseMatrix::from_diag(&[0.01]);
        g.r = DenseMatrix::from_diag(&[0.2]);
        let env = cfg.envelope;
        let (b, _) = input_bound(&g.k, &g.q, &g.r, g.lambda_min_m, 0.5, &env, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let xhat = [rng.gen_range(-env.xhat_max..=env.xhat_max)];
            let uhat = [rng.gen_range(-env.uhat_max..=env.uhat_max)];
            let dir = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let scale = rng.gen_range(0.0..=1.0) * 0.5 / g.weighted_norm(&dir);
            let e = [dir[0] * scale, dir[1] * scale];
            let mut u = [0.0];
            g.interface_into(&e, &xhat, &uhat, &mut u);
            assert!(u[0].abs() <= b + 1e-9);
        }
    }
}
