//! Runtime pieces of the refinement: the simulation function V_g, the
//! interface u_g, relation membership, initial-state lifting and the jump
//! budget for discontinuous abstract inputs.

use serde::{Deserialize, Serialize};

use crate::numerics::norm2;
use crate::synthesis::RefinementGains;

/// A triple (x, x̂, û).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationPoint {
    pub x: Vec<f64>,
    pub xhat: Vec<f64>,
    pub uhat: Vec<f64>,
}

impl RelationPoint {
    pub fn new(x: &[f64], xhat: &[f64], uhat: &[f64]) -> Self {
        Self { x: x.to_vec(), xhat: xhat.to_vec(), uhat: uhat.to_vec() }
    }
}

/// e = x − P·x̂ − S·û
pub fn error_vector(point: &RelationPoint, gains: &RefinementGains) -> Vec<f64> {
    let mut e = vec![0.0; point.x.len()];
    gains.error_into(&point.x, &point.xhat, &point.uhat, &mut e);
    e
}

/// V_g(x, x̂, û) = √(eᵀ M e).
pub fn vg(point: &RelationPoint, gains: &RefinementGains) -> f64 {
    gains.weighted_norm(&error_vector(point, gains))
}

/// u_g(x, x̂, û) = K·e + Q·x̂ + R·û. Never clamped.
pub fn interface_u(point: &RelationPoint, gains: &RefinementGains) -> Vec<f64> {
    let e = error_vector(point, gains);
    let mut u = vec![0.0; gains.k.rows()];
    gains.interface_into(&e, &point.xhat, &point.uhat, &mut u);
    u
}

/// Interface output together with a flag raised when ‖u‖ exceeds the
/// admissible input ball.
pub fn interface_u_checked(point: &RelationPoint, gains: &RefinementGains, input_ball_radius: f64) -> (Vec<f64>, bool) {
    let u = interface_u(point, gains);
    let exceeds = norm2(&u) > input_ball_radius;
    (u, exceeds)
}

/// x₀ = P·x̂₀ + S·û₀, which places the triple at V_g = 0.
pub fn lift_initial(xhat0: &[f64], uhat0: &[f64], gains: &RefinementGains) -> Vec<f64> {
    let mut x0 = gains.p.mul_vec(xhat0);
    gains.s.mul_vec_acc(uhat0, &mut x0);
    x0
}

pub fn in_relation(point: &RelationPoint, gains: &RefinementGains, epsilon: f64) -> bool {
    vg(point, gains) <= epsilon
}

/// ω(τ) = e^{−a₁τ/2}·V₀ + (1 − e^{−a₁τ/2})·2r̄_max/a₁, the decay bound on
/// V_g at time τ after a start value V₀.
pub fn omega(tau: f64, vg0: f64, a1: f64, rbar_max: f64) -> f64 {
    let decay = (-0.5 * a1 * tau).exp();
    decay * vg0 + (1.0 - decay) * 2.0 * rbar_max / a1
}

/// How the jump budget is derived from ω(τ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpRule {
    /// (ε − ω)²: ω bounds V_g itself, so a jump of weighted size √(δᵀSᵀMSδ)
    /// keeps V_g ≤ ε by the triangle inequality.
    #[default]
    DecayBound,
    /// (ε − √ω)², treating ω as a bound on V_g². Strictly tighter than
    /// `DecayBound` whenever ω < 1 and vacuous once ω > ε².
    SqrtOmega,
}

impl JumpRule {
    /// Bound on V_g just before the jump implied by ω under this rule.
    pub fn pre_jump_bound(self, omega: f64) -> f64 {
        match self {
            Self::DecayBound => omega,
            Self::SqrtOmega => omega.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpCheck {
    /// δᵀ Sᵀ M S δ
    pub lhs: f64,
    /// squared remaining budget; zero when the budget is exhausted
    pub rhs: f64,
    pub omega: f64,
    pub pass: bool,
}

/// Jump admissibility under the default [`JumpRule::DecayBound`].
pub fn jump_admissible(delta: &[f64], tau: f64, vg0: f64, gains: &RefinementGains, epsilon: f64, rbar_max: f64) -> JumpCheck {
    jump_admissible_with(JumpRule::default(), delta, tau, vg0, gains, epsilon, rbar_max)
}

pub fn jump_admissible_with(
    rule: JumpRule,
    delta: &[f64],
    tau: f64,
    vg0: f64,
    gains: &RefinementGains,
    epsilon: f64,
    rbar_max: f64,
) -> JumpCheck {
    let s_delta = gains.s.mul_vec(delta);
    let lhs = gains.weighted_norm(&s_delta).powi(2);
    let w = omega(tau, vg0, gains.a1, rbar_max);
    let bound = rule.pre_jump_bound(w);
    if bound > epsilon {
        return JumpCheck { lhs, rhs: 0.0, omega: w, pass: false };
    }
    let rhs = (epsilon - bound).powi(2);
    JumpCheck { lhs, rhs, omega: w, pass: lhs <= rhs }
}
