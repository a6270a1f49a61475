//! The double-integrator tracking example: a position/velocity plant driven
//! through a single-integrator abstraction.

use crate::model::{
    AbstractInputPolicy, AbstractLinearSystem, BoxSet, CaseConfig, ConcreteLinearSystem, OperatingEnvelope, Region,
    ScenarioParams, Segment,
};
use crate::numerics::DenseMatrix;
use crate::synthesis::{input_bound, weight_from, RefinementGains};

/// Reference weight matrix for K = [−1.3298, −1.4108], a₁ = 0.5.
pub fn reference_weight() -> DenseMatrix {
    DenseMatrix::from_rows(&[vec![3.9544, 1.1805], vec![1.1805, 4.2262]]).expect("2x2")
}

pub fn reference_k() -> DenseMatrix {
    DenseMatrix::from_rows(&[vec![-1.3298, -1.4108]]).expect("1x2")
}

fn concrete(x0: [f64; 2]) -> ConcreteLinearSystem {
    ConcreteLinearSystem {
        a: DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).expect("2x2"),
        b: DenseMatrix::column(&[0.0, 1.0]),
        c: DenseMatrix::from_rows(&[vec![1.0, 0.0]]).expect("1x2"),
        input_ball_radius: 0.6,
        x0_box: BoxSet::point(&x0),
    }
}

fn single_integrator(xhat0: f64) -> AbstractLinearSystem {
    AbstractLinearSystem {
        a: DenseMatrix::zeros(1, 1),
        b: DenseMatrix::identity(1),
        c: DenseMatrix::identity(1),
        x0_box: BoxSet::point(&[xhat0]),
    }
}

/// Gain schedule û = −k̂·x̂ with k̂ stepping up as x̂ approaches zero.
pub fn switched_regions() -> Vec<Region> {
    [(30.0, 40.1, 0.001), (20.0, 30.0, 0.0013), (10.0, 20.0, 0.002), (0.0, 10.0, 0.004)]
        .into_iter()
        .map(|(lo, hi, k)| Region { lower: vec![lo], upper: vec![hi], gain: DenseMatrix::from_diag(&[k]) })
        .collect()
}

/// Switched-feedback regulation from x̂₀ = 40.1 towards the origin. The
/// horizon covers all three gain switches.
pub fn feedback_config() -> CaseConfig {
    let xhat0 = 40.1;
    let uhat0 = -0.001 * xhat0;
    CaseConfig {
        concrete: concrete([40.0, uhat0]),
        abstract_sys: single_integrator(xhat0),
        envelope: OperatingEnvelope { xhat_max: 40.1, uhat_max: 1.0, uhatdot_max: 0.0486 },
        policy: AbstractInputPolicy::SwitchedFeedback { regions: switched_regions() },
        scenario: ScenarioParams {
            epsilon: 0.5,
            a1: 0.5,
            k: reference_k(),
            m: Some(reference_weight()),
            horizon: 1000.0,
            step: 1e-3,
            x0: vec![40.0, uhat0],
            xhat0: vec![xhat0],
        },
    }
}

/// Open-loop ramp: û = 0.02·t up to t = 50, then held at 1.
pub fn ramp_config() -> CaseConfig {
    let xhat0 = 40.1;
    CaseConfig {
        concrete: concrete([40.0, 0.0]),
        abstract_sys: single_integrator(xhat0),
        envelope: OperatingEnvelope { xhat_max: 250.0, uhat_max: 1.0, uhatdot_max: 0.02 },
        policy: AbstractInputPolicy::OpenLoop {
            segments: vec![
                Segment { t_start: 0.0, t_end: Some(50.0), coeffs: vec![vec![0.0, 0.02]] },
                Segment { t_start: 50.0, t_end: None, coeffs: vec![vec![1.0]] },
            ],
        },
        scenario: ScenarioParams {
            epsilon: 0.5,
            a1: 0.5,
            k: reference_k(),
            m: Some(reference_weight()),
            horizon: 200.0,
            step: 1e-3,
            x0: vec![40.0, 0.0],
            xhat0: vec![xhat0],
        },
    }
}

/// The reference interface: P = [1; 0], Q = 0, S = [0; 1], R = 0 with the
/// reference weight, so that u_g = K·e.
pub fn reference_gains() -> RefinementGains {
    let w = weight_from(&reference_weight()).expect("reference weight is positive definite");
    let cfg = feedback_config();
    let (q, r) = (DenseMatrix::zeros(1, 1), DenseMatrix::zeros(1, 1));
    let s = DenseMatrix::column(&[0.0, 1.0]);
    let rbar3 = crate::synthesis::rbar3_of(&w.m_sqrt, &s);
    let (b, _) = input_bound(&reference_k(), &q, &r, w.lambda_min, 0.5, &cfg.envelope, cfg.concrete.input_ball_radius);
    RefinementGains {
        m: w.m,
        m_sqrt: w.m_sqrt,
        k: reference_k(),
        p: DenseMatrix::column(&[1.0, 0.0]),
        q,
        s,
        r,
        a1: 0.5,
        epsilon: 0.5,
        rbar1: 0.0,
        rbar2: 0.0,
        rbar3,
        lambda_min_m: w.lambda_min,
        input_bound: b,
        s_forced_zero: false,
    }
}
