//! System, envelope and input-policy data model plus JSON configuration
//! ingestion.
//!
//! A configuration is a single JSON document:
//!
//! ```json
//! {
//!   "concrete": { "A": [[0,1],[0,0]], "B": [[0],[1]], "C": [[1,0]],
//!                 "input_ball_radius": 0.6,
//!                 "x0_box": { "lower": [40, -0.0401], "upper": [40, -0.0401] } },
//!   "abstract": { "A": [[0]], "B": [[1]], "C": [[1]],
//!                 "x0_box": { "lower": [40.1], "upper": [40.1] } },
//!   "envelope": { "xhat_max": 40.1, "uhat_max": 1, "uhatdot_max": 0.0486 },
//!   "policy":   { "kind": "open_loop",
//!                 "segments": [ { "t_start": 0, "t_end": 50, "coeffs": [[0, 0.02]] } ] },
//!   "scenario": { "epsilon": 0.5, "a1": 0.5, "K": [[-1.3298, -1.4108]],
//!                 "horizon": 200, "step": 0.001, "x0": [40, 0], "xhat0": [40.1] }
//! }
//! ```
//!
//! Unknown keys are rejected everywhere. `scenario.epsilon` defaults to 0.5
//! and `scenario.step` to 1e-3. `scenario.M` may supply the weight matrix
//! instead of having it synthesized.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::DenseMatrix;

pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_STEP: f64 = 1e-3;
/// Highest polynomial degree allowed in an open-loop segment.
pub const MAX_SEGMENT_DEGREE: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("dimension mismatch in `{field}`: {detail}")]
    DimensionMismatch { field: String, detail: String },
    #[error("invariant violated in `{field}`: {detail}")]
    InvariantViolation { field: String, detail: String },
}

impl ConfigError {
    fn dims(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Self::DimensionMismatch { field: field.into(), detail: detail.into() }
    }

    fn invariant(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Self::InvariantViolation { field: field.into(), detail: detail.into() }
    }
}

/// Axis-aligned box; a point is a box with `lower == upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSet {
    pub fn point(x: &[f64]) -> Self {
        Self { lower: x.to_vec(), upper: x.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect()
    }

    /// All 2^d corners (duplicates collapse for degenerate dimensions).
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut out: Vec<Vec<f64>> = Vec::new();
        for mask in 0..(1usize << d) {
            let c: Vec<f64> = (0..d).map(|i| if mask >> i & 1 == 1 { self.upper[i] } else { self.lower[i] }).collect();
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    fn validate(&self, field: &str, dim: usize) -> Result<(), ConfigError> {
        if self.lower.len() != dim || self.upper.len() != dim {
            return Err(ConfigError::dims(
                field,
                format!("expected {dim} bounds, got lower={} upper={}", self.lower.len(), self.upper.len()),
            ));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(ConfigError::invariant(field, format!("bound {i}: lower {lo} > upper {hi} or non-finite")));
            }
        }
        Ok(())
    }
}

/// ẋ = Ax + Bu, y = Cx, with admissible inputs containing the ball of
/// radius `input_ball_radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcreteLinearSystem {
    #[serde(rename = "A")]
    pub a: DenseMatrix,
    #[serde(rename = "B")]
    pub b: DenseMatrix,
    #[serde(rename = "C")]
    pub c: DenseMatrix,
    pub input_ball_radius: f64,
    pub x0_box: BoxSet,
}

impl ConcreteLinearSystem {
    pub fn n(&self) -> usize {
        self.a.rows()
    }
    pub fn m(&self) -> usize {
        self.b.cols()
    }
    pub fn p(&self) -> usize {
        self.c.rows()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.a.rows();
        if !self.a.is_square() {
            return Err(ConfigError::dims("concrete.A", format!("must be square, got {:?}", self.a.shape())));
        }
        if self.b.rows() != n {
            return Err(ConfigError::dims("concrete.B", format!("expected {n} rows, got {}", self.b.rows())));
        }
        if self.c.cols() != n {
            return Err(ConfigError::dims("concrete.C", format!("expected {n} columns, got {}", self.c.cols())));
        }
        if !(self.input_ball_radius > 0.0 && self.input_ball_radius.is_finite()) {
            return Err(ConfigError::invariant("concrete.input_ball_radius", "must be positive and finite"));
        }
        self.x0_box.validate("concrete.x0_box", n)
    }
}

/// x̂̇ = Âx̂ + B̂û, ŷ = Ĉx̂.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractLinearSystem {
    #[serde(rename = "A")]
    pub a: DenseMatrix,
    #[serde(rename = "B")]
    pub b: DenseMatrix,
    #[serde(rename = "C")]
    pub c: DenseMatrix,
    pub x0_box: BoxSet,
}

impl AbstractLinearSystem {
    pub fn n(&self) -> usize {
        self.a.rows()
    }
    pub fn m(&self) -> usize {
        self.b.cols()
    }
    pub fn p(&self) -> usize {
        self.c.rows()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.a.rows();
        if !self.a.is_square() {
            return Err(ConfigError::dims("abstract.A", format!("must be square, got {:?}", self.a.shape())));
        }
        if self.b.rows() != n {
            return Err(ConfigError::dims("abstract.B", format!("expected {n} rows, got {}", self.b.rows())));
        }
        if self.c.cols() != n {
            return Err(ConfigError::dims("abstract.C", format!("expected {n} columns, got {}", self.c.cols())));
        }
        self.x0_box.validate("abstract.x0_box", n)
    }
}

/// Suprema of ‖x̂‖, ‖û‖ and ‖û̇‖ (between jumps) over the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingEnvelope {
    pub xhat_max: f64,
    pub uhat_max: f64,
    pub uhatdot_max: f64,
}

impl OperatingEnvelope {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [("xhat_max", self.xhat_max), ("uhat_max", self.uhat_max), ("uhatdot_max", self.uhatdot_max)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::invariant(format!("envelope.{name}"), "must be nonnegative and finite"));
            }
        }
        Ok(())
    }
}

/// One open-loop piece: û_i(t) = Σ_k coeffs[i][k]·t^k on [t_start, t_end).
/// `t_end` may be omitted on the last segment to leave it open-ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub t_start: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    pub coeffs: Vec<Vec<f64>>,
}

impl Segment {
    pub fn end(&self) -> f64 {
        self.t_end.unwrap_or(f64::INFINITY)
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck)).collect()
    }

    pub fn derivative(&self, t: f64) -> Vec<f64> {
        self.coeffs
            .iter()
            .map(|c| c.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, &ck)| acc * t + k as f64 * ck))
            .collect()
    }
}

/// Switched linear feedback: on `[lower, upper]`, û = −gain·x̂.
/// Boxes are closed; where two touch, the one listed first wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub gain: DenseMatrix,
}

impl Region {
    pub fn contains(&self, xhat: &[f64]) -> bool {
        xhat.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| lo <= v && v <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AbstractInputPolicy {
    OpenLoop { segments: Vec<Segment> },
    SwitchedFeedback { regions: Vec<Region> },
}

impl AbstractInputPolicy {
    /// Index of the open-loop segment active at `t` (right-continuous).
    pub fn segment_at(&self, t: f64) -> Option<usize> {
        match self {
            Self::OpenLoop { segments } => segments.iter().rposition(|s| s.t_start <= t && t < s.end()).or_else(|| {
                // the closing instant of a bounded last segment still belongs to it
                segments.last().filter(|s| t == s.end()).map(|_| segments.len() - 1)
            }),
            Self::SwitchedFeedback { .. } => None,
        }
    }

    /// Index of the first region containing `xhat`.
    pub fn region_at(&self, xhat: &[f64]) -> Option<usize> {
        match self {
            Self::SwitchedFeedback { regions } => regions.iter().position(|r| r.contains(xhat)),
            Self::OpenLoop { .. } => None,
        }
    }

    /// Open-loop breakpoints strictly inside (t0, t1).
    pub fn breakpoints_within(&self, t0: f64, t1: f64) -> Vec<f64> {
        match self {
            Self::OpenLoop { segments } => {
                segments.iter().skip(1).map(|s| s.t_start).filter(|&b| b > t0 && b < t1).collect()
            }
            Self::SwitchedFeedback { .. } => Vec::new(),
        }
    }

    fn validate(&self, nr: usize, mr: usize, horizon: f64, xhat0: &[f64], abs_box: &BoxSet) -> Result<(), ConfigError> {
        match self {
            Self::OpenLoop { segments } => {
                if segments.is_empty() {
                    if horizon > 0.0 {
                        return Err(ConfigError::invariant("policy.segments", "no segments cover the horizon"));
                    }
                    return Ok(());
                }
                for (i, s) in segments.iter().enumerate() {
                    let field = format!("policy.segments[{i}]");
                    if s.coeffs.len() != mr {
                        return Err(ConfigError::dims(
                            format!("{field}.coeffs"),
                            format!("expected {mr} channels, got {}", s.coeffs.len()),
                        ));
                    }
                    if let Some(c) = s.coeffs.iter().find(|c| c.is_empty() || c.len() > MAX_SEGMENT_DEGREE + 1) {
                        return Err(ConfigError::invariant(
                            format!("{field}.coeffs"),
                            format!("each channel needs 1..={} coefficients, got {}", MAX_SEGMENT_DEGREE + 1, c.len()),
                        ));
                    }
                    if s.coeffs.iter().flatten().any(|v| !v.is_finite()) || !s.t_start.is_finite() {
                        return Err(ConfigError::invariant(field, "non-finite value"));
                    }
                    if !(s.end() > s.t_start) {
                        return Err(ConfigError::invariant(field, "t_end must exceed t_start"));
                    }
                    if s.t_end.is_none() && i + 1 != segments.len() {
                        return Err(ConfigError::invariant(field, "only the last segment may omit t_end"));
                    }
                    if let Some(next) = segments.get(i + 1) {
                        if next.t_start != s.end() {
                            return Err(ConfigError::invariant(
                                format!("policy.segments[{}]", i + 1),
                                format!("starts at {} but previous ends at {} (gap or overlap)", next.t_start, s.end()),
                            ));
                        }
                    }
                }
                if segments[0].t_start > 0.0 {
                    return Err(ConfigError::invariant("policy.segments[0]", "coverage gap before t = 0"));
                }
                let last = segments.last().expect("non-empty");
                if last.end() < horizon {
                    return Err(ConfigError::invariant(
                        "policy.segments",
                        format!("coverage ends at {} before horizon {horizon}", last.end()),
                    ));
                }
                Ok(())
            }
            Self::SwitchedFeedback { regions } => {
                if regions.is_empty() {
                    return Err(ConfigError::invariant("policy.regions", "at least one region required"));
                }
                for (i, r) in regions.iter().enumerate() {
                    let field = format!("policy.regions[{i}]");
                    BoxSet { lower: r.lower.clone(), upper: r.upper.clone() }.validate(&field, nr)?;
                    if r.gain.shape() != (mr, nr) {
                        return Err(ConfigError::dims(
                            format!("{field}.gain"),
                            format!("expected {mr}x{nr}, got {:?}", r.gain.shape()),
                        ));
                    }
                }
                for i in 0..regions.len() {
                    for j in (i + 1)..regions.len() {
                        if interiors_overlap(&regions[i], &regions[j]) {
                            return Err(ConfigError::invariant(
                                "policy.regions",
                                format!("regions {i} and {j} have overlapping interiors"),
                            ));
                        }
                    }
                }
                if let Some(cell) = uncovered_cell(regions, nr) {
                    return Err(ConfigError::invariant(
                        "policy.regions",
                        format!("regions leave a gap around {cell:?}"),
                    ));
                }
                if self.region_at(xhat0).is_none() {
                    return Err(ConfigError::invariant("scenario.xhat0", "outside every policy region"));
                }
                if let Some(c) = abs_box.corners().into_iter().find(|c| self.region_at(c).is_none()) {
                    return Err(ConfigError::invariant("abstract.x0_box", format!("corner {c:?} outside every policy region")));
                }
                Ok(())
            }
        }
    }
}

fn interiors_overlap(a: &Region, b: &Region) -> bool {
    (0..a.lower.len()).all(|d| a.lower[d].max(b.lower[d]) < a.upper[d].min(b.upper[d]))
}

/// Checks that the union of boxes fills its bounding hull exactly by
/// probing the midpoint of every elementary cell of the coordinate grid.
fn uncovered_cell(regions: &[Region], nr: usize) -> Option<Vec<f64>> {
    let mut cuts: Vec<Vec<f64>> = Vec::with_capacity(nr);
    for d in 0..nr {
        let mut c: Vec<f64> = regions.iter().flat_map(|r| [r.lower[d], r.upper[d]]).collect();
        c.sort_by(f64::total_cmp);
        c.dedup();
        cuts.push(c);
    }
    // per dimension: cell midpoints, or the single coordinate if degenerate
    let probes: Vec<Vec<f64>> =
        cuts.iter().map(|c| if c.len() == 1 { c.clone() } else { c.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect() }).collect();
    let total: usize = probes.iter().map(Vec::len).product();
    let mut idx = vec![0usize; nr];
    for _ in 0..total {
        let point: Vec<f64> = (0..nr).map(|d| probes[d][idx[d]]).collect();
        if !regions.iter().any(|r| r.contains(&point)) {
            return Some(point);
        }
        for d in 0..nr {
            idx[d] += 1;
            if idx[d] < probes[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpCause {
    SegmentBoundary,
    RegionCrossing,
}

/// Discontinuity of the abstract input: δ̂ = û(τ⁺) − û(τ⁻).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub delta: Vec<f64>,
    pub cause: JumpCause,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_step() -> f64 {
    DEFAULT_STEP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub a1: f64,
    #[serde(rename = "K")]
    pub k: DenseMatrix,
    /// Optional user-supplied weight; synthesized when absent.
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<DenseMatrix>,
    pub horizon: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    pub x0: Vec<f64>,
    pub xhat0: Vec<f64>,
}

/// A fully parsed and validated configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub concrete: ConcreteLinearSystem,
    #[serde(rename = "abstract")]
    pub abstract_sys: AbstractLinearSystem,
    pub envelope: OperatingEnvelope,
    pub policy: AbstractInputPolicy,
    pub scenario: ScenarioParams,
}

impl CaseConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.concrete.validate()?;
        self.abstract_sys.validate()?;
        self.envelope.validate()?;
        let (n, m, p) = (self.concrete.n(), self.concrete.m(), self.concrete.p());
        let (nr, mr) = (self.abstract_sys.n(), self.abstract_sys.m());
        if self.abstract_sys.p() != p {
            return Err(ConfigError::dims("abstract.C", format!("expected {p} output rows, got {}", self.abstract_sys.p())));
        }
        if nr > n {
            return Err(ConfigError::dims("abstract.A", format!("abstract order {nr} exceeds concrete order {n}")));
        }
        if mr > m {
            return Err(ConfigError::dims("abstract.B", format!("abstract inputs {mr} exceed concrete inputs {m}")));
        }

        let s = &self.scenario;
        if !(s.epsilon > 0.0 && s.epsilon.is_finite()) {
            return Err(ConfigError::invariant("scenario.epsilon", "must be positive"));
        }
        if !(s.a1 > 0.0 && s.a1.is_finite()) {
            return Err(ConfigError::invariant("scenario.a1", "must be positive"));
        }
        if s.k.shape() != (m, n) {
            return Err(ConfigError::dims("scenario.K", format!("expected {m}x{n}, got {:?}", s.k.shape())));
        }
        if let Some(weight) = &s.m {
            if weight.shape() != (n, n) {
                return Err(ConfigError::dims("scenario.M", format!("expected {n}x{n}, got {:?}", weight.shape())));
            }
        }
        if !(s.horizon >= 0.0 && s.horizon.is_finite()) {
            return Err(ConfigError::invariant("scenario.horizon", "must be nonnegative and finite"));
        }
        if !(s.step > 0.0 && s.step.is_finite()) {
            return Err(ConfigError::invariant("scenario.step", "must be positive"));
        }
        if s.x0.len() != n {
            return Err(ConfigError::dims("scenario.x0", format!("expected {n} entries, got {}", s.x0.len())));
        }
        if s.xhat0.len() != nr {
            return Err(ConfigError::dims("scenario.xhat0", format!("expected {nr} entries, got {}", s.xhat0.len())));
        }
        if s.x0.iter().chain(&s.xhat0).any(|v| !v.is_finite()) {
            return Err(ConfigError::invariant("scenario", "initial state must be finite"));
        }
        self.policy.validate(nr, mr, s.horizon, &s.xhat0, &self.abstract_sys.x0_box)
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(document: &str) -> Result<CaseConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let config: CaseConfig = serde_path_to_error::deserialize(de).map_err(|err| {
        let mut path = err.path().to_string();
        let message = err.inner().to_string();
        // name the absent field itself rather than its parent
        if let Some(field) = missing_field(&message) {
            path = if path == "." { field.to_string() } else { format!("{path}.{field}") };
        }
        ConfigError::Schema { path, message }
    })?;
    config.validate()?;
    Ok(config)
}

fn missing_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}

pub fn emit_config(config: &CaseConfig) -> String {
    serde_json::to_string_pretty(config).expect("configuration serializes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairValidation {
    pub state_order_ok: bool,
    pub input_count_ok: bool,
    pub outputs_match: bool,
}

impl PairValidation {
    pub fn all_pass(&self) -> bool {
        self.state_order_ok && self.input_count_ok && self.outputs_match
    }
}

/// n_r ≤ n, m_r ≤ m and a shared output space.
pub fn validate_pair(concrete: &ConcreteLinearSystem, abstract_sys: &AbstractLinearSystem) -> PairValidation {
    PairValidation {
        state_order_ok: abstract_sys.n() <= concrete.n(),
        input_count_ok: abstract_sys.m() <= concrete.m(),
        outputs_match: abstract_sys.p() == concrete.p(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::casestudy;

    fn ramp_json() -> String {
        emit_config(&casestudy::ramp_config())
    }

    fn edit(doc: &str, f: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(doc).unwrap();
        f(&mut v);
        v.to_string()
    }

    #[test]
    fn parses_case_study_systems() {
        let cfg = parse_config(&ramp_json()).unwrap();
        assert_eq!((cfg.concrete.n(), cfg.concrete.m(), cfg.concrete.p()), (2, 1, 1));
        assert_eq!((cfg.abstract_sys.n(), cfg.abstract_sys.m()), (1, 1));
        assert_eq!(cfg.concrete.a.to_rows(), vec![vec![0.0, 1.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn wrong_b_rows_names_the_field() {
        let doc = edit(&ramp_json(), |v| v["concrete"]["B"] = serde_json::json!([[0.0], [1.0], [2.0]]));
        match parse_config(&doc) {
            Err(ConfigError::DimensionMismatch { field, .. }) => assert_eq!(field, "concrete.B"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_segments_with_horizon_is_a_gap() {
        let doc = edit(&ramp_json(), |v| v["policy"]["segments"] = serde_json::json!([]));
        assert!(matches!(parse_config(&doc), Err(ConfigError::InvariantViolation { .. })));
        // zero horizon needs no coverage
        let doc = edit(&doc, |v| v["scenario"]["horizon"] = serde_json::json!(0.0));
        assert!(parse_config(&doc).is_ok());
    }

    #[test]
    fn missing_gain_reports_its_path() {
        let doc = edit(&ramp_json(), |v| {
            v["scenario"].as_object_mut().unwrap().remove("K");
        });
        match parse_config(&doc) {
            Err(ConfigError::Schema { path, .. }) => assert_eq!(path, "scenario.K"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = edit(&ramp_json(), |v| v["envelope"]["extra"] = serde_json::json!(1.0));
        assert!(matches!(parse_config(&doc), Err(ConfigError::Schema { .. })));
        let doc = edit(&ramp_json(), |v| v["policy"]["bogus"] = serde_json::json!(1.0));
        assert!(matches!(parse_config(&doc), Err(ConfigError::Schema { .. })));
        let doc = edit(&ramp_json(), |v| v["policy"]["kind"] = serde_json::json!("mystery"));
        assert!(matches!(parse_config(&doc), Err(ConfigError::Schema { .. })));
    }

    #[test]
    fn wrong_type_has_a_path() {
        let doc = edit(&ramp_json(), |v| v["scenario"]["a1"] = serde_json::json!("fast"));
        match parse_config(&doc) {
            Err(ConfigError::Schema { path, .. }) => assert_eq!(path, "scenario.a1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn defaults_apply() {
        let doc = edit(&ramp_json(), |v| {
            let s = v["scenario"].as_object_mut().unwrap();
            s.remove("epsilon");
            s.remove("step");
        });
        let cfg = parse_config(&doc).unwrap();
        assert_eq!(cfg.scenario.epsilon, 0.5);
        assert_eq!(cfg.scenario.step, 1e-3);
    }

    #[test]
    fn overlapping_or_gapped_regions_are_rejected() {
        let base = emit_config(&casestudy::feedback_config());
        assert!(parse_config(&base).is_ok());
        let doc = edit(&base, |v| v["policy"]["regions"][1]["upper"] = serde_json::json!([35.0]));
        assert!(matches!(parse_config(&doc), Err(ConfigError::InvariantViolation { .. })));
        let doc = edit(&base, |v| v["policy"]["regions"][1]["lower"] = serde_json::json!([25.0]));
        assert!(matches!(parse_config(&doc), Err(ConfigError::InvariantViolation { .. })));
    }

    #[test]
    fn segment_gap_is_rejected() {
        let doc = edit(&ramp_json(), |v| v["policy"]["segments"][1]["t_start"] = serde_json::json!(51.0));
        assert!(matches!(parse_config(&doc), Err(ConfigError::InvariantViolation { .. })));
    }

    #[test]
    fn pair_validation() {
        let cfg = casestudy::ramp_config();
        assert!(validate_pair(&cfg.concrete, &cfg.abstract_sys).all_pass());

        let mut big = cfg.abstract_sys.clone();
        big.a = DenseMatrix::zeros(3, 3);
        big.b = DenseMatrix::zeros(3, 1);
        big.c = DenseMatrix::zeros(1, 3);
        assert!(!validate_pair(&cfg.concrete, &big).state_order_ok);

        let mut two_out = cfg.abstract_sys.clone();
        two_out.c = DenseMatrix::zeros(2, 1);
        let v = validate_pair(&cfg.concrete, &two_out);
        assert!(!v.outputs_match && v.state_order_ok);
    }

    #[test]
    fn segment_polynomials_and_derivatives() {
        let s = Segment { t_start: 0.0, t_end: Some(50.0), coeffs: vec![vec![0.0, 0.02]] };
        assert!((s.value(10.0)[0] - 0.2).abs() < 1e-15);
        assert!((s.derivative(10.0)[0] - 0.02).abs() < 1e-15);
        let cubic = Segment { t_start: 0.0, t_end: None, coeffs: vec![vec![1.0, -2.0, 0.5, 0.25]] };
        // 1 − 2t + 0.5t² + 0.25t³ at t=2: 1 − 4 + 2 + 2 = 1; derivative −2 + t + 0.75t² = 3
        assert!((cubic.value(2.0)[0] - 1.0).abs() < 1e-14);
        assert!((cubic.derivative(2.0)[0] - 3.0).abs() < 1e-14);
        let constant = Segment { t_start: 0.0, t_end: None, coeffs: vec![vec![1.0]] };
        assert_eq!(constant.derivative(7.0), vec![0.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn emit_then_parse_is_identity(horizon in 0.0f64..300.0, eps in 0.1f64..2.0, x0 in -50.0f64..50.0) {
                let mut cfg = casestudy::ramp_config();
                cfg.scenario.horizon = horizon;
                cfg.scenario.epsilon = eps;
                cfg.scenario.x0[0] = x0;
                cfg.policy = AbstractInputPolicy::OpenLoop { segments: vec![
                    Segment { t_start: 0.0, t_end: Some(50.0), coeffs: vec![vec![0.0, 0.02]] },
                    Segment { t_start: 50.0, t_end: None, coeffs: vec![vec![1.0]] },
                ]};
                let parsed = parse_config(&emit_config(&cfg)).unwrap();
                prop_assert_eq!(&parsed, &cfg);
                prop_assert_eq!(parse_config(&emit_config(&parsed)).unwrap(), parsed);
            }
        }
    }
}
