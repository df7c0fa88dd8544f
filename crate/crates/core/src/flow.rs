//! The characteristic flow on `[0,1]` for a velocity field with inflow at
//! both ends (`v(0) > 0`, `v(1) > 0`): trajectory integration, the
//! boundary hitting time, the interior time `τ∧t`, and empirical
//! Lipschitz certificates.
//!
//! Everything marches the same fixed-step RK4 grid (`h = 10⁻³ / max(1,
//! ‖v‖_∞)`, states at `t_k = k·h`) and localizes a boundary crossing by
//! bisecting the step size over the last in-domain grid state. Because
//! [`hitting_time`], [`flow_map`] and [`Trajectory`] share that one
//! engine, a hitting time computed one way is bit-identical to the same
//! quantity computed another way, which downstream solvers rely on when
//! they compare or subtract solutions.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sample count used for zero-set scans and for verifying declared
/// velocity bounds.
pub const DEFAULT_SCAN_RESOLUTION: usize = 10_000;

/// Base integrator step before rescaling by `max(1, ‖v‖_∞)`.
const BASE_STEP: f64 = 1e-3;

/// Width at which step-size bisection of a boundary crossing stops.
const HIT_BISECTION_TOL: f64 = 1e-13;

/// Relative slack allowed when a declared bound is checked by sampling.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocityKind {
    Constant,
    Affine,
    #[serde(rename = "poly")]
    Polynomial,
}

/// A velocity field from a declared analytic family (constant, affine, or
/// polynomial in ascending powers), together with certified upper bounds
/// for `|v|_L` and `‖v‖_∞` on `[0,1]`. Immutable after construction; all
/// flow operations on it are pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VelocityJson", into = "VelocityJson")]
pub struct VelocityField {
    kind: VelocityKind,
    coeffs: Vec<f64>,
    lip_constant: f64,
    sup_norm: f64,
    scan_resolution: usize,
}

#[derive(Serialize, Deserialize)]
struct VelocityJson {
    kind: VelocityKind,
    coeffs: Vec<f64>,
    #[serde(default)]
    lip: Option<f64>,
    #[serde(default)]
    sup: Option<f64>,
}

impl TryFrom<VelocityJson> for VelocityField {
    type Error = Error;

    fn try_from(json: VelocityJson) -> Result<Self> {
        Self::validated(json.kind, json.coeffs, json.lip, json.sup)
    }
}

impl From<VelocityField> for VelocityJson {
    fn from(v: VelocityField) -> Self {
        VelocityJson {
            kind: v.kind,
            coeffs: v.coeffs,
            lip: Some(v.lip_constant),
            sup: Some(v.sup_norm),
        }
    }
}

impl VelocityField {
    pub fn constant(c: f64) -> Result<Self> {
        Self::validated(VelocityKind::Constant, vec![c], None, None)
    }

    /// `v(x) = c0 + c1 x`.
    pub fn affine(c0: f64, c1: f64) -> Result<Self> {
        Self::validated(VelocityKind::Affine, vec![c0, c1], None, None)
    }

    /// `v(x) = Σ coeffs[k] x^k`.
    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self> {
        Self::validated(VelocityKind::Polynomial, coeffs, None, None)
    }

    /// Parses `{"kind": "constant"|"affine"|"poly", "coeffs": [..], "lip":
    /// float, "sup": float}`. Declared bounds are verified against dense
    /// samples and then adopted; missing bounds fall back to certified
    /// values computed from the coefficients.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let json: VelocityJson = serde_json::from_str(s)?;
        Self::validated(json.kind, json.coeffs, json.lip, json.sup)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&VelocityJson {
            kind: self.kind,
            coeffs: self.coeffs.clone(),
            lip: Some(self.lip_constant),
            sup: Some(self.sup_norm),
        })
        .expect("velocity serialization cannot fail")
    }

    fn validated(
        kind: VelocityKind,
        coeffs: Vec<f64>,
        declared_lip: Option<f64>,
        declared_sup: Option<f64>,
    ) -> Result<Self> {
        let expected_len: Option<usize> = match kind {
            VelocityKind::Constant => Some(1),
            VelocityKind::Affine => Some(2),
            VelocityKind::Polynomial => None,
        };
        if coeffs.is_empty() || expected_len.is_some_and(|n| coeffs.len() != n) {
            return Err(Error::ConfigMismatch(format!(
                "velocity kind {kind:?} does not match {} coefficients",
                coeffs.len()
            )));
        }
        for &c in &coeffs {
            if !c.is_finite() {
                return Err(Error::NonFinite {
                    what: "velocity coefficient",
                    value: c,
                });
            }
        }

        let at_zero = eval_poly(&coeffs, 0.0);
        if at_zero <= 0.0 {
            return Err(Error::BoundaryInflow {
                at: 0.0,
                value: at_zero,
            });
        }
        let at_one = eval_poly(&coeffs, 1.0);
        if at_one <= 0.0 {
            return Err(Error::BoundaryInflow {
                at: 1.0,
                value: at_one,
            });
        }

        let deriv = derivative_coeffs(&coeffs);
        let step = 1.0 / DEFAULT_SCAN_RESOLUTION as f64;
        let sampled_sup = sampled_abs_max(&coeffs, DEFAULT_SCAN_RESOLUTION);
        let sampled_lip = sampled_abs_max(&deriv, DEFAULT_SCAN_RESOLUTION);

        // Inflate sampled maxima into rigorous bounds: between samples the
        // derivative of |v| is at most lip, and of |v'| at most the crude
        // second-derivative bound Σ k(k-1)|c_k|.
        let second_bound: f64 = coeffs
            .iter()
            .enumerate()
            .skip(2)
            .map(|(k, c)| (k * (k - 1)) as f64 * c.abs())
            .sum();
        let certified_lip = sampled_lip + 0.5 * step * second_bound;
        let certified_sup = sampled_sup + 0.5 * step * certified_lip;

        let lip_constant = match declared_lip {
            Some(lip) => {
                if !lip.is_finite() || lip < 0.0 || sampled_lip > lip * (1.0 + BOUND_SLACK) + 1e-12
                {
                    return Err(Error::UncertifiedBound {
                        what: "lip",
                        declared: lip,
                        observed: sampled_lip,
                    });
                }
                lip
            }
            None => certified_lip,
        };
        let sup_norm = match declared_sup {
            Some(sup) => {
                if !sup.is_finite() || sup <= 0.0 || sampled_sup > sup * (1.0 + BOUND_SLACK) + 1e-12
                {
                    return Err(Error::UncertifiedBound {
                        what: "sup",
                        declared: sup,
                        observed: sampled_sup,
                    });
                }
                sup
            }
            None => certified_sup,
        };

        Ok(VelocityField {
            kind,
            coeffs,
            lip_constant,
            sup_norm,
            scan_resolution: DEFAULT_SCAN_RESOLUTION,
        })
    }

    pub fn kind(&self) -> VelocityKind {
        self.kind
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Certified upper bound for `|v|_L` on `[0,1]`.
    pub fn lip_constant(&self) -> f64 {
        self.lip_constant
    }

    /// Certified upper bound for `‖v‖_∞` on `[0,1]`.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        eval_poly(&self.coeffs, x)
    }

    /// The integrator grid step `10⁻³ / max(1, ‖v‖_∞)` shared by every
    /// flow computation on this field.
    pub fn step_size(&self) -> f64 {
        BASE_STEP / self.speed_scale()
    }

    fn speed_scale(&self) -> f64 {
        self.sup_norm.max(1.0)
    }

    /// First point of `[lo, 1)` where positivity of `v` fails or cannot be
    /// certified by the scan: an exact nonpositive sample is refined by
    /// bisection to `10⁻¹²`; a positive sample too close to zero for the
    /// Lipschitz bound to exclude a nearby zero is reported as scanned.
    pub fn first_rest_point(&self, lo: f64) -> Option<f64> {
        match self.scan_from(lo) {
            ScanOutcome::RestPoint(x) => Some(x),
            ScanOutcome::CertifiedMin(_) => None,
        }
    }

    fn scan_from(&self, lo: f64) -> ScanOutcome {
        let res = self.scan_resolution;
        let step = (1.0 - lo) / res as f64;
        let first = self.evaluate(lo);
        if first <= 0.0 {
            return ScanOutcome::RestPoint(lo);
        }
        let (mut min_val, mut min_x) = (first, lo);
        let mut prev_x = lo;
        for i in 1..=res {
            let x = lo + step * i as f64;
            let val = self.evaluate(x);
            if val <= 0.0 {
                return ScanOutcome::RestPoint(self.refine_zero(prev_x, x));
            }
            if val < min_val {
                min_val = val;
                min_x = x;
            }
            prev_x = x;
        }
        let certified = min_val - 0.5 * self.lip_constant * step;
        if certified <= 0.0 {
            ScanOutcome::RestPoint(min_x)
        } else {
            ScanOutcome::CertifiedMin(certified)
        }
    }

    fn refine_zero(&self, mut lo: f64, mut hi: f64) -> f64 {
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if self.evaluate(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

enum ScanOutcome {
    /// Positivity on `[lo, 1)` fails or cannot be certified; payload is
    /// the located (or suspected) zero.
    RestPoint(f64),
    /// `v ≥ payload > 0` holds on the scanned interval.
    CertifiedMin(f64),
}

fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn derivative_coeffs(coeffs: &[f64]) -> Vec<f64> {
    if coeffs.len() <= 1 {
        return vec![0.0];
    }
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| k as f64 * c)
        .collect()
}

fn sampled_abs_max(coeffs: &[f64], resolution: usize) -> f64 {
    (0..=resolution)
        .map(|i| eval_poly(coeffs, i as f64 / resolution as f64).abs())
        .fold(0.0, f64::max)
}

fn rk4_step(v: &VelocityField, x: f64, h: f64) -> f64 {
    let k1 = v.evaluate(x);
    let k2 = v.evaluate(x + 0.5 * h * k1);
    let k3 = v.evaluate(x + 0.5 * h * k2);
    let k4 = v.evaluate(x + h * k3);
    x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Bisects the step size `σ ∈ [0, h]` from the last in-domain state to the
/// first `σ` whose RK4 step reaches 1, to width `10⁻¹³`.
fn locate_crossing(v: &VelocityField, x_below: f64, h: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, h);
    while hi - lo > HIT_BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if rk4_step(v, x_below, mid) >= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

struct March {
    /// Grid states `x_k` at `t_k = k·h`, up to and excluding any crossing.
    states: Vec<f64>,
    /// Boundary crossing time, if one occurred within the marched steps.
    crossing: Option<f64>,
}

fn march(v: &VelocityField, x0: f64, h: f64, max_steps: usize) -> March {
    let mut states = Vec::with_capacity(max_steps.min(1 << 24) + 1);
    states.push(x0);
    let mut crossing = None;
    for k in 0..max_steps {
        let raw = rk4_step(v, states[k], h);
        if raw >= 1.0 {
            crossing = Some(k as f64 * h + locate_crossing(v, states[k], h));
            break;
        }
        states.push(raw.max(0.0));
    }
    March { states, crossing }
}

/// Outcome of flowing a point for time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowResult {
    /// `Φ_t(x0) ∈ [0,1]`; bit-exactly 1 whenever the boundary was hit.
    pub position: f64,
    /// True iff `hitting_time ≤ t`.
    pub hit_boundary: bool,
    /// `τ(x0)`, `+∞` when the trajectory never reaches 1.
    pub hitting_time: f64,
    /// `min(hitting_time, t)`.
    pub interior_time: f64,
}

fn check_position(x0: f64) -> Result<()> {
    if !x0.is_finite() || !(0.0..=1.0).contains(&x0) {
        return Err(Error::PositionOutOfDomain { x: x0 });
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidTime { t });
    }
    Ok(())
}

/// Time for the trajectory from `x0` to reach the boundary 1, or `+∞`
/// when a zero of `v` in `[x0, 1)` blocks it (decided by the certified
/// scan, see [`VelocityField::first_rest_point`]).
pub fn hitting_time(v: &VelocityField, x0: f64) -> Result<f64> {
    check_position(x0)?;
    if x0 == 1.0 {
        return Ok(0.0);
    }
    let certified_min = match v.scan_from(x0) {
        ScanOutcome::RestPoint(_) => return Ok(f64::INFINITY),
        ScanOutcome::CertifiedMin(m) => m,
    };
    let h = v.step_size();
    // The trajectory moves at speed >= certified_min, so it crosses within
    // (1-x0)/certified_min time; the cap is defensive headroom only.
    let cap = ((2.0 * (1.0 - x0) / (certified_min * h)).ceil()).min(1e15) as usize + 2;
    Ok(march(v, x0, h, cap).crossing.unwrap_or(f64::INFINITY))
}

/// The flow map `Φ_t`, sticky at the boundary.
pub fn flow_map(v: &VelocityField, x0: f64, t: f64) -> Result<FlowResult> {
    check_position(x0)?;
    check_time(t)?;
    let tau = hitting_time(v, x0)?;
    let hit = tau <= t;
    let position = if hit {
        1.0
    } else if t == 0.0 {
        x0
    } else {
        let h = BASE_STEP.min(t) / v.speed_scale();
        integrate_interior(v, x0, t, h)
    };
    Ok(FlowResult {
        position,
        hit_boundary: hit,
        hitting_time: tau,
        interior_time: tau.min(t),
    })
}

/// Marches `floor(t/h)` full steps plus a remainder step. Only meaningful
/// when the trajectory stays interior up to `t`.
fn integrate_interior(v: &VelocityField, x0: f64, t: f64, h: f64) -> f64 {
    let full = (t / h).floor() as usize;
    let m = march(v, x0, h, full);
    if m.crossing.is_some() {
        // Only reachable inside the bisection tolerance sliver around the
        // hitting time.
        return 1.0;
    }
    let k = m.states.len() - 1;
    let x = m.states[k];
    let r = t - k as f64 * h;
    let raw = if r > 0.0 { rk4_step(v, x, r) } else { x };
    raw.clamp(0.0, 1.0)
}

/// `min(τ(x0), t)`: the time the trajectory spends in the interior up to
/// time `t`.
pub fn interior_time(v: &VelocityField, x0: f64, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(hitting_time(v, x0)?.min(t))
}

/// A trajectory precomputed on the shared integrator grid up to a horizon,
/// for repeated position queries. Grid states and the crossing time are
/// bit-identical to what [`flow_map`] and [`hitting_time`] compute.
#[derive(Debug, Clone)]
pub struct Trajectory {
    v: VelocityField,
    states: Vec<f64>,
    h: f64,
    tau: Option<f64>,
    horizon: f64,
}

impl Trajectory {
    pub fn new(v: &VelocityField, x0: f64, horizon: f64) -> Result<Self> {
        check_position(x0)?;
        check_time(horizon)?;
        let h = v.step_size();
        if x0 == 1.0 {
            return Ok(Trajectory {
                v: v.clone(),
                states: vec![1.0],
                h,
                tau: Some(0.0),
                horizon,
            });
        }
        let full = (horizon / h).floor() as usize;
        let mut m = march(v, x0, h, full);
        let tau = match m.crossing {
            Some(t) => Some(t),
            None => {
                // Probe one full step beyond the last grid state so a
                // crossing inside the trailing partial interval is
                // localized over the same canonical window.
                let last = *m.states.last().expect("march keeps the initial state");
                if rk4_step(v, last, h) >= 1.0 {
                    let k = m.states.len() - 1;
                    let t = k as f64 * h + locate_crossing(v, last, h);
                    (t <= horizon).then_some(t)
                } else {
                    None
                }
            }
        };
        let target_len = full + 1;
        m.states.resize(target_len, 1.0);
        Ok(Trajectory {
            v: v.clone(),
            states: m.states,
            h,
            tau,
            horizon,
        })
    }

    /// Boundary hitting time if it occurs within the horizon.
    pub fn hit_time(&self) -> Option<f64> {
        self.tau
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Position at `s ∈ [0, horizon]`: exactly 1 at and after the hitting
    /// time, otherwise one partial RK4 step from the preceding grid state
    /// (bit-identical to [`flow_map`] at the same time).
    pub fn position_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.horizon);
        if self.tau.is_some_and(|tau| s >= tau) {
            return 1.0;
        }
        let k = ((s / self.h).floor() as usize).min(self.states.len() - 1);
        let x = self.states[k];
        let r = s - k as f64 * self.h;
        if r > 0.0 {
            rk4_step(&self.v, x, r).clamp(0.0, 1.0)
        } else {
            x
        }
    }
}

/// Empirical check of the flow's Lipschitz estimates at time `t`.
#[derive(Debug, Clone, Copy)]
pub struct LipschitzReport {
    /// Largest sampled `|Φ_t(x) - Φ_t(x')| / |x - x'|`.
    pub spatial_estimate: f64,
    /// The bound `e^{|v|_L t}` the spatial estimate must stay under.
    pub spatial_bound: f64,
    /// Largest sampled `|Φ_t(x) - Φ_s(x)| / |t - s|`.
    pub time_estimate: f64,
    /// The bound `‖v‖_∞` it must stay under.
    pub time_bound: f64,
    /// True iff both estimates are within relative slack `10⁻⁶` of their
    /// bounds.
    pub within_bounds: bool,
}

/// Samples `samples + 1` starting points (and a coarser subset of them for
/// time pairs) and compares difference quotients of the flow against the
/// theoretical spatial bound `e^{|v|_L t}` and time bound `‖v‖_∞`.
pub fn lipschitz_certificate(
    v: &VelocityField,
    t: f64,
    samples: usize,
) -> Result<LipschitzReport> {
    check_time(t)?;
    if samples == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let xs: Vec<f64> = (0..=samples).map(|i| i as f64 / samples as f64).collect();
    let trajectories: Vec<Trajectory> = xs
        .iter()
        .map(|&x| Trajectory::new(v, x, t))
        .collect::<Result<_>>()?;
    let endpoints: Vec<f64> = trajectories.iter().map(|tr| tr.position_at(t)).collect();

    let mut spatial_estimate: f64 = 0.0;
    for i in 0..samples {
        let dx = xs[i + 1] - xs[i];
        spatial_estimate = spatial_estimate.max((endpoints[i + 1] - endpoints[i]).abs() / dx);
    }

    let mut time_estimate: f64 = 0.0;
    if t > 0.0 {
        let stride = (samples / 10).max(1);
        for tr in trajectories.iter().step_by(stride) {
            let mut prev_s = 0.0;
            let mut prev_pos = tr.position_at(0.0);
            for j in 1..=samples {
                let s = t * j as f64 / samples as f64;
                let pos = tr.position_at(s);
                time_estimate = time_estimate.max((pos - prev_pos).abs() / (s - prev_s));
                prev_s = s;
                prev_pos = pos;
            }
        }
    }

    let spatial_bound = (v.lip_constant() * t).exp();
    let time_bound = v.sup_norm();
    let within_bounds = spatial_estimate <= spatial_bound * (1.0 + 1e-6)
        && time_estimate <= time_bound * (1.0 + 1e-6);
    Ok(LipschitzReport {
        spatial_estimate,
        spatial_bound,
        time_estimate,
        time_bound,
        within_bounds,
    })
}
