//! Finite signed atomic measures on `[0,1]` and piecewise-linear
//! bounded-Lipschitz test functions.
//!
//! A measure is a sorted list of weighted atoms. Two norms are provided:
//!
//! * the total variation norm `Σ |w_i|`, and
//! * the dual bounded-Lipschitz (flat) norm
//!   `sup { <m, φ> : ‖φ‖_∞ + |φ|_L ≤ 1 }`,
//!
//! the second computed exactly as a small linear program over the values
//! `y_i = φ(x_i)` at the atom positions. The optimum is attained at a
//! piecewise-linear test function with kinks only at atoms, so restricting
//! to node values loses nothing. For positive measures the two norms
//! coincide, which several test suites in this crate exploit as an oracle.
//!
//! Atoms closer than [`MERGE_TOL`] are merged by weight addition, and an
//! atom at the right boundary is stored with position bit-exactly `1.0`,
//! so that the mass at the singleton `{1}` is an exact equality filter.

use serde::{Deserialize, Serialize};

use crate::lp::{self, SimplexProblem};
use crate::{Error, Result};

/// Atoms closer than this are merged; positions this close to 0 or 1 snap
/// to the endpoint.
pub const MERGE_TOL: f64 = 1e-12;

/// Slack allowed on the negative side when deciding the partial order.
pub const ORDER_TOL: f64 = 1e-12;

/// One weighted atom. Serialized as `{"x": position, "w": weight}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    #[serde(rename = "x")]
    pub position: f64,
    #[serde(rename = "w")]
    pub weight: f64,
}

/// A finite signed Borel measure on `[0,1]` supported on finitely many
/// points. Atoms are sorted strictly increasing by position and no zero
/// weights are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct AtomicMeasure {
    atoms: Vec<Atom>,
}

#[derive(Deserialize)]
struct RawMeasure {
    atoms: Vec<Atom>,
}

impl TryFrom<RawMeasure> for AtomicMeasure {
    type Error = Error;

    fn try_from(raw: RawMeasure) -> Result<Self> {
        AtomicMeasure::new(raw.atoms.into_iter().map(|a| (a.position, a.weight)))
    }
}

impl AtomicMeasure {
    /// Builds a measure from `(position, weight)` pairs. Positions are
    /// validated against `[0,1]` (anything within [`MERGE_TOL`] of an
    /// endpoint snaps onto it), atoms are sorted, near-coincident atoms are
    /// merged, and zero weights are dropped.
    pub fn new(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut list: Vec<Atom> = Vec::new();
        for (x, w) in atoms {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    what: "atom position",
                    value: x,
                });
            }
            if !w.is_finite() {
                return Err(Error::NonFinite {
                    what: "atom weight",
                    value: w,
                });
            }
            let snapped = snap_position(x);
            if !(0.0..=1.0).contains(&snapped) {
                return Err(Error::PositionOutOfDomain { x });
            }
            list.push(Atom {
                position: snapped,
                weight: w,
            });
        }
        list.sort_by(|a, b| a.position.total_cmp(&b.position));

        // Merge clusters against the anchor (first atom of the cluster) so
        // the result is deterministic under permutation of the input.
        let mut merged: Vec<Atom> = Vec::with_capacity(list.len());
        for atom in list {
            match merged.last_mut() {
                Some(last) if atom.position - last.position <= MERGE_TOL => {
                    last.weight += atom.weight;
                }
                _ => merged.push(atom),
            }
        }
        merged.retain(|a| a.weight != 0.0);
        Ok(AtomicMeasure { atoms: merged })
    }

    /// The zero measure.
    pub fn zero() -> Self {
        AtomicMeasure { atoms: Vec::new() }
    }

    /// A unit point mass at `x`.
    pub fn dirac(x: f64) -> Result<Self> {
        Self::new([(x, 1.0)])
    }

    /// A point mass at `x` with the given weight.
    pub fn dirac_weighted(x: f64, w: f64) -> Result<Self> {
        Self::new([(x, w)])
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Total variation norm `Σ |w_i|`.
    pub fn tv_norm(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight.abs()).sum()
    }

    /// Signed total mass `Σ w_i`.
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// True iff every stored weight is positive.
    pub fn is_positive(&self) -> bool {
        self.atoms.iter().all(|a| a.weight > 0.0)
    }

    /// Mass of the singleton `{1}`: exact equality filter on the position,
    /// which the flow module's snap-to-boundary guarantee makes meaningful.
    pub fn mass_at_one(&self) -> f64 {
        match self.atoms.last() {
            Some(a) if a.position == 1.0 => a.weight,
            _ => 0.0,
        }
    }

    /// The pairing `<m, φ> = Σ w_i φ(x_i)`.
    pub fn pair(&self, phi: &BlFunction) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * phi.evaluate(a.position))
            .sum()
    }

    /// Dual bounded-Lipschitz (flat) norm, computed exactly as a linear
    /// program over test-function values at the atom positions:
    ///
    /// ```text
    /// maximize Σ w_i y_i   s.t.  -M <= y_i <= M,
    ///                            |y_{i+1} - y_i| <= L (x_{i+1} - x_i),
    ///                            M + L <= 1.
    /// ```
    ///
    /// Free variables are split as `y_i = p_i - q_i` so that the all-slack
    /// basis is feasible. Errors only if the simplex fails to certify
    /// optimality, which indicates an internal fault.
    pub fn dual_bl_norm(&self) -> Result<f64> {
        let k = self.atoms.len();
        if k == 0 {
            return Ok(0.0);
        }
        // Variable layout: p_0..p_{k-1}, q_0..q_{k-1}, M, L.
        let nvars = 2 * k + 2;
        let idx_m = 2 * k;
        let idx_l = 2 * k + 1;
        let mut objective = vec![0.0; nvars];
        for (i, a) in self.atoms.iter().enumerate() {
            objective[i] = a.weight;
            objective[k + i] = -a.weight;
        }
        let mut constraints = Vec::with_capacity(4 * k - 1);
        let mut rhs = Vec::with_capacity(4 * k - 1);
        for i in 0..k {
            let mut up = vec![0.0; nvars];
            up[i] = 1.0;
            up[k + i] = -1.0;
            up[idx_m] = -1.0;
            constraints.push(up);
            rhs.push(0.0);
            let mut down = vec![0.0; nvars];
            down[i] = -1.0;
            down[k + i] = 1.0;
            down[idx_m] = -1.0;
            constraints.push(down);
            rhs.push(0.0);
        }
        for i in 0..k - 1 {
            let d = self.atoms[i + 1].position - self.atoms[i].position;
            let mut up = vec![0.0; nvars];
            up[i + 1] = 1.0;
            up[k + i + 1] = -1.0;
            up[i] = -1.0;
            up[k + i] = 1.0;
            up[idx_l] = -d;
            let mut down: Vec<f64> = up.iter().map(|c| -c).collect();
            down[idx_l] = -d;
            constraints.push(up);
            rhs.push(0.0);
            constraints.push(down);
            rhs.push(0.0);
        }
        let mut budget = vec![0.0; nvars];
        budget[idx_m] = 1.0;
        budget[idx_l] = 1.0;
        constraints.push(budget);
        rhs.push(1.0);

        let solution = lp::maximize(&SimplexProblem {
            objective,
            constraints,
            rhs,
        })?;
        // φ = 0 is feasible, so the true optimum is nonnegative; clip the
        // simplex round-off.
        Ok(solution.value.max(0.0))
    }

    /// Flat norm with a shortcut for signed-definite measures, where it
    /// provably equals the total variation. Used internally where the norm
    /// gates an iteration; the public [`Self::dual_bl_norm`] always runs
    /// the linear program so that the coincidence stays testable.
    pub(crate) fn flat_norm_fast(&self) -> Result<f64> {
        let all_nonneg = self.atoms.iter().all(|a| a.weight > 0.0);
        let all_nonpos = self.atoms.iter().all(|a| a.weight < 0.0);
        if all_nonneg || all_nonpos {
            Ok(self.tv_norm())
        } else {
            self.dual_bl_norm()
        }
    }

    /// Image measure under `map`: atoms move, weights stay, coincident
    /// images merge. The map must send `[0,1]` into `[0,1]`; images beyond
    /// [`MERGE_TOL`] outside are a domain error.
    pub fn push_forward(&self, map: impl Fn(f64) -> f64) -> Result<AtomicMeasure> {
        let mut moved = Vec::with_capacity(self.atoms.len());
        for a in &self.atoms {
            let y = map(a.position);
            if !y.is_finite() || !(-MERGE_TOL..=1.0 + MERGE_TOL).contains(&y) {
                return Err(Error::PushForwardRange { x: y });
            }
            moved.push((y.clamp(0.0, 1.0), a.weight));
        }
        AtomicMeasure::new(moved)
    }

    /// Pointwise sum of measures (atoms on the union support).
    pub fn add(&self, other: &AtomicMeasure) -> AtomicMeasure {
        let combined = self
            .atoms
            .iter()
            .chain(other.atoms.iter())
            .map(|a| (a.position, a.weight));
        AtomicMeasure::new(combined).expect("sums of valid measures are valid")
    }

    /// Pointwise difference `self - other`.
    pub fn sub(&self, other: &AtomicMeasure) -> AtomicMeasure {
        let combined = self
            .atoms
            .iter()
            .map(|a| (a.position, a.weight))
            .chain(other.atoms.iter().map(|a| (a.position, -a.weight)));
        AtomicMeasure::new(combined).expect("differences of valid measures are valid")
    }

    /// Scalar multiple. `c` must be finite.
    pub fn scale(&self, c: f64) -> AtomicMeasure {
        debug_assert!(c.is_finite());
        let atoms = self
            .atoms
            .iter()
            .filter(|_| c != 0.0)
            .map(|a| Atom {
                position: a.position,
                weight: a.weight * c,
            })
            .collect();
        AtomicMeasure { atoms }
    }

    /// Partial order: `self <= other` iff `other - self` has all weights
    /// `>= -`[`ORDER_TOL`] after atom-wise subtraction on the union support.
    pub fn leq(&self, other: &AtomicMeasure) -> bool {
        let diff = other.sub(self);
        diff.atoms.iter().all(|a| a.weight >= -ORDER_TOL)
    }

    /// Parses the JSON measure format `{"atoms": [{"x": .., "w": ..}, ..]}`.
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("measure serialization cannot fail")
    }
}

fn snap_position(x: f64) -> f64 {
    if (x - 1.0).abs() <= MERGE_TOL {
        1.0
    } else if x.abs() <= MERGE_TOL {
        0.0
    } else {
        x
    }
}

/// A piecewise-linear function on `[0,1]` given by breakpoints and node
/// values, extended constantly outside the breakpoint hull. Its
/// bounded-Lipschitz norm is `sup_norm + lipschitz_constant`, both of which
/// are exact for this representation (extrema sit at nodes, slopes between
/// consecutive nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct BlFunction {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl BlFunction {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(Error::InvalidBreakpoints);
        }
        let increasing = breakpoints.windows(2).all(|w| w[0] < w[1]);
        let in_domain = breakpoints
            .iter()
            .all(|&b| b.is_finite() && (0.0..=1.0).contains(&b));
        if !increasing || !in_domain || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBreakpoints);
        }
        Ok(BlFunction {
            breakpoints,
            values,
        })
    }

    /// The constant function `φ ≡ c`.
    pub fn constant(c: f64) -> Result<Self> {
        Self::new(vec![0.0, 1.0], vec![c, c])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Evaluation. Exact breakpoint hits return the node value, so values
    /// pinned at nodes (for instance the value 1 at the boundary) are
    /// reproduced without interpolation round-off.
    pub fn evaluate(&self, x: f64) -> f64 {
        let bp = &self.breakpoints;
        if x <= bp[0] {
            return self.values[0];
        }
        if x >= *bp.last().expect("non-empty") {
            return *self.values.last().expect("non-empty");
        }
        match bp.binary_search_by(|b| b.total_cmp(&x)) {
            Ok(i) => self.values[i],
            Err(i) => {
                let (x0, x1) = (bp[i - 1], bp[i]);
                let (v0, v1) = (self.values[i - 1], self.values[i]);
                v0 + (x - x0) * (v1 - v0) / (x1 - x0)
            }
        }
    }

    /// `‖φ‖_∞` (attained at a node for piecewise-linear φ).
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `|φ|_L` (maximum slope magnitude between consecutive nodes).
    pub fn lipschitz_constant(&self) -> f64 {
        self.breakpoints
            .windows(2)
            .zip(self.values.windows(2))
            .fold(0.0, |m: f64, (xs, vs)| {
                m.max(((vs[1] - vs[0]) / (xs[1] - xs[0])).abs())
            })
    }

    /// `‖φ‖_BL = ‖φ‖_∞ + |φ|_L`.
    pub fn bl_norm(&self) -> f64 {
        self.sup_norm() + self.lipschitz_constant()
    }
}

/// An absolutely continuous initial datum: a piecewise-constant density on
/// a uniform partition of `[0,1]` (a single cell expresses the uniform
/// case). Values are nonnegative, so the density is a positive measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityJson", into = "DensityJson")]
pub struct DensitySpec {
    values: Vec<f64>,
}

impl DensitySpec {
    /// Uniform density integrating to `mass`.
    pub fn uniform(mass: f64) -> Result<Self> {
        Self::piecewise(vec![mass])
    }

    /// Piecewise-constant density with one value per cell of the uniform
    /// partition into `values.len()` cells.
    pub fn piecewise(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDensity);
        }
        Ok(DensitySpec { values })
    }

    pub fn cell_count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Integral over `[0,1]`: the canonical total mass of the density.
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Exact integral of the density over `[lo, hi] ⊆ [0,1]`.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let k = self.values.len() as f64;
        let mut total = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let cell_lo = i as f64 / k;
            let cell_hi = (i + 1) as f64 / k;
            let overlap = (hi.min(cell_hi) - lo.max(cell_lo)).max(0.0);
            total += v * overlap;
        }
        total
    }

    /// Inverse CDF of the normalized density. `u ∈ [0,1)` maps to a
    /// position in `[0,1]`. Requires positive total mass.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        let total = self.total_mass();
        if total <= 0.0 {
            return Err(Error::NotNormalizable);
        }
        let k = self.values.len() as f64;
        let target = u.clamp(0.0, 1.0) * total;
        let mut cum = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            let cell_mass = v / k;
            if cell_mass > 0.0 && cum + cell_mass >= target {
                let frac = ((target - cum) / cell_mass).clamp(0.0, 1.0);
                return Ok(((i as f64 + frac) / k).min(1.0));
            }
            cum += cell_mass;
        }
        // u == 1 up to rounding: right edge of the last massive cell.
        let last = self.values.iter().rposition(|&v| v > 0.0).unwrap_or(0);
        Ok(((last + 1) as f64 / k).min(1.0))
    }

    /// Parses the JSON density file format
    /// `{"density": {"kind": "uniform"|"cells", "cells": int, "values": [..], "mass": float}}`.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: DensityFile = serde_json::from_str(s)?;
        file.density.validate()
    }

    pub fn to_json_string(&self) -> String {
        let json = DensityJson::from_spec(self);
        serde_json::to_string(&DensityFile { density: json })
            .expect("density serialization cannot fail")
    }
}

#[derive(Serialize, Deserialize)]
struct DensityFile {
    density: DensityJson,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct DensityJson {
    kind: String,
    cells: usize,
    #[serde(default)]
    values: Vec<f64>,
    mass: f64,
}

impl DensityJson {
    fn from_spec(spec: &DensitySpec) -> Self {
        let uniform = spec.values.len() == 1;
        DensityJson {
            kind: if uniform { "uniform" } else { "cells" }.to_string(),
            cells: spec.values.len(),
            values: if uniform { Vec::new() } else { spec.values.clone() },
            mass: spec.total_mass(),
        }
    }

    pub(crate) fn validate(&self) -> Result<DensitySpec> {
        if !self.mass.is_finite() || self.mass < 0.0 {
            return Err(Error::InvalidDensity);
        }
        let spec = match self.kind.as_str() {
            "uniform" => DensitySpec::uniform(self.mass)?,
            "cells" => {
                if self.values.len() != self.cells || self.cells == 0 {
                    return Err(Error::InvalidDensity);
                }
                DensitySpec::piecewise(self.values.clone())?
            }
            _ => return Err(Error::InvalidDensity),
        };
        let integral = spec.total_mass();
        if (integral - self.mass).abs() > 1e-9 * self.mass.max(1.0) {
            return Err(Error::MassMismatch {
                declared: self.mass,
                integral,
            });
        }
        Ok(spec)
    }
}

impl TryFrom<DensityJson> for DensitySpec {
    type Error = Error;

    fn try_from(json: DensityJson) -> Result<Self> {
        json.validate()
    }
}

impl From<DensitySpec> for DensityJson {
    fn from(spec: DensitySpec) -> Self {
        DensityJson::from_spec(&spec)
    }
}
