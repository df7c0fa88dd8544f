//! The exact limit evolution: transport with a sticky, partially
//! absorbing boundary.
//!
//! Each initial atom rides its characteristic until the boundary arrival
//! time `τ`, keeps its full weight while in the interior, and decays as
//! `exp(-a · (t - τ))` once parked at `x = 1`. The solution therefore
//! admits an exact per-atom formula
//!
//! ```text
//! w_i(t) = w_i · exp(-a · (t - min(τ_i, t))),
//! ```
//!
//! which this module evaluates on a uniform grid together with two
//! bookkeeping series: the mass sitting on the boundary and the mass
//! absorbed so far. The elapsed boundary time is exactly zero for
//! interior atoms, so their weights are carried bit-for-bit, and the
//! absorbed mass is accumulated in the factored per-atom form
//! `Σ w_i (1 - exp(-a·elapsed))`, which is exactly zero before the first
//! arrival and immune to the cancellation the expanded form suffers.

use std::io;

use serde::{Deserialize, Serialize};

use crate::flow::VelocityField;
use crate::measures::AtomicMeasure;
use crate::regularized::{atom_tables, require_positive, time_grid, transport, AbsorptionParams, MeasureTrajectory};
use crate::{Error, Result};

/// One initial atom together with its boundary arrival time
/// (`+∞` when it never arrives within the horizon).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialAtom {
    pub position: f64,
    pub weight: f64,
    pub hit_time: f64,
}

/// The limit solution on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitSolution {
    trajectory: MeasureTrajectory,
    boundary_mass: Vec<f64>,
    absorbed_mass: Vec<f64>,
    rate: f64,
    initial: Vec<InitialAtom>,
}

impl LimitSolution {
    pub fn trajectory(&self) -> &MeasureTrajectory {
        &self.trajectory
    }

    /// Mass parked at `x = 1` at each grid node.
    pub fn boundary_mass(&self) -> &[f64] {
        &self.boundary_mass
    }

    /// Mass absorbed by the boundary up to each grid node.
    pub fn absorbed_mass(&self) -> &[f64] {
        &self.absorbed_mass
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn initial_atoms(&self) -> &[InitialAtom] {
        &self.initial
    }

    /// Writes `t,atom_index,x,w,boundary_mass,absorbed_mass` rows, one per
    /// atom per grid node; the two mass columns repeat per row of a node.
    pub fn write_csv<W: io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "t,atom_index,x,w,boundary_mass,absorbed_mass")?;
        for (j, (t, m)) in self
            .trajectory
            .times()
            .iter()
            .zip(self.trajectory.measures())
            .enumerate()
        {
            for (i, atom) in m.atoms().iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    t, i, atom.position, atom.weight, self.boundary_mass[j], self.absorbed_mass[j]
                )?;
            }
        }
        Ok(())
    }
}

/// Evaluates the exact limit solution of the sticky-boundary evolution on
/// the uniform grid with step `dt` up to `t_final`.
pub fn solve_limit(
    v: &VelocityField,
    a: &AbsorptionParams,
    mu0: &AtomicMeasure,
    t_final: f64,
    dt: f64,
) -> Result<LimitSolution> {
    require_positive(mu0)?;
    let times = time_grid(t_final, dt)?;
    let tables = atom_tables(v, mu0, &times)?;
    let rate = a.rate();

    let initial: Vec<InitialAtom> = mu0
        .atoms()
        .iter()
        .zip(&tables)
        .map(|(atom, table)| InitialAtom {
            position: atom.position,
            weight: atom.weight,
            hit_time: table.tau,
        })
        .collect();

    let mut measures = Vec::with_capacity(times.len());
    let mut boundary_mass = Vec::with_capacity(times.len());
    let mut absorbed_mass = Vec::with_capacity(times.len());
    for (j, &t) in times.iter().enumerate() {
        let mut absorbed = 0.0;
        let node = AtomicMeasure::new(tables.iter().map(|table| {
            let elapsed = t - table.tau.min(t);
            let survival = (-rate * elapsed).exp();
            absorbed += table.weight * (1.0 - survival);
            (table.positions[j], table.weight * survival)
        }))?;
        boundary_mass.push(node.mass_at_one());
        absorbed_mass.push(absorbed);
        measures.push(node);
    }

    Ok(LimitSolution {
        trajectory: MeasureTrajectory::new(times, measures)?,
        boundary_mass,
        absorbed_mass,
        rate,
        initial,
    })
}

/// JSON configuration for the limit solver:
/// `{"a": float, "T": float, "dt": float}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitConfig {
    pub a: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub dt: f64,
}

/// Per-node dual-BL norm of the defect
/// `μ_t - P_t μ_0 + absorbed(t) · δ_1`, which the limit solution satisfies
/// identically; the returned values measure only floating-point noise.
pub fn residual_norms(
    v: &VelocityField,
    mu0: &AtomicMeasure,
    sol: &LimitSolution,
) -> Result<Vec<f64>> {
    let times = sol.trajectory.times();
    let dt = if times.len() > 1 { sol.trajectory.dt() } else { 1.0 };
    let plain = transport(v, mu0, *times.last().expect("grid is non-empty"), dt)?;
    sol.trajectory
        .measures()
        .iter()
        .zip(plain.measures())
        .zip(&sol.absorbed_mass)
        .map(|((node, transported), &absorbed)| {
            let returned = AtomicMeasure::new([(1.0, absorbed)])?;
            node.sub(transported).add(&returned).dual_bl_norm()
        })
        .collect()
}

/// Cross-check of the absorbed-mass series against the flux integral
/// `∫_0^t a · (boundary mass at s) ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct MassLossReport {
    /// `max_j |closed_form[j] - quadrature[j]|`.
    pub max_discrepancy: f64,
    /// The per-node absorbed mass from the solution's exact formula.
    pub closed_form: Vec<f64>,
    /// The flux integral per node, by trapezoid quadrature refined at
    /// boundary arrivals.
    pub quadrature: Vec<f64>,
}

/// Integrates the boundary flux and compares it with the solution's
/// absorbed-mass series. The flux jumps upward by `a·w_i` at each arrival
/// `τ_i`, so every grid interval is split at the arrivals inside it and
/// each piece uses one-sided endpoint values (the right limit at the
/// piece's start, the left limit at its end); a plain nodal trapezoid rule
/// would smear those jumps into an `O(dt)` error far above quadrature
/// accuracy.
pub fn mass_loss_check(sol: &LimitSolution) -> MassLossReport {
    let times = sol.trajectory.times();
    let rate = sol.rate;
    let mut arrivals: Vec<f64> = sol
        .initial
        .iter()
        .map(|atom| atom.hit_time)
        .filter(|tau| tau.is_finite())
        .collect();
    arrivals.sort_by(f64::total_cmp);

    let flux = |s: f64, include_arrival_at_s: bool| -> f64 {
        rate * sol
            .initial
            .iter()
            .filter(|atom| {
                if include_arrival_at_s {
                    atom.hit_time <= s
                } else {
                    atom.hit_time < s
                }
            })
            .map(|atom| atom.weight * (-rate * (s - atom.hit_time)).exp())
            .sum::<f64>()
    };

    let mut quadrature = Vec::with_capacity(times.len());
    let mut total = 0.0;
    quadrature.push(0.0);
    for w in times.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mut cuts: Vec<f64> = arrivals
            .iter()
            .copied()
            .filter(|&tau| tau > lo && tau < hi)
            .collect();
        cuts.push(hi);
        let mut left = lo;
        for cut in cuts {
            total += 0.5 * (flux(left, true) + flux(cut, false)) * (cut - left);
            left = cut;
        }
        quadrature.push(total);
    }

    let max_discrepancy = sol
        .absorbed_mass
        .iter()
        .zip(&quadrature)
        .fold(0.0f64, |acc, (c, q)| acc.max((c - q).abs()));
    MassLossReport {
        max_discrepancy,
        closed_form: sol.absorbed_mass.clone(),
        quadrature,
    }
}

/// Sampled Lipschitz constant of `x ↦ min(τ(x), t)` over `[0,1]`: the
/// maximum finite-difference quotient across `samples` adjacent grid
/// pairs, inflated by 10%.
pub fn interior_time_lipschitz(v: &VelocityField, t: f64, samples: usize) -> Result<f64> {
    if samples == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidTime { t });
    }
    let step = 1.0 / samples as f64;
    let mut previous = crate::flow::hitting_time(v, 0.0)?.min(t);
    let mut max_quotient = 0.0f64;
    for i in 1..=samples {
        let x = i as f64 * step;
        let value = crate::flow::hitting_time(v, x.min(1.0))?.min(t);
        max_quotient = max_quotient.max((value - previous).abs() / step);
        previous = value;
    }
    Ok(1.1 * max_quotient)
}

/// The constant `C_t = a + e^{|v|_L t} + 1 + Lip(min(τ, t))` dominating
/// the dual-BL distance amplification of the solution map up to time `t`.
pub fn continuous_dependence_bound(
    v: &VelocityField,
    a: &AbsorptionParams,
    t: f64,
    tau_lipschitz: f64,
) -> f64 {
    a.rate() + (v.lip_constant() * t).exp() + 1.0 + tau_lipschitz
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_speed() -> VelocityField {
        VelocityField::constant(1.0).unwrap()
    }

    fn rate(a: f64) -> AbsorptionParams {
        AbsorptionParams::new(a).unwrap()
    }

    #[test]
    fn interior_weight_is_carried_exactly() {
        // The atom from 0 arrives at τ = 1; before that nothing decays.
        let sol = solve_limit(
            &unit_speed(),
            &rate(1.0),
            &AtomicMeasure::dirac(0.0).unwrap(),
            0.5,
            0.01,
        )
        .unwrap();
        for m in sol.trajectory().measures() {
            assert_eq!(m.atoms().len(), 1);
            assert_eq!(m.atoms()[0].weight, 1.0);
        }
        assert!(sol.absorbed_mass().iter().all(|&x| x == 0.0));
        assert!(sol.boundary_mass().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn boundary_decay_follows_the_survival_law() {
        let sol = solve_limit(
            &unit_speed(),
            &rate(1.0),
            &AtomicMeasure::dirac(0.0).unwrap(),
            1.5,
            0.01,
        )
        .unwrap();
        let terminal = sol.trajectory().terminal();
        assert_eq!(terminal.atoms().len(), 1);
        assert_eq!(terminal.atoms()[0].position, 1.0);
        assert!((terminal.atoms()[0].weight - (-0.5f64).exp()).abs() < 1e-9);
        let last = sol.boundary_mass().last().unwrap();
        assert!((last - (-0.5f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn two_atoms_merge_on_the_boundary() {
        let mu0 = AtomicMeasure::new([(0.0, 1.0), (0.5, 1.0)]).unwrap();
        let sol = solve_limit(&unit_speed(), &rate(1.0), &mu0, 1.5, 0.01).unwrap();
        let terminal = sol.trajectory().terminal();
        assert_eq!(terminal.atoms().len(), 1);
        let expected = (-0.5f64).exp() + (-1.0f64).exp();
        assert!((terminal.atoms()[0].weight - expected).abs() < 1e-9);
        let absorbed = sol.absorbed_mass().last().unwrap();
        assert!((absorbed - (2.0 - expected)).abs() < 1e-9);
    }

    #[test]
    fn mass_loss_check_agrees_with_the_flux_integral() {
        let sol = solve_limit(
            &unit_speed(),
            &rate(1.0),
            &AtomicMeasure::dirac(0.0).unwrap(),
            2.0,
            1e-3,
        )
        .unwrap();
        let report = mass_loss_check(&sol);
        assert!(report.max_discrepancy <= 1e-4, "{}", report.max_discrepancy);
        let expected = 1.0 - (-1.0f64).exp();
        assert!((report.closed_form.last().unwrap() - expected).abs() < 1e-4);
        assert!((report.quadrature.last().unwrap() - expected).abs() < 1e-4);
    }

    #[test]
    fn zero_initial_datum_stays_zero() {
        let sol = solve_limit(&unit_speed(), &rate(1.0), &AtomicMeasure::zero(), 1.0, 0.1).unwrap();
        assert!(sol.trajectory().measures().iter().all(AtomicMeasure::is_empty));
        assert!(sol.absorbed_mass().iter().all(|&x| x == 0.0));
        let residuals = residual_norms(&unit_speed(), &AtomicMeasure::zero(), &sol).unwrap();
        assert!(residuals.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn signed_initial_data_is_rejected() {
        let signed = AtomicMeasure::new([(0.1, 1.0), (0.2, -0.5)]).unwrap();
        assert!(matches!(
            solve_limit(&unit_speed(), &rate(1.0), &signed, 1.0, 0.1),
            Err(Error::SignedInitialData)
        ));
    }

    #[test]
    fn csv_includes_the_mass_columns() {
        let sol = solve_limit(
            &unit_speed(),
            &rate(1.0),
            &AtomicMeasure::dirac(0.25).unwrap(),
            0.2,
            0.1,
        )
        .unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("t,atom_index,x,w,boundary_mass,absorbed_mass")
        );
        assert_eq!(lines.next(), Some("0,0,0.25,1,0,0"));
        assert_eq!(text.lines().count(), 1 + sol.trajectory().len());
    }

    #[test]
    fn dependence_bound_examples() {
        // Unit speed has Lipschitz constant zero, so C_t = a + 1 + 1 + 1.
        let c = continuous_dependence_bound(&unit_speed(), &rate(1.0), 1.0, 1.0);
        assert_eq!(c, 4.0);
        let v = VelocityField::affine(1.0, 1.0).unwrap();
        let c2 = continuous_dependence_bound(&v, &rate(0.5), 2.0, 1.0);
        assert!((c2 - (0.5 + (2.0f64).exp() + 2.0)).abs() < 1e-12);
        assert!(
            continuous_dependence_bound(&v, &rate(1.0), 2.0, 1.0)
                > continuous_dependence_bound(&v, &rate(1.0), 1.0, 1.0)
        );
    }

    #[test]
    fn interior_time_lipschitz_matches_linear_arrival() {
        // For v ≡ c the arrival time is (1-x)/c, with slope 1/c.
        let est = interior_time_lipschitz(&unit_speed(), 2.0, 1000).unwrap();
        assert!((1.0..=1.2).contains(&est), "{est}");
        let half = interior_time_lipschitz(&VelocityField::constant(2.0).unwrap(), 2.0, 1000).unwrap();
        assert!((0.5..=0.6).contains(&half), "{half}");
        let frozen = interior_time_lipschitz(&unit_speed(), 0.0, 100).unwrap();
        assert_eq!(frozen, 0.0);
        assert!(matches!(
            interior_time_lipschitz(&unit_speed(), 1.0, 0),
            Err(Error::EmptyEnsemble)
        ));
    }

    #[test]
    fn limit_config_parses() {
        let cfg: LimitConfig = serde_json::from_str(r#"{"a":1.0,"T":2.0,"dt":0.001}"#).unwrap();
        assert_eq!(cfg.t_final, 2.0);
        assert_eq!(cfg.a, 1.0);
    }

    fn field_family(idx: u8) -> VelocityField {
        match idx % 3 {
            0 => unit_speed(),
            1 => VelocityField::constant(2.0).unwrap(),
            _ => VelocityField::affine(1.0, 1.0).unwrap(),
        }
    }

    prop_compose! {
        fn arb_positive_measure()(
            atoms in prop::collection::vec((0.05f64..0.95, 0.1f64..1.5), 1..5)
        ) -> AtomicMeasure {
            AtomicMeasure::new(atoms).unwrap()
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn residual_is_machine_zero(
            idx in 0u8..3,
            a in prop_oneof![Just(0.5f64), Just(1.0), Just(2.0)],
            mu0 in arb_positive_measure(),
        ) {
            let v = field_family(idx);
            let sol = solve_limit(&v, &rate(a), &mu0, 1.5, 0.05).unwrap();
            for r in residual_norms(&v, &mu0, &sol).unwrap() {
                prop_assert!(r <= 1e-12, "residual {r}");
            }
        }

        #[test]
        fn mass_bookkeeping_is_consistent(
            idx in 0u8..3,
            a in prop_oneof![Just(0.5f64), Just(1.0), Just(2.0)],
            mu0 in arb_positive_measure(),
        ) {
            let v = field_family(idx);
            let sol = solve_limit(&v, &rate(a), &mu0, 1.5, 0.05).unwrap();
            let total = mu0.tv_norm();
            let nodes = sol.trajectory().measures();
            for j in 0..nodes.len() {
                let balance = nodes[j].tv_norm() + sol.absorbed_mass()[j];
                prop_assert!((balance - total).abs() <= 1e-12, "node {j}: {balance} vs {total}");
                if j > 0 {
                    prop_assert!(nodes[j].tv_norm() <= nodes[j - 1].tv_norm() + 1e-12);
                    prop_assert!(
                        sol.absorbed_mass()[j] + 1e-12 >= sol.absorbed_mass()[j - 1]
                    );
                }
                prop_assert!(sol.boundary_mass()[j] <= nodes[j].tv_norm() + 1e-12);
            }
        }

        #[test]
        fn interior_evolution_is_plain_transport(
            idx in 0u8..3,
            mu0 in prop::collection::vec((0.05f64..0.5, 0.1f64..1.5), 1..5)
                .prop_map(|atoms| AtomicMeasure::new(atoms).unwrap()),
        ) {
            // Horizon short enough that no atom reaches the boundary.
            let v = field_family(idx);
            let sol = solve_limit(&v, &rate(1.0), &mu0, 0.2, 0.01).unwrap();
            let plain = transport(&v, &mu0, 0.2, 0.01).unwrap();
            prop_assert_eq!(sol.trajectory().measures(), plain.measures());
            prop_assert!(sol.absorbed_mass().iter().all(|&x| x == 0.0));
        }

        #[test]
        fn solution_map_is_dual_bl_continuous(
            idx in 0u8..3,
            a in prop_oneof![Just(0.5f64), Just(1.0)],
            mu0 in arb_positive_measure(),
            mu0_prime in arb_positive_measure(),
        ) {
            let v = field_family(idx);
            let t = 1.0;
            let lhs = solve_limit(&v, &rate(a), &mu0, t, 0.05).unwrap();
            let rhs = solve_limit(&v, &rate(a), &mu0_prime, t, 0.05).unwrap();
            let tau_lip = interior_time_lipschitz(&v, t, 400).unwrap();
            let c = continuous_dependence_bound(&v, &rate(a), t, tau_lip);
            let initial_gap = mu0.sub(&mu0_prime).dual_bl_norm().unwrap();
            let final_gap = lhs
                .trajectory()
                .terminal()
                .sub(rhs.trajectory().terminal())
                .dual_bl_norm()
                .unwrap();
            prop_assert!(
                final_gap <= c * initial_gap * (1.0 + 1e-6) + 1e-12,
                "{final_gap} > {c} * {initial_gap}"
            );
        }
    }
}
