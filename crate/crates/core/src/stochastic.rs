//! Particle-system realization of the sticky-boundary evolution.
//!
//! Each of `count` independent particles draws an initial position from
//! the normalized initial datum and an exponential gate delay with rate
//! `a`, rides the deterministic flow to the boundary, and is removed
//! (`gated`) once it has spent its delay parked there. The survival
//! probability of one particle at time `t` is exactly the normalized
//! analytic mass `‖μ_t‖ / ‖μ_0‖`, which is what the reports compare
//! against.
//!
//! Randomness is fully reproducible: particle `i` reads from stream `i`
//! of a counter-based generator seeded with the run's seed, so reports
//! are bit-identical across reruns and independent of evaluation order.
//! Particles sharing an initial position (always the case for atomic
//! initial data) share one characteristic computation.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flow::{hitting_time, Trajectory, VelocityField};
use crate::limit::LimitSolution;
use crate::measures::{AtomicMeasure, DensitySpec};
use crate::regularized::AbsorptionParams;
use crate::{Error, Result};

/// Bin count of the interior histogram over `[0, 1)`.
pub const INTERIOR_BINS: usize = 20;

/// Quadrature atoms used for a density's analytic survival curve.
pub const DEFAULT_ANALYTIC_QUADRATURE: usize = 1000;

/// The initialization law for the particle system. Atoms sample a
/// categorical distribution on the (normalized) weights; a density
/// samples by inverse CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialDistribution {
    Atoms(AtomicMeasure),
    Density(DensitySpec),
}

/// One simulated particle: where it started, when it reaches the
/// boundary (`+∞` if never), and when its gate closes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub position: f64,
    pub arrival_time: f64,
    pub gate_time: f64,
}

impl Particle {
    /// A particle survives strictly until its gate time.
    pub fn alive_at(&self, t: f64) -> bool {
        t < self.gate_time
    }
}

/// The full particle state of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    seed: u64,
    rate: f64,
    particles: Vec<Particle>,
}

impl ParticleEnsemble {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn survivors_at(&self, t: f64) -> usize {
        self.particles.iter().filter(|p| p.alive_at(t)).count()
    }
}

/// One evaluation time of an [`EmpiricalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub time: f64,
    /// Particles not yet gated.
    pub survivor_count: usize,
    /// Survivors parked at `x = 1`.
    pub boundary_count: usize,
    /// Survivors in the interior, binned uniformly over `[0, 1)`.
    pub interior_histogram: Vec<usize>,
    /// Analytic survival probability at this time.
    pub analytic_mass: f64,
    /// Binomial standard error in count units,
    /// `sqrt(count · p · (1 - p))`.
    pub standard_error: f64,
    /// `(survivor_count - count · p) / standard_error` (zero when the
    /// standard error vanishes and the count is exact).
    pub z: f64,
}

/// Survivor statistics of one simulation run at the requested times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub seed: u64,
    pub count: usize,
    pub rate: f64,
    pub rows: Vec<ReportRow>,
}

/// Outcome of checking an empirical report against an analytic solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonVerdict {
    /// True when every `|z|` is at most 3.
    pub pass: bool,
    pub z_scores: Vec<f64>,
}

/// Normalized atoms `(position, weight, arrival)` backing the analytic
/// survival curve `p(t) = Σ w̄_i · exp(-a · max(0, t - τ_i))`.
struct AnalyticLaw {
    atoms: Vec<(f64, f64)>,
    rate: f64,
}

impl AnalyticLaw {
    fn survival(&self, t: f64) -> f64 {
        self.atoms
            .iter()
            .map(|&(tau, weight)| weight * (-self.rate * (t - tau).max(0.0)).exp())
            .sum()
    }
}

enum Sampler {
    Categorical { positions: Vec<f64>, cumulative: Vec<f64> },
    InverseCdf(DensitySpec),
}

impl Sampler {
    fn draw(&self, u: f64) -> Result<f64> {
        match self {
            Sampler::Categorical { positions, cumulative } => {
                let total = *cumulative.last().expect("categorical law is non-empty");
                let target = u * total;
                let idx = cumulative
                    .partition_point(|&c| c <= target)
                    .min(positions.len() - 1);
                Ok(positions[idx])
            }
            Sampler::InverseCdf(density) => density.quantile(u),
        }
    }
}

fn build_sampler(init: &InitialDistribution) -> Result<Sampler> {
    match init {
        InitialDistribution::Atoms(m) => {
            if !m.is_positive() {
                return Err(Error::SignedInitialData);
            }
            if m.total_mass() <= 0.0 {
                return Err(Error::NotNormalizable);
            }
            let positions = m.atoms().iter().map(|a| a.position).collect();
            let mut cum = 0.0;
            let cumulative = m
                .atoms()
                .iter()
                .map(|a| {
                    cum += a.weight;
                    cum
                })
                .collect();
            Ok(Sampler::Categorical { positions, cumulative })
        }
        InitialDistribution::Density(d) => {
            if d.total_mass() <= 0.0 {
                return Err(Error::NotNormalizable);
            }
            Ok(Sampler::InverseCdf(d.clone()))
        }
    }
}

fn analytic_law(
    v: &VelocityField,
    rate: f64,
    init: &InitialDistribution,
) -> Result<AnalyticLaw> {
    let measure = match init {
        InitialDistribution::Atoms(m) => m.clone(),
        InitialDistribution::Density(d) => {
            crate::study::density_to_atoms(d, DEFAULT_ANALYTIC_QUADRATURE)?
        }
    };
    let total = measure.total_mass();
    let atoms = measure
        .atoms()
        .iter()
        .map(|a| Ok((hitting_time(v, a.position)?, a.weight / total)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalyticLaw { atoms, rate })
}

/// Positions and exponential delays for each particle, drawn from the
/// particle's own generator stream.
fn particle_draws(
    sampler: &Sampler,
    rate: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let position = sampler.draw(rng.gen::<f64>())?;
            let uniform: f64 = rng.gen();
            let delay = if rate > 0.0 {
                -(1.0 - uniform).ln() / rate
            } else {
                f64::INFINITY
            };
            Ok((position, delay))
        })
        .collect()
}

/// Per distinct initial position: boundary arrival and interior position
/// at each requested time.
fn characteristics(
    v: &VelocityField,
    draws: &[(f64, f64)],
    times: &[f64],
    horizon: f64,
) -> Result<HashMap<u64, (f64, Vec<f64>)>> {
    let mut map = HashMap::new();
    for &(position, _) in draws {
        let key = position.to_bits();
        if map.contains_key(&key) {
            continue;
        }
        let trajectory = Trajectory::new(v, position, horizon)?;
        let arrival = trajectory.hit_time().unwrap_or(f64::INFINITY);
        let at_times = times.iter().map(|&t| trajectory.position_at(t)).collect();
        map.insert(key, (arrival, at_times));
    }
    Ok(map)
}

fn validate_run(count: usize, times: &[f64]) -> Result<f64> {
    if count == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let mut horizon = 0.0f64;
    for &t in times {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidTime { t });
        }
        horizon = horizon.max(t);
    }
    Ok(horizon)
}

/// Simulates the particle states up to `horizon` without evaluating any
/// report rows.
pub fn ensemble(
    v: &VelocityField,
    a: &AbsorptionParams,
    init: &InitialDistribution,
    count: usize,
    seed: u64,
    horizon: f64,
) -> Result<ParticleEnsemble> {
    let horizon = validate_run(count, &[horizon])?;
    let rate = a.rate();
    let sampler = build_sampler(init)?;
    let draws = particle_draws(&sampler, rate, count, seed)?;
    let map = characteristics(v, &draws, &[], horizon)?;
    let particles = draws
        .iter()
        .map(|&(position, delay)| {
            let arrival = map[&position.to_bits()].0;
            Particle {
                position,
                arrival_time: arrival,
                gate_time: arrival + delay,
            }
        })
        .collect();
    Ok(ParticleEnsemble { seed, rate, particles })
}

/// Runs the particle system and tallies survivors, boundary occupancy,
/// and the interior histogram at each requested time, alongside the
/// analytic survival curve of the same data.
pub fn simulate(
    v: &VelocityField,
    a: &AbsorptionParams,
    init: &InitialDistribution,
    count: usize,
    seed: u64,
    times: &[f64],
) -> Result<EmpiricalReport> {
    let horizon = validate_run(count, times)?;
    let rate = a.rate();
    let sampler = build_sampler(init)?;
    let law = analytic_law(v, rate, init)?;
    let draws = particle_draws(&sampler, rate, count, seed)?;
    let map = characteristics(v, &draws, times, horizon)?;

    let rows = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut survivors = 0usize;
            let mut boundary = 0usize;
            let mut histogram = vec![0usize; INTERIOR_BINS];
            for &(position, delay) in &draws {
                let (arrival, at_times) = &map[&position.to_bits()];
                if *arrival <= t {
                    if t < arrival + delay {
                        survivors += 1;
                        boundary += 1;
                    }
                } else {
                    // Interior particles cannot be gated.
                    survivors += 1;
                    let bin = ((at_times[k] * INTERIOR_BINS as f64) as usize)
                        .min(INTERIOR_BINS - 1);
                    histogram[bin] += 1;
                }
            }
            let p = law.survival(t).clamp(0.0, 1.0);
            let standard_error = (count as f64 * p * (1.0 - p)).sqrt();
            let z = z_score(survivors, count, p, standard_error);
            ReportRow {
                time: t,
                survivor_count: survivors,
                boundary_count: boundary,
                interior_histogram: histogram,
                analytic_mass: p,
                standard_error,
                z,
            }
        })
        .collect();

    Ok(EmpiricalReport { seed, count, rate, rows })
}

fn z_score(survivors: usize, count: usize, p: f64, standard_error: f64) -> f64 {
    let deviation = survivors as f64 - count as f64 * p;
    if standard_error > 0.0 {
        deviation / standard_error
    } else if deviation == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Recomputes each row's z-score against an analytic solution's
/// normalized mass and passes when every `|z|` is at most 3. The
/// solution must carry positive initial mass and contain every report
/// time on its grid; physics mismatches (a different rate or velocity)
/// are precisely what the z-test is meant to expose, so they are not
/// validated away.
pub fn compare_to_analytic(
    report: &EmpiricalReport,
    sol: &LimitSolution,
) -> Result<ComparisonVerdict> {
    let initial_mass = sol.trajectory().measures()[0].tv_norm();
    if initial_mass <= 0.0 {
        return Err(Error::NotNormalizable);
    }
    let mut z_scores = Vec::with_capacity(report.rows.len());
    for row in &report.rows {
        let j = sol.trajectory().node_index_at(row.time)?;
        let p = (sol.trajectory().measures()[j].tv_norm() / initial_mass).clamp(0.0, 1.0);
        let se = (report.count as f64 * p * (1.0 - p)).sqrt();
        z_scores.push(z_score(row.survivor_count, report.count, p, se));
    }
    let pass = z_scores.iter().all(|z| z.abs() <= 3.0);
    Ok(ComparisonVerdict { pass, z_scores })
}
