//! The harmonic-mean limit system and ε-sweeps against it.
//!
//! All sweep points share one grid and one time discretization sized for the
//! smallest ε, so the differences `f_ε − f₀` measure the ε-effect only.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::coeff::{harmonic_mean, PeriodicCoefficient};
use crate::control::{hum_control, CgOptions, HumOutcome};
use crate::error::{Error, Result};
use crate::grid::{Grid, State};
use crate::pde::{forward_terminal, solve_forward, Discretization, Record, Sampling, StepperKind};
use crate::pde::least_squares_slope;
use crate::system::{SystemSpec, ValidatedSystem};

/// Gauss order for the harmonic mean of the limit coefficient.
const MEAN_ORDER: usize = 64;

/// `a(x/ε)` replaced by the constant `ā`; everything else untouched.
pub fn homogenized_spec(spec: &SystemSpec) -> Result<SystemSpec> {
    if spec.coefficient.is_constant() {
        return Ok(SystemSpec {
            coefficient: PeriodicCoefficient::constant(spec.coefficient.value(0.0))?,
            ..spec.clone()
        });
    }
    let mean = harmonic_mean(&spec.coefficient, MEAN_ORDER)?;
    Ok(SystemSpec {
        coefficient: PeriodicCoefficient::constant(mean)?,
        ..spec.clone()
    })
}

pub fn homogenized_system(system: &ValidatedSystem) -> Result<ValidatedSystem> {
    let spec = homogenized_spec(&system.spec)?;
    system.with_coefficient(spec.coefficient)
}

/// Shared discretization and solver settings of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct SweepOptions {
    pub points: usize,
    /// Time steps on `(0, T)`; `None` picks the smallest count with `Δt <= h`.
    pub steps: Option<usize>,
    /// Penalty; `None` means `h²`.
    pub eta: Option<f64>,
    pub cg: CgOptions,
    pub sampling: Sampling,
    pub stepper: StepperKind,
}

impl SweepOptions {
    pub fn new(points: usize) -> Self {
        Self {
            points,
            steps: None,
            eta: None,
            cg: CgOptions::default(),
            sampling: Sampling::Harmonic,
            stepper: StepperKind::Diagonal,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.points)
    }

    pub fn eta(&self) -> Result<f64> {
        Ok(self.eta.unwrap_or_else(|| {
            let h = 1.0 / (self.points as f64 + 1.0);
            h * h
        }))
    }

    pub fn discretization(&self, horizon: f64) -> Result<Discretization> {
        let grid = self.grid()?;
        match self.steps {
            Some(m) => Discretization::new(grid, m, 0.0, horizon),
            None => Discretization::auto(grid, 0.0, horizon),
        }
    }
}

/// Reference control `f₀`: HUM on the homogenized system. `u0` is in
/// canonical coordinates.
pub fn homogenized_control(
    system: &ValidatedSystem,
    u0: &State,
    options: &SweepOptions,
) -> Result<HumOutcome> {
    let hom = homogenized_system(system)?;
    let dynamics = hom.dynamics(options.grid()?, options.sampling, options.stepper)?;
    let disc = options.discretization(system.spec.horizon)?;
    hum_control(&dynamics, &disc, u0, options.eta()?, options.cg)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub epsilon: f64,
    pub cost: f64,
    pub terminal_norm: f64,
    pub iterations: usize,
    /// `‖f_ε − f₀‖_{L²((0,T)×ω)}`.
    pub control_distance: f64,
    pub relative_distance: f64,
    /// `|‖f_ε‖² − ‖f₀‖²| / ‖f₀‖²`.
    pub norm_gap: f64,
    /// `‖u_ε(T) − u(T)‖` with `f₀` driving both systems.
    pub state_distance: f64,
    /// Largest `‖u_ε(t) − u(t)‖` over the recorded times.
    pub state_distance_max: f64,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub reference_cost: f64,
    pub reference_terminal_norm: f64,
    pub reference_iterations: usize,
    pub eta: f64,
    pub points: usize,
    pub steps: usize,
    pub records: Vec<SweepRecord>,
    /// Least-squares slope of `ln cost` against `ln(1/ε)`.
    pub cost_slope: f64,
    pub cost_ratio: f64,
    /// Each relative distance at most 1.1 times its predecessor.
    pub distance_monotone: bool,
    pub final_relative_distance: f64,
    pub final_norm_gap: f64,
    pub state_distance_slope: f64,
}

fn check_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::InvalidParameter("eps_list is empty".into()));
    }
    for w in eps_list.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::InvalidParameter(format!(
                "eps_list must be strictly decreasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Control and state homogenization sweep. `u0` is in canonical
/// coordinates.
pub fn convergence_sweep(
    system: &ValidatedSystem,
    u0: &State,
    eps_list: &[f64],
    options: &SweepOptions,
) -> Result<SweepResult> {
    check_eps_list(eps_list)?;
    let grid = options.grid()?;
    let smallest = eps_list[eps_list.len() - 1];
    if !system.spec.coefficient.is_constant() {
        grid.check_resolution(smallest)?;
    }
    let systems: Vec<ValidatedSystem> = eps_list
        .iter()
        .map(|&e| system.with_epsilon(e))
        .collect::<Result<_>>()?;
    let disc = options.discretization(system.spec.horizon)?;
    let eta = options.eta()?;
    let snapshots = (disc.steps / 50).max(1);

    let hom = homogenized_system(system)?;
    let hom_dyn = hom.dynamics(grid, options.sampling, options.stepper)?;
    let reference = hum_control(&hom_dyn, &disc, u0, eta, options.cg)?;
    let f0 = reference
        .result
        .segments
        .first()
        .cloned()
        .unwrap_or_else(|| hom_dyn.zero_control(&disc));
    let hom_traj = solve_forward(&hom_dyn, &disc, u0, Some(&f0), Record::Every(snapshots))?;
    let f0_norm = f0.norm();

    let records: Vec<SweepRecord> = systems
        .par_iter()
        .map(|sys| -> Result<SweepRecord> {
            let start = Instant::now();
            let dynamics = sys.dynamics(grid, options.sampling, options.stepper)?;
            let out = hum_control(&dynamics, &disc, u0, eta, options.cg)?;
            let f = out
                .result
                .segments
                .first()
                .cloned()
                .unwrap_or_else(|| dynamics.zero_control(&disc));
            let distance = f.distance(&f0);
            let traj = solve_forward(&dynamics, &disc, u0, Some(&f0), Record::Every(snapshots))?;
            let mut state_max: f64 = 0.0;
            for (a, b) in traj.states.iter().zip(&hom_traj.states) {
                let mut d = a.clone();
                d.axpy(-1.0, b);
                state_max = state_max.max(d.norm(&grid));
            }
            let mut end = traj.last().clone();
            end.axpy(-1.0, hom_traj.last());
            let cost = out.result.cost;
            let (relative, gap) = if f0_norm > 0.0 {
                (distance / f0_norm, (cost * cost - f0_norm * f0_norm).abs() / (f0_norm * f0_norm))
            } else {
                (distance, cost * cost)
            };
            log::info!(
                "ε = {:.5}: cost {:.6e}, ‖f_ε − f₀‖/‖f₀‖ = {:.3e}, {} CG iterations",
                sys.spec.epsilon,
                cost,
                relative,
                out.result.iterations
            );
            Ok(SweepRecord {
                epsilon: sys.spec.epsilon,
                cost,
                terminal_norm: out.result.terminal_norm,
                iterations: out.result.iterations,
                control_distance: distance,
                relative_distance: relative,
                norm_gap: gap,
                state_distance: end.norm(&grid),
                state_distance_max: state_max,
                runtime_seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<_>>()?;

    let log_cost: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.cost > 0.0)
        .map(|r| ((1.0 / r.epsilon).ln(), r.cost.ln()))
        .collect();
    let log_state: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.state_distance > 0.0)
        .map(|r| ((1.0 / r.epsilon).ln(), r.state_distance.ln()))
        .collect();
    let max_cost = records.iter().map(|r| r.cost).fold(0.0, f64::max);
    let min_cost = records.iter().map(|r| r.cost).fold(f64::INFINITY, f64::min);
    let last = records.last().expect("non-empty sweep");
    Ok(SweepResult {
        reference_cost: f0_norm,
        reference_terminal_norm: reference.result.terminal_norm,
        reference_iterations: reference.result.iterations,
        eta,
        points: grid.len(),
        steps: disc.steps,
        cost_slope: if log_cost.len() >= 2 { least_squares_slope(&log_cost) } else { 0.0 },
        cost_ratio: if min_cost > 0.0 { max_cost / min_cost } else { 1.0 },
        distance_monotone: records
            .windows(2)
            .all(|w| w[1].relative_distance <= 1.1 * w[0].relative_distance),
        final_relative_distance: last.relative_distance,
        final_norm_gap: last.norm_gap,
        state_distance_slope: if log_state.len() >= 2 { least_squares_slope(&log_state) } else { 0.0 },
        records,
    })
}

/// Terminal state of a system driven by a given control; used to compare
/// `f₀` against the oscillating dynamics.
pub fn terminal_under(
    system: &ValidatedSystem,
    u0: &State,
    f: &crate::pde::ControlField,
    options: &SweepOptions,
) -> Result<State> {
    let dynamics = system.dynamics(options.grid()?, options.sampling, options.stepper)?;
    let disc = options.discretization(system.spec.horizon)?;
    forward_terminal(&dynamics, &disc, u0, Some(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Interval;
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    fn spec(a: PeriodicCoefficient, n: usize) -> SystemSpec {
        if n == 1 {
            SystemSpec::new(
                DMatrix::zeros(1, 1),
                DMatrix::identity(1, 1),
                a,
                0.1,
                Interval::new(0.3, 0.7).unwrap(),
                0.5,
            )
            .unwrap()
        } else {
            SystemSpec::new(
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
                DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
                a,
                0.1,
                Interval::new(0.3, 0.8).unwrap(),
                0.5,
            )
            .unwrap()
        }
    }

    #[test]
    fn limit_coefficients() {
        let c = homogenized_spec(&spec(PeriodicCoefficient::constant(3.0).unwrap(), 1)).unwrap();
        assert_eq!(c.coefficient.value(0.3), 3.0);
        let r = homogenized_spec(&spec(PeriodicCoefficient::reciprocal_sin(2.0, 1.0).unwrap(), 1)).unwrap();
        assert!((r.coefficient.value(0.0) - 0.5).abs() < 1e-12);
        let s = homogenized_spec(&spec(PeriodicCoefficient::sin(2.0, 1.0).unwrap(), 2)).unwrap();
        assert!((s.coefficient.value(0.0) - 3f64.sqrt()).abs() < 1e-10);
        assert!(s.coefficient.is_constant());
    }

    #[test]
    fn zero_data_gives_zero_reference() {
        let sys = spec(PeriodicCoefficient::sin(2.0, 1.0).unwrap(), 2).validate().unwrap();
        let options = SweepOptions::new(200);
        let out = homogenized_control(&sys, &State::zeros(2, 200), &options).unwrap();
        assert_eq!(out.result.cost, 0.0);
    }

    #[test]
    fn constant_sweep_is_degenerate() {
        let sys = spec(PeriodicCoefficient::constant(1.0).unwrap(), 1).validate().unwrap();
        let options = SweepOptions::new(60);
        let grid = options.grid().unwrap();
        let u0 = State::from_components(vec![grid.sample(|x| (PI * x).sin())]).unwrap();
        let sweep = convergence_sweep(&sys, &u0, &[0.5, 0.25], &options).unwrap();
        for r in &sweep.records {
            assert!(r.control_distance <= 1e-12 * sweep.reference_cost);
            assert!(r.state_distance <= 1e-12);
        }
    }

    #[test]
    fn reference_ignores_epsilon() {
        let sys = spec(PeriodicCoefficient::sin(2.0, 1.0).unwrap(), 1).validate().unwrap();
        let options = SweepOptions::new(200);
        let grid = options.grid().unwrap();
        let u0 = State::from_components(vec![grid.sample(|x| (PI * x).sin())]).unwrap();
        let a = homogenized_control(&sys, &u0, &options).unwrap();
        let b = homogenized_control(&sys.with_epsilon(0.05).unwrap(), &u0, &options).unwrap();
        assert!(a.result.segments[0].distance(&b.result.segments[0]) <= 1e-6 * a.result.cost);
    }

    #[test]
    fn sweep_rejects_bad_lists_before_solving() {
        let sys = spec(PeriodicCoefficient::sin(2.0, 1.0).unwrap(), 1).validate().unwrap();
        let options = SweepOptions::new(200);
        let u0 = State::zeros(1, 200);
        assert!(matches!(
            convergence_sweep(&sys, &u0, &[0.1, 0.01], &options),
            Err(Error::Resolution(_))
        ));
        assert!(convergence_sweep(&sys, &u0, &[0.05, 0.1], &options).is_err());
        assert!(convergence_sweep(&sys, &u0, &[], &options).is_err());
    }
}
