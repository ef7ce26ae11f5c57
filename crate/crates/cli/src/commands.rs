//! Subcommand drivers. Each returns a JSON result block and writes its CSV
//! files into the output directory.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use homctl::coeff::{build_transform, harmonic_mean, TransformOptions};
use homctl::control::{build_space, hum_control, three_stage_control, CgOptions, ControlResult, ThreeStageOptions};
use homctl::error::Error;
use homctl::kalman::{block_cascade_reduction, kalman_rank, validate_h2, CanonicalForm};
use homctl::pde::{solve_forward, ControlField, Discretization, Dynamics, Record, Sampling, StepperKind};
use homctl::spectral::{
    coupled_spectrum, low_frequency_cutoff, omega_mass_report, schrodinger_spectrum, scalar_spectrum_with,
    spectral_gap_report,
};
use homctl::homog::{convergence_sweep, SweepOptions};
use homctl::system::{SystemSpec, ValidatedSystem};
use homctl::{Grid, Interval, State};

use crate::config::{Coordinates, Method, RunConfig};
use crate::output::{fmt_f, CsvWriter, Status};

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Results of a command. A `failure` still gets its results written.
pub struct Report {
    pub results: Value,
    pub failure: Option<(Status, String)>,
}

impl From<Value> for Report {
    fn from(results: Value) -> Self {
        Self { results, failure: None }
    }
}

fn matrices(config: &RunConfig) -> (DMatrix<f64>, DMatrix<f64>) {
    let s = &config.system;
    (
        DMatrix::from_row_slice(s.n, s.n, &s.a),
        DMatrix::from_row_slice(s.n, s.m, &s.b),
    )
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn spec_for(config: &RunConfig, epsilon: f64) -> Result<SystemSpec, Error> {
    let (a, b) = matrices(config);
    let s = &config.system;
    SystemSpec::new(
        a,
        b,
        s.coefficient.clone(),
        epsilon,
        Interval::new(s.omega[0], s.omega[1])?,
        s.horizon,
    )
}

fn validated(config: &RunConfig) -> Result<ValidatedSystem, Error> {
    spec_for(config, config.system.epsilon)?.validate()
}

fn grid(config: &RunConfig) -> Result<Grid, Error> {
    Grid::new(config.discretization.points)
}

/// `amplitude · sin(mode πx)` in one component, mapped to canonical
/// coordinates when given in the original ones.
pub fn initial_state(config: &RunConfig, canonical: &CanonicalForm, grid: &Grid) -> Result<State, Error> {
    let init = &config.initial;
    let n = config.system.n;
    let mut parts = vec![vec![0.0; grid.len()]; n];
    parts[init.component - 1] = grid.sample(|x| init.amplitude * (init.mode as f64 * PI * x).sin());
    if init.coordinates == Coordinates::Original {
        let mut mapped = vec![vec![0.0; grid.len()]; n];
        for j in 0..grid.len() {
            let y = DVector::from_iterator(n, parts.iter().map(|p| p[j]));
            let u = canonical.to_canonical(&y);
            for i in 0..n {
                mapped[i][j] = u[i];
            }
        }
        parts = mapped;
    }
    State::from_components(parts)
}

fn to_original(canonical: &CanonicalForm, u: &State, j: usize) -> DVector<f64> {
    let n = u.components();
    canonical.to_original(&DVector::from_iterator(n, (0..n).map(|i| u.component(i)[j])))
}

pub fn kalman(config: &RunConfig) -> Result<Report, CommandError> {
    let (a, b) = matrices(config);
    let n = config.system.n;
    let rank = kalman_rank(&a, &b, None)?;
    let h2 = validate_h2(&a, config.system.coefficient.a_max())?;
    let mut out = json!({
        "n": n,
        "m": config.system.m,
        "rank": rank,
        "controllable": rank == n,
        "spectrum": h2,
    });
    if rank < n {
        let reason = Error::NotControllable { rank, n }.to_string();
        return Ok(Report { results: out, failure: Some((Status::HypothesisViolation, reason)) });
    }
    if let Err(e) = h2.ensure() {
        return Ok(Report { results: out, failure: Some((Status::HypothesisViolation, e.to_string())) });
    }
    let form = block_cascade_reduction(&a, &b)?;
    out["canonical"] = json!({
        "C": matrix_rows(&form.c),
        "D": matrix_rows(&form.d),
        "P": matrix_rows(&form.p),
        "blocks": form.blocks,
        "condition": form.condition,
        "similarity_residual": form.similarity_residual(&a),
    });
    Ok(out.into())
}

pub fn spectrum(config: &RunConfig, dir: &Path) -> Result<Report, CommandError> {
    let system = validated(config)?;
    let spec = &system.spec;
    let grid = grid(config)?;
    let count = config.spectrum_count;
    let scalars = scalar_spectrum_with(
        &spec.coefficient,
        spec.epsilon,
        &grid,
        count,
        spec.n(),
        config.discretization.sampling,
    )?;
    let pairs = coupled_spectrum(&scalars, &system.canonical.c)?;
    let mut csv = CsvWriter::create(&dir.join("spectrum.csv"), &["index", "k", "i", "lambda", "sigma", "mu"])?;
    for (idx, p) in pairs.iter().enumerate() {
        csv.row(&[
            (idx + 1).to_string(),
            p.k.to_string(),
            p.i.to_string(),
            fmt_f(p.lambda),
            fmt_f(p.sigma),
            fmt_f(p.mu),
        ])?;
    }
    csv.finish()?;

    let transform_cells = (grid.len() + 1).max((20.0 / spec.epsilon).ceil() as usize);
    let transform = build_transform(&spec.coefficient, spec.epsilon, transform_cells, TransformOptions::default())?;
    let a_bar = transform.a_bar();
    let cutoff = low_frequency_cutoff(spec.epsilon, config.control.cutoff)?.min(count.saturating_sub(1).max(1));
    let gaps = spectral_gap_report(&pairs, a_bar, cutoff, 0.0)?;
    let low: Vec<_> = pairs.iter().filter(|p| p.k <= cutoff).cloned().collect();
    let masses = omega_mass_report(&low, &grid, &spec.omega)?;
    Ok(json!({
        "pairs": pairs.len(),
        "lowest_mu": pairs.first().map(|p| p.mu),
        "a_bar": a_bar,
        "harmonic_mean": harmonic_mean(&spec.coefficient, 32)?,
        "cutoff": cutoff,
        "gaps": gaps,
        "omega_mass": masses,
    })
    .into())
}

/// Control of one run plus the dynamics it acted on.
struct Synthesis {
    result: ControlResult,
    dynamics: Dynamics,
    smoothing: usize,
    extra: Value,
}

fn synthesize(config: &RunConfig, system: &ValidatedSystem, u0: &State) -> Result<Synthesis, CommandError> {
    let grid = grid(config)?;
    let d = &config.discretization;
    let dynamics = system.dynamics(grid, d.sampling, StepperKind::Diagonal)?;
    let horizon = system.spec.horizon;
    let cg = CgOptions {
        tol: config.control.cg_tol,
        max_iter: config.control.max_iter,
    };
    let eta = config.control.eta;
    match config.control.method {
        Method::Hum => {
            let disc = match d.steps {
                Some(m) => Discretization::new(grid, m, 0.0, horizon)?,
                None => Discretization::auto(grid, 0.0, horizon)?,
            }
            .with_smoothing(d.smoothing);
            let out = hum_control(&dynamics, &disc, u0, eta, cg)?;
            Ok(Synthesis {
                extra: json!({ "steps": disc.steps, "relative_residual": out.relative_residual }),
                result: out.result,
                dynamics,
                smoothing: d.smoothing,
            })
        }
        Method::ThreeStage => {
            let space = build_space(&dynamics, system.spec.epsilon, config.control.cutoff)?;
            let options = ThreeStageOptions {
                cutoff_constant: config.control.cutoff,
                eta,
                cg,
                stage_steps: d.steps.map(|m| (m / 3).max(1)),
            };
            let out = three_stage_control(&dynamics, &space, u0, horizon, options)?;
            Ok(Synthesis {
                extra: json!({
                    "space_dim": out.space_dim,
                    "decay": out.decay,
                    "stage1_ridge": out.stage1.ridge,
                    "stage3_relative_residual": out.stage3.relative_residual,
                }),
                result: out.result,
                dynamics,
                smoothing: homctl::pde::DEFAULT_SMOOTHING,
            })
        }
    }
}

fn window(grid: Grid, t0: f64, t1: f64) -> Result<Discretization, Error> {
    Discretization::auto(grid, t0, t1)
}

/// Replays the synthesized control over `(0, T)`, returning `(t, u(t))`
/// snapshots in canonical coordinates.
fn replay(
    synthesis: &Synthesis,
    u0: &State,
    horizon: f64,
    snapshots: usize,
) -> Result<Vec<(f64, State)>, Error> {
    let dynamics = &synthesis.dynamics;
    let grid = dynamics.grid;
    let every = |steps: usize| Record::Every((steps / snapshots.max(1)).max(1));
    let mut out = vec![(0.0, u0.clone())];
    let mut u = u0.clone();
    let mut t = 0.0;
    let push = |traj: homctl::pde::Trajectory, out: &mut Vec<(f64, State)>| {
        for (time, state) in traj.times.into_iter().zip(traj.states).skip(1) {
            out.push((time, state));
        }
    };
    let gap = 1e-12 * horizon.max(1.0);
    for seg in &synthesis.result.segments {
        if seg.t0 > t + gap {
            let disc = window(grid, t, seg.t0)?;
            let traj = solve_forward(dynamics, &disc, &u, None, every(disc.steps))?;
            u = traj.last().clone();
            push(traj, &mut out);
        }
        let t1 = seg.t0 + seg.steps as f64 * seg.dt;
        let disc = Discretization::unchecked(grid, seg.steps, seg.t0, t1)?.with_smoothing(synthesis.smoothing);
        let traj = solve_forward(dynamics, &disc, &u, Some(seg), every(disc.steps))?;
        u = traj.last().clone();
        push(traj, &mut out);
        t = t1;
    }
    if horizon > t + gap {
        let disc = window(grid, t, horizon)?;
        let traj = solve_forward(dynamics, &disc, &u, None, every(disc.steps))?;
        push(traj, &mut out);
    }
    Ok(out)
}

fn write_control_csv(path: &Path, segments: &[ControlField], grid: &Grid) -> std::io::Result<()> {
    let inputs = segments.first().map_or(1, |s| s.inputs);
    let mut header = vec!["t".to_string(), "x".to_string()];
    header.extend((1..=inputs).map(|i| format!("f{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = CsvWriter::create(path, &header)?;
    for seg in segments {
        for step in 0..seg.steps {
            let t = fmt_f(seg.time(step));
            for (idx, &node) in seg.mask.iter().enumerate() {
                let mut row = vec![t.clone(), fmt_f(grid.x(node))];
                row.extend((0..seg.inputs).map(|i| fmt_f(seg.slice(step, i)[idx])));
                csv.row(&row)?;
            }
        }
    }
    csv.finish()
}

pub fn control(config: &RunConfig, dir: &Path) -> Result<Report, CommandError> {
    let system = validated(config)?;
    let grid = grid(config)?;
    let u0 = initial_state(config, &system.canonical, &grid)?;
    let norm0 = u0.norm(&grid);
    let synthesis = synthesize(config, &system, &u0)?;
    let result = &synthesis.result;
    write_control_csv(&dir.join("control.csv"), &result.segments, &grid)?;

    let mut replayed = None;
    if config.output.dump_trajectory {
        let snaps = replay(&synthesis, &u0, system.spec.horizon, config.output.snapshots)?;
        let n = u0.components();
        let mut header = vec!["t".to_string(), "x".to_string()];
        header.extend((1..=n).map(|i| format!("u{i}")));
        header.extend((1..=n).map(|i| format!("y{i}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut csv = CsvWriter::create(&dir.join("trajectory.csv"), &header)?;
        for (t, state) in &snaps {
            for j in 0..grid.len() {
                let y = to_original(&system.canonical, state, j);
                let mut row = vec![fmt_f(*t), fmt_f(grid.x(j))];
                row.extend((0..n).map(|i| fmt_f(state.component(i)[j])));
                row.extend(y.iter().map(|v| fmt_f(*v)));
                csv.row(&row)?;
            }
        }
        csv.finish()?;
        replayed = snaps.last().map(|(_, s)| s.norm(&grid));
    }

    Ok(json!({
        "method": config.control.method,
        "initial_norm": norm0,
        "cost": result.cost,
        "terminal_norm": result.terminal_norm,
        "relative_terminal_norm": if norm0 > 0.0 { result.terminal_norm / norm0 } else { 0.0 },
        "terminal_bound": result.terminal_bound,
        "iterations": result.iterations,
        "eta": result.eta,
        "gramian_min_eig": result.gramian_min_eig,
        "stages": result.stage_breakdown,
        "segments": result.segments.len(),
        "replayed_terminal_norm": replayed,
        "details": synthesis.extra,
    })
    .into())
}

pub fn sweep(config: &RunConfig, dir: &Path) -> Result<Report, CommandError> {
    let system = validated(config)?;
    let d = &config.discretization;
    let options = SweepOptions {
        points: d.points,
        steps: d.steps,
        eta: Some(config.control.eta),
        cg: CgOptions {
            tol: config.control.cg_tol,
            max_iter: config.control.max_iter,
        },
        sampling: d.sampling,
        stepper: StepperKind::Diagonal,
    };
    let u0 = initial_state(config, &system.canonical, &options.grid()?)?;
    let result = convergence_sweep(&system, &u0, &config.system.eps_list, &options)?;
    let mut csv = CsvWriter::create(
        &dir.join("sweep.csv"),
        &[
            "epsilon",
            "cost",
            "terminal_norm",
            "iterations",
            "control_distance",
            "relative_distance",
            "norm_gap",
            "state_distance",
            "state_distance_max",
        ],
    )?;
    for r in &result.records {
        csv.row(&[
            fmt_f(r.epsilon),
            fmt_f(r.cost),
            fmt_f(r.terminal_norm),
            r.iterations.to_string(),
            fmt_f(r.control_distance),
            fmt_f(r.relative_distance),
            fmt_f(r.norm_gap),
            fmt_f(r.state_distance),
            fmt_f(r.state_distance_max),
        ])?;
    }
    csv.finish()?;
    let uniform = result.cost_ratio <= 3.0 && result.cost_slope.abs() <= 0.15;
    let converges =
        result.distance_monotone && result.final_relative_distance <= 0.1 && result.final_norm_gap <= 0.15;
    Ok(json!({
        "reference_cost": result.reference_cost,
        "reference_terminal_norm": result.reference_terminal_norm,
        "reference_iterations": result.reference_iterations,
        "eta": result.eta,
        "points": result.points,
        "steps": result.steps,
        "cost_slope": result.cost_slope,
        "cost_ratio": result.cost_ratio,
        "distance_monotone": result.distance_monotone,
        "final_relative_distance": result.final_relative_distance,
        "final_norm_gap": result.final_norm_gap,
        "state_distance_slope": result.state_distance_slope,
        "pass": { "uniform_cost": uniform, "homogenization": converges },
        "records": result.records,
    })
    .into())
}

pub fn transform_check(config: &RunConfig, dir: &Path) -> Result<Report, CommandError> {
    let s = &config.system;
    let eps = s.epsilon;
    let cells = ((20.0 / eps).ceil() as usize).max(4000);
    let t = build_transform(&s.coefficient, eps, cells, TransformOptions::default())?;
    let mut csv = CsvWriter::create(&dir.join("transform.csv"), &["x", "z", "r", "y", "g", "b"])?;
    for i in 0..t.x.len() {
        csv.row(&[t.x[i], t.z[i], t.r[i], t.y[i], t.g[i], t.b[i]].map(fmt_f))?;
    }
    csv.finish()?;

    let mut round_trip: f64 = 0.0;
    for i in 0..=1000 {
        let x = i as f64 / 1000.0;
        round_trip = round_trip
            .max((t.x_of_z(t.z_of_x(x)) - x).abs())
            .max((t.x_of_y(t.y_of_x(x)) - x).abs());
    }
    let count = config.spectrum_count;
    // Both sides need a fine grid; the run grid may be tuned for control.
    let points = config.discretization.points.max(4000);
    let grid = Grid::new(points)?;
    let direct = scalar_spectrum_with(&s.coefficient, eps, &grid, count, 1, Sampling::Harmonic)?;
    let schrodinger = schrodinger_spectrum(&t, points, count)?;
    let spectrum_diff = direct
        .iter()
        .zip(&schrodinger)
        .map(|(p, q)| (q - p.lambda).abs() / p.lambda)
        .fold(0.0, f64::max);
    let round_trip_ok = round_trip <= 1e-10;
    let spectrum_ok = spectrum_diff <= 1e-3;
    let out = json!({
        "epsilon": eps,
        "cells": cells,
        "points": points,
        "delta": t.delta,
        "a_bar": t.a_bar(),
        "length": t.length,
        "round_trip_error": round_trip,
        "spectrum_max_relative_difference": spectrum_diff,
        "direct_eigenvalues": direct.iter().map(|p| p.lambda).collect::<Vec<_>>(),
        "schrodinger_eigenvalues": schrodinger,
        "pass": { "round_trip": round_trip_ok, "spectrum": spectrum_ok },
    });
    let failure = (!(round_trip_ok && spectrum_ok)).then(|| {
        (
            Status::NumericalFailure,
            format!("transform check failed: round trip {round_trip:.3e}, spectrum {spectrum_diff:.3e}"),
        )
    });
    Ok(Report { results: out, failure })
}
