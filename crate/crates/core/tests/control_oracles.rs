use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use homctl::coeff::PeriodicCoefficient;
use homctl::control::{
    apply_gramian, build_space, free_decay, hum_control, optimality_defect, three_stage_control,
    CgOptions, ThreeStageOptions,
};
use homctl::pde::{assemble_operator, Discretization, Dynamics, Sampling, StepperKind};
use homctl::spectral::LowFrequencySpace;
use homctl::{Grid, Interval, State};

fn heat(points: usize) -> Dynamics {
    let grid = Grid::new(points).unwrap();
    let one = PeriodicCoefficient::constant(1.0).unwrap();
    let op = assemble_operator(&one, 1.0, &grid, Sampling::Midpoint).unwrap();
    Dynamics::new(
        grid,
        op,
        DMatrix::zeros(1, 1),
        DMatrix::identity(1, 1),
        Interval::new(0.3, 0.7).unwrap(),
        StepperKind::Diagonal,
    )
    .unwrap()
}

fn cascade(points: usize, eps: f64) -> Dynamics {
    let grid = Grid::new(points).unwrap();
    let a = PeriodicCoefficient::sin(2.0, 1.0).unwrap();
    let op = assemble_operator(&a, eps, &grid, Sampling::Midpoint).unwrap();
    Dynamics::new(
        grid,
        op,
        DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 1.0, 3.0]),
        DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        Interval::new(0.3, 0.8).unwrap(),
        StepperKind::Diagonal,
    )
    .unwrap()
}

fn sine(grid: &Grid, comps: usize) -> State {
    let mut parts = vec![grid.sample(|x| (PI * x).sin())];
    parts.resize(comps, vec![0.0; grid.len()]);
    State::from_components(parts).unwrap()
}

#[test]
fn hum_matches_dense_gramian_solve() {
    let d = heat(50);
    let grid = d.grid;
    let disc = Discretization::new(grid, 120, 0.0, 0.5).unwrap();
    let u0 = sine(&grid, 1);
    let eta = 1e-10;
    let out = hum_control(&d, &disc, &u0, eta, CgOptions { tol: 1e-13, max_iter: 2000 }).unwrap();
    assert!(out.result.terminal_norm / u0.norm(&grid) <= 1e-3);

    // Dense Λ in the grid inner product, column by column.
    let n = grid.len();
    let mut lambda = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = State::zeros(1, n);
        e.component_mut(0)[j] = 1.0;
        let col = apply_gramian(&d, &disc, &e).unwrap();
        lambda.set_column(j, &DVector::from_column_slice(col.as_slice()));
    }
    let y_free = homctl::pde::forward_terminal(&d, &disc, &u0, None).unwrap();
    let system = lambda + DMatrix::identity(n, n) * eta;
    let rhs = -DVector::from_column_slice(y_free.as_slice());
    let dense = system.lu().solve(&rhs).unwrap();
    let w = DVector::from_column_slice(out.w_star.as_slice());
    assert!((&w - &dense).norm() <= 1e-6 * dense.norm(), "{}", (&w - &dense).norm() / dense.norm());
}

#[test]
fn decreasing_penalty_never_raises_terminal_norm() {
    let d = cascade(200, 0.1);
    let disc = Discretization::new(d.grid, 200, 0.0, 0.5).unwrap();
    let u0 = sine(&d.grid, 2);
    let mut last = f64::INFINITY;
    for eta in [1e-4, 1e-6, 1e-8, 1e-10] {
        let out = hum_control(&d, &disc, &u0, eta, CgOptions { tol: 1e-12, max_iter: 4000 }).unwrap();
        assert!(out.result.terminal_norm <= last * (1.0 + 1e-6), "eta {eta}");
        assert!(out.result.terminal_norm <= out.result.terminal_bound.unwrap() * (1.0 + 1e-8));
        last = out.result.terminal_norm;
    }
}

#[test]
fn optimality_identity() {
    let d = cascade(200, 0.1);
    let disc = Discretization::new(d.grid, 200, 0.0, 0.5).unwrap();
    let u0 = sine(&d.grid, 2);
    let out = hum_control(&d, &disc, &u0, 1e-6, CgOptions { tol: 1e-13, max_iter: 4000 }).unwrap();
    let grid = d.grid;
    for k in 1..4 {
        let test = State::from_components(vec![
            grid.sample(|x| (k as f64 * PI * x).sin()),
            grid.sample(|x| x * (1.0 - x) * k as f64),
        ])
        .unwrap();
        let defect = optimality_defect(&d, &disc, &u0, &out, &test).unwrap();
        let (obs, w0) = homctl::pde::adjoint_observation(&d, &disc, &test).unwrap();
        let scale = out.result.segments[0].norm() * obs.norm() + u0.norm(&grid) * w0.norm(&grid);
        assert!(defect.abs() <= 1e-6 * scale, "{defect} vs {scale}");
    }
}

#[test]
fn two_mode_decay_slope_is_bracketed() {
    let d = cascade(300, 0.1);
    let space = LowFrequencySpace::from_operator(&d.operator, &d.grid, &d.c, 2).unwrap();
    let base = LowFrequencySpace::from_operator(&d.operator, &d.grid, &d.c, 3).unwrap();
    let first = space.next.clone();
    let second = base
        .members
        .iter()
        .chain(std::iter::once(&base.next))
        .find(|p| p.mu > first.mu * (1.0 + 1e-9))
        .unwrap()
        .clone();
    let mut u = first.state();
    u.axpy(1.0, &second.state());
    let (_, report) = free_decay(&d, &u, 0.0, 0.05, &space, None).unwrap();
    assert!(report.fitted_rate <= -first.mu * (1.0 - 1e-3));
    assert!(report.fitted_rate >= -second.mu * (1.0 + 1e-3));
}

#[test]
fn single_low_mode_leaves_stage_three_almost_nothing() {
    let d = cascade(600, 0.05);
    let space = build_space(&d, 0.05, 0.5).unwrap();
    let u0 = space.members[0].state();
    let options = ThreeStageOptions {
        cutoff_constant: 0.5,
        eta: d.grid.h().powi(2),
        cg: CgOptions::default(),
        stage_steps: None,
    };
    let out = three_stage_control(&d, &space, &u0, 0.3, options).unwrap();
    let b = out.result.stage_breakdown.unwrap();
    assert!(b.stage3_cost <= 1e-3 * b.stage1_cost);
    assert!(b.projection_residual <= 1e-6 * u0.norm(&d.grid));

    // Direct HUM over the full window is logged only: it has three times the
    // time to act, and null-control cost grows fast as the window shrinks.
    let disc = Discretization::auto(d.grid, 0.0, 0.3).unwrap();
    let direct = hum_control(&d, &disc, &u0, options.eta, CgOptions::default()).unwrap();
    println!(
        "three-stage / direct HUM over (0,T) cost ratio {:.3}",
        out.result.cost / direct.result.cost
    );

    // On the stage-1 window itself the two methods cost the same order.
    let window = Discretization::auto(d.grid, 0.0, 0.1).unwrap();
    let same = hum_control(&d, &window, &u0, 1e-8, CgOptions { tol: 1e-12, max_iter: 4000 }).unwrap();
    let ratio = b.stage1_cost / same.result.cost;
    println!("stage-1 / HUM over (0,T/3) cost ratio {ratio:.3}");
    assert!((0.1..=10.0).contains(&ratio));
}
