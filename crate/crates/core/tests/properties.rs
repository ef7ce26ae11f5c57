use std::f64::consts::PI;

use nalgebra::DMatrix;
use proptest::prelude::*;

use homctl::carleman::carleman_exponents;
use homctl::coeff::{build_transform, harmonic_mean, PeriodicCoefficient, TransformOptions};
use homctl::control::apply_gramian;
use homctl::kalman::{block_cascade_reduction, kalman_rank};
use homctl::pde::{
    adjoint_observation, assemble_operator, duality_defect, ControlField, Discretization, Dynamics,
    Sampling, StepperKind,
};
use homctl::{Grid, Interval, State};

fn dynamics(points: usize, mean: f64, amp: f64, eps: f64, stepper: StepperKind) -> Dynamics {
    let grid = Grid::new(points).unwrap();
    let a = PeriodicCoefficient::sin(mean, amp).unwrap();
    let op = assemble_operator(&a, eps, &grid, Sampling::Harmonic).unwrap();
    Dynamics::new(
        grid,
        op,
        DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 1.0, 3.0]),
        DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        Interval::new(0.3, 0.8).unwrap(),
        stepper,
    )
    .unwrap()
}

fn state_from(values: &[f64], points: usize) -> State {
    let grid = Grid::new(points).unwrap();
    let parts = (0..2)
        .map(|i| {
            grid.sample(|x| {
                values
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * ((k + 1 + i) as f64 * PI * x).sin())
                    .sum()
            })
        })
        .collect();
    State::from_components(parts).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn harmonic_mean_bounds(mean in 1.0f64..5.0, frac in 0.0f64..0.95) {
        let amp = frac * mean;
        let a = PeriodicCoefficient::sin(mean, amp).unwrap();
        let h = harmonic_mean(&a, 32).unwrap();
        prop_assert!(h <= mean * (1.0 + 1e-12));
        prop_assert!(h >= a.a_min() * (1.0 - 1e-12));
        let exact = (mean * mean - amp * amp).sqrt();
        prop_assert!((h - exact).abs() <= 1e-8 * exact);
    }

    #[test]
    fn transform_round_trip(mean in 1.5f64..4.0, frac in 0.0f64..0.8, x in 0.0f64..1.0) {
        let a = PeriodicCoefficient::sin(mean, frac * mean).unwrap();
        let t = build_transform(&a, 0.1, 400, TransformOptions::default()).unwrap();
        prop_assert!((t.x_of_z(t.z_of_x(x)) - x).abs() < 1e-10);
        prop_assert!((t.x_of_y(t.y_of_x(x)) - x).abs() < 1e-10);
    }

    #[test]
    fn cascade_reduction_is_a_similarity(
        entries in proptest::collection::vec(-4i32..=4, 9),
        b in proptest::collection::vec(-3i32..=3, 3),
    ) {
        let a = DMatrix::from_row_iterator(3, 3, entries.iter().map(|v| *v as f64));
        let b = DMatrix::from_row_iterator(3, 1, b.iter().map(|v| *v as f64));
        prop_assume!(kalman_rank(&a, &b, None).unwrap() == 3);
        let form = block_cascade_reduction(&a, &b).unwrap();
        prop_assert!(form.similarity_residual(&a) <= 1e-9 * (1.0 + a.amax()).powi(3));
        prop_assert!(form.condition.is_finite());
    }

    #[test]
    fn discrete_duality_is_exact(
        u in proptest::collection::vec(-1.0f64..1.0, 3),
        w in proptest::collection::vec(-1.0f64..1.0, 3),
        amp in 0.0f64..1.5,
        block in any::<bool>(),
        smoothing in 0usize..3,
    ) {
        let stepper = if block { StepperKind::Block } else { StepperKind::Diagonal };
        let d = dynamics(100, 2.0, amp, 0.2, stepper);
        let disc = Discretization::new(d.grid, 60, 0.0, 0.5).unwrap().with_smoothing(smoothing);
        let u0 = state_from(&u, 100);
        let wt = state_from(&w, 100);
        let (f, _) = adjoint_observation(&d, &disc, &state_from(&[0.3, -0.2, 0.1], 100)).unwrap();
        let scale = u0.norm(&d.grid) * wt.norm(&d.grid) + f.norm() * wt.norm(&d.grid);
        let defect = duality_defect(&d, &disc, &u0, &f, &wt).unwrap();
        prop_assert!(defect.abs() <= 1e-12 * scale.max(1e-300), "defect {defect}");
    }

    #[test]
    fn gramian_is_positive_semidefinite(x in proptest::collection::vec(-1.0f64..1.0, 3)) {
        let d = dynamics(80, 2.0, 1.0, 0.25, StepperKind::Diagonal);
        let disc = Discretization::new(d.grid, 40, 0.0, 0.3).unwrap();
        let s = state_from(&x, 80);
        let ls = apply_gramian(&d, &disc, &s).unwrap();
        let q = ls.dot(&d.grid, &s);
        prop_assert!(q >= -1e-12 * s.norm(&d.grid).powi(2));
    }

    #[test]
    fn rho_recursion_holds(n in 2usize..12) {
        let (d, rho) = carleman_exponents(n).unwrap();
        prop_assert_eq!(rho[n - 1], 4);
        prop_assert_eq!(rho[n - 2], 8);
        for k in 2..n {
            // ρ_{k−1} = 2ρ_k − d_k + 4 in 1-based indices.
            prop_assert_eq!(rho[k - 2], 2 * rho[k - 1] - d[k - 1] + 4);
        }
        for (k, dk) in d.iter().enumerate() {
            prop_assert_eq!(*dk, 1 + 3 * (n as i64 - k as i64));
        }
    }
}

#[test]
fn adjoint_observation_lives_on_omega() {
    let d = dynamics(100, 2.0, 1.0, 0.2, StepperKind::Diagonal);
    let disc = Discretization::new(d.grid, 60, 0.0, 0.5).unwrap();
    let (f, _) = adjoint_observation(&d, &disc, &state_from(&[1.0, 0.5, 0.2], 100)).unwrap();
    let zero = ControlField::zeros(&disc, 1, d.mask.clone());
    assert_eq!(f.mask, zero.mask);
    for &node in &f.mask {
        assert!(d.omega.contains_strictly(d.grid.x(node)));
    }
}
