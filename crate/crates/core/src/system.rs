//! One controllability problem instance and its discretization.

use nalgebra::DMatrix;

use crate::coeff::{check_epsilon, PeriodicCoefficient};
use crate::error::{Error, Result};
use crate::grid::{Grid, Interval};
use crate::kalman::{block_cascade_reduction, kalman_rank, validate_h2, CanonicalForm, H2Report};
use crate::pde::{assemble_operator, Dynamics, Sampling, StepperKind};

/// `∂t y − ∂x(a(x/ε)∂x y) + A y = B 1_ω f` on `(0, T) × (0, 1)`.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub coefficient: PeriodicCoefficient,
    pub epsilon: f64,
    pub omega: Interval,
    pub horizon: f64,
}

/// A spec that passed the Kalman and spectral checks, with its canonical
/// form.
#[derive(Debug, Clone)]
pub struct ValidatedSystem {
    pub spec: SystemSpec,
    pub canonical: CanonicalForm,
    pub h2: H2Report,
    pub rank: usize,
}

impl SystemSpec {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        coefficient: PeriodicCoefficient,
        epsilon: f64,
        omega: Interval,
        horizon: f64,
    ) -> Result<Self> {
        if a.nrows() == 0 || a.nrows() != a.ncols() || b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{} and B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        check_epsilon(epsilon)?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("T = {horizon} must be > 0")));
        }
        Ok(Self {
            a,
            b,
            coefficient,
            epsilon,
            omega,
            horizon,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self {
            epsilon,
            ..self.clone()
        })
    }

    /// Kalman rank, distinct real spectrum with `min Spec(A) > −π²/a_M`, and
    /// the cascade reduction.
    pub fn validate(&self) -> Result<ValidatedSystem> {
        let n = self.n();
        let rank = kalman_rank(&self.a, &self.b, None)?;
        if rank < n {
            return Err(Error::NotControllable { rank, n });
        }
        let h2 = validate_h2(&self.a, self.coefficient.a_max())?;
        h2.ensure()?;
        let canonical = block_cascade_reduction(&self.a, &self.b)?;
        Ok(ValidatedSystem {
            spec: self.clone(),
            canonical,
            h2,
            rank,
        })
    }
}

impl ValidatedSystem {
    /// Canonical-coordinate dynamics on `grid`.
    pub fn dynamics(&self, grid: Grid, sampling: Sampling, stepper: StepperKind) -> Result<Dynamics> {
        let operator = assemble_operator(&self.spec.coefficient, self.spec.epsilon, &grid, sampling)?;
        Dynamics::new(
            grid,
            operator,
            self.canonical.c.clone(),
            self.canonical.d.clone(),
            self.spec.omega,
            stepper,
        )
    }

    /// Same system with another ε; the canonical form does not depend on ε.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Ok(Self {
            spec: self.spec.with_epsilon(epsilon)?,
            ..self.clone()
        })
    }

    /// Same system with another coefficient.
    pub fn with_coefficient(&self, coefficient: PeriodicCoefficient) -> Result<Self> {
        let h2 = validate_h2(&self.spec.a, coefficient.a_max())?;
        h2.ensure()?;
        Ok(Self {
            spec: SystemSpec {
                coefficient,
                ..self.spec.clone()
            },
            h2,
            ..self.clone()
        })
    }
}
