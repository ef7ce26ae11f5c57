//! Crank–Nicolson solvers for the controlled cascade system
//! `∂t u − 𝓛u + C u = D 1_ω f` and its adjoint `−∂t w − 𝓛w + Cᵀ w = 0`.
//!
//! Controls live at half steps `t_m + Δt/2`. The adjoint observation paired
//! with step `m` is the average `(w^m + w^{m+1})/2`, which makes the discrete
//! duality identity
//!
//! ```text
//! ⟨u^M, w^M⟩ − ⟨u^0, w^0⟩ = Δt Σ_m h Σ_{x∈ω} f^{m+½} · Dᵀ(w^m + w^{m+1})/2
//! ```
//!
//! hold to round-off.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coeff::PeriodicCoefficient;
use crate::error::{Error, Result};
use crate::grid::{Grid, Interval, State};
use crate::kalman::{null_vector, real_spectrum};
use crate::quadrature::GaussLegendre;
use crate::tridiag::{SymTridiagonal, ThomasFactor};

/// How the coefficient is sampled on the cell faces of the flux form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Midpoint,
    /// `h / ∫_{x_j}^{x_{j+1}} 1/a(x/ε) dx`.
    Harmonic,
}

/// Flux-form discretization of `∂x(a(x/ε)∂x)` with Dirichlet rows
/// eliminated. The result is symmetric negative definite.
pub fn assemble_operator(
    a: &PeriodicCoefficient,
    epsilon: f64,
    grid: &Grid,
    sampling: Sampling,
) -> Result<SymTridiagonal> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon = {epsilon} must lie in (0, 1]"
        )));
    }
    if !a.is_constant() {
        grid.check_resolution(epsilon)?;
    }
    let n = grid.len();
    let h = grid.h();
    let rule = GaussLegendre::new(6);
    // Face i sits between nodes i−1 and i (node −1 and N are boundaries).
    let faces: Vec<f64> = (0..=n)
        .map(|i| match sampling {
            Sampling::Midpoint => a.value((i as f64 + 0.5) * h / epsilon),
            Sampling::Harmonic => {
                let lo = i as f64 * h;
                let integral = rule.integrate(|x| 1.0 / a.value(x / epsilon), lo, lo + h);
                h / integral
            }
        })
        .collect();
    let inv = 1.0 / (h * h);
    let diag = (0..n).map(|j| -(faces[j] + faces[j + 1]) * inv).collect();
    let off = (1..n).map(|i| faces[i] * inv).collect();
    SymTridiagonal::new(diag, off)
}

/// Smoothing steps at each end of a window by default.
pub const DEFAULT_SMOOTHING: usize = 2;

/// Uniform time grid on a window.
///
/// The first and last `smoothing` steps are each taken as two implicit Euler
/// half steps, the rest are Crank–Nicolson. Pure Crank–Nicolson leaves the
/// stiffest modes of rough data (`μΔt ≫ 1`) almost undamped with factor
/// ≈ −1; the Euler half steps remove them without losing second order.
/// Placing them at both ends keeps the scheme closed under transposition, so
/// the adjoint stays the exact discrete adjoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub grid: Grid,
    pub steps: usize,
    pub t0: f64,
    pub t1: f64,
    #[serde(default = "default_smoothing")]
    pub smoothing: usize,
}

fn default_smoothing() -> usize {
    DEFAULT_SMOOTHING
}

impl Discretization {
    /// Requires `Δt <= h`.
    pub fn new(grid: Grid, steps: usize, t0: f64, t1: f64) -> Result<Self> {
        let d = Self::unchecked(grid, steps, t0, t1)?;
        if d.dt() > grid.h() * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "time step {} exceeds the mesh size {}",
                d.dt(),
                grid.h()
            )));
        }
        Ok(d)
    }

    /// Smallest step count with `Δt <= h`.
    pub fn auto(grid: Grid, t0: f64, t1: f64) -> Result<Self> {
        let steps = ((t1 - t0) / grid.h() * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Self::new(grid, steps, t0, t1)
    }

    /// No `Δt <= h` requirement (the scheme is unconditionally stable).
    pub fn unchecked(grid: Grid, steps: usize, t0: f64, t1: f64) -> Result<Self> {
        if steps == 0 || !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "time window ({t0}, {t1}) with {steps} steps"
            )));
        }
        Ok(Self {
            grid,
            steps,
            t0,
            t1,
            smoothing: DEFAULT_SMOOTHING,
        })
    }

    /// Same grid with `k` smoothing steps at each end (0 gives pure
    /// Crank–Nicolson).
    pub fn with_smoothing(self, k: usize) -> Self {
        Self { smoothing: k, ..self }
    }

    /// Whether step `m` (from `t_m` to `t_{m+1}`) is two implicit Euler half
    /// steps.
    pub fn is_smoothing(&self, m: usize) -> bool {
        let k = self.smoothing.min(self.steps / 2);
        m < k || m + k >= self.steps
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / self.steps as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        self.t0 + m as f64 * self.dt()
    }

    /// Midpoint of step `m`, where controls are sampled.
    pub fn half_time(&self, m: usize) -> f64 {
        self.t0 + (m as f64 + 0.5) * self.dt()
    }
}

/// Implicit solve strategy for the coupled step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepperKind {
    /// `C = S Σ S⁻¹`: `n` independent scalar tridiagonal solves per step.
    #[default]
    Diagonal,
    /// Block tridiagonal elimination with `n × n` blocks.
    Block,
}

/// Spatial operator, coupling and control injection of one discrete system.
#[derive(Debug, Clone)]
pub struct Dynamics {
    pub grid: Grid,
    /// Discrete `𝓛`.
    pub operator: SymTridiagonal,
    pub c: DMatrix<f64>,
    /// `n × r` control matrix.
    pub d: DMatrix<f64>,
    pub omega: Interval,
    pub mask: Vec<usize>,
    pub stepper: StepperKind,
    sigma: Vec<f64>,
    s: DMatrix<f64>,
    s_inv: DMatrix<f64>,
}

impl Dynamics {
    pub fn new(
        grid: Grid,
        operator: SymTridiagonal,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        omega: Interval,
        stepper: StepperKind,
    ) -> Result<Self> {
        let n = c.nrows();
        if c.ncols() != n || d.nrows() != n || d.ncols() == 0 || operator.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "C {}x{}, D {}x{}, operator {} vs grid {}",
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols(),
                operator.len(),
                grid.len()
            )));
        }
        let mask = grid.mask(&omega);
        if mask.is_empty() {
            return Err(Error::Resolution(format!(
                "no grid node lies inside omega = ({}, {})",
                omega.left, omega.right
            )));
        }
        let (sigma, s, s_inv) = match stepper {
            StepperKind::Diagonal => diagonalize(&c)?,
            StepperKind::Block => (Vec::new(), DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)),
        };
        Ok(Self {
            grid,
            operator,
            c,
            d,
            omega,
            mask,
            stepper,
            sigma,
            s,
            s_inv,
        })
    }

    pub fn components(&self) -> usize {
        self.c.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.d.ncols()
    }

    pub fn with_stepper(&self, stepper: StepperKind) -> Result<Self> {
        Self::new(
            self.grid,
            self.operator.clone(),
            self.c.clone(),
            self.d.clone(),
            self.omega,
            stepper,
        )
    }

    pub fn zero_state(&self) -> State {
        State::zeros(self.components(), self.grid.len())
    }

    pub fn zero_control(&self, disc: &Discretization) -> ControlField {
        ControlField::zeros(disc, self.inputs(), self.mask.clone())
    }

    fn check_state(&self, u: &State) -> Result<()> {
        if u.components() != self.components() || u.points() != self.grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "state {}x{} for a system of {} components on {} nodes",
                u.components(),
                u.points(),
                self.components(),
                self.grid.len()
            )));
        }
        Ok(())
    }

    fn check_disc(&self, disc: &Discretization) -> Result<()> {
        if disc.grid != self.grid {
            return Err(Error::DimensionMismatch("discretization grid differs".into()));
        }
        Ok(())
    }

    fn check_control(&self, disc: &Discretization, f: &ControlField) -> Result<()> {
        if f.steps != disc.steps || f.inputs != self.inputs() || f.mask != self.mask {
            return Err(Error::DimensionMismatch(
                "control field does not match the time grid or ω".into(),
            ));
        }
        Ok(())
    }
}

fn diagonalize(c: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let sigma = real_spectrum(c)?;
    let radius = sigma.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if sigma
        .windows(2)
        .any(|w| !(w[1] - w[0] > 1e-8 * radius.max(f64::MIN_POSITIVE)))
    {
        return Err(Error::HypothesisViolation(
            "coupling matrix is not diagonalizable with distinct eigenvalues".into(),
        ));
    }
    let columns = sigma
        .iter()
        .map(|s| null_vector(c, *s))
        .collect::<Result<Vec<_>>>()?;
    let s = DMatrix::from_columns(&columns);
    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("eigenvector matrix of C is singular".into()))?;
    Ok((sigma, s, s_inv))
}

/// Space-time samples of a control on the ω nodes at half steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub steps: usize,
    pub inputs: usize,
    pub mask: Vec<usize>,
    pub dt: f64,
    pub t0: f64,
    pub h: f64,
    data: Vec<f64>,
}

impl ControlField {
    pub fn zeros(disc: &Discretization, inputs: usize, mask: Vec<usize>) -> Self {
        Self {
            steps: disc.steps,
            inputs,
            data: vec![0.0; disc.steps * inputs * mask.len()],
            mask,
            dt: disc.dt(),
            t0: disc.t0,
            h: disc.grid.h(),
        }
    }

    fn offset(&self, step: usize, input: usize) -> usize {
        (step * self.inputs + input) * self.mask.len()
    }

    /// Values on the mask nodes at step `step` for input `input`.
    pub fn slice(&self, step: usize, input: usize) -> &[f64] {
        let o = self.offset(step, input);
        &self.data[o..o + self.mask.len()]
    }

    pub fn slice_mut(&mut self, step: usize, input: usize) -> &mut [f64] {
        let o = self.offset(step, input);
        let len = self.mask.len();
        &mut self.data[o..o + len]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Discrete `L²((t₀,t₁)×ω)` product.
    pub fn dot(&self, other: &ControlField) -> f64 {
        self.dt * self.h * self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn axpy(&mut self, factor: f64, other: &ControlField) {
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += factor * b);
    }

    /// `‖self − other‖`.
    pub fn distance(&self, other: &ControlField) -> f64 {
        let mut d = self.clone();
        d.axpy(-1.0, other);
        d.norm()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    pub fn time(&self, step: usize) -> f64 {
        self.t0 + (step as f64 + 0.5) * self.dt
    }
}

/// Snapshots of a solve.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory has at least one snapshot")
    }

    pub fn first(&self) -> &State {
        &self.states[0]
    }
}

/// Which snapshots a solve keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Record {
    Endpoints,
    Every(usize),
}

impl Record {
    fn keeps(&self, m: usize, last: usize) -> bool {
        match self {
            Record::Endpoints => m == 0 || m == last,
            Record::Every(k) => m == 0 || m == last || m.is_multiple_of((*k).max(1)),
        }
    }
}

/// Factorization of `I + (Δt/2)K`, shared by the Crank–Nicolson step and the
/// implicit Euler half step.
enum Factors {
    Diagonal(Vec<ThomasFactor>),
    Block(BlockFactor),
}

struct Stepper<'a> {
    dynamics: &'a Dynamics,
    dt: f64,
    factors: Factors,
    adjoint: bool,
    rhs: Vec<f64>,
    work: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(dynamics: &'a Dynamics, dt: f64, adjoint: bool) -> Result<Self> {
        let n = dynamics.grid.len();
        let factors = match dynamics.stepper {
            StepperKind::Diagonal => Factors::Diagonal(
                dynamics
                    .sigma
                    .iter()
                    .map(|s| ThomasFactor::new(&dynamics.operator.affine(1.0 + 0.5 * dt * s, -0.5 * dt)))
                    .collect::<Result<Vec<_>>>()?,
            ),
            StepperKind::Block => {
                let coupling = if adjoint {
                    dynamics.c.transpose()
                } else {
                    dynamics.c.clone()
                };
                Factors::Block(BlockFactor::new(&dynamics.operator, &coupling, 0.5 * dt)?)
            }
        };
        Ok(Self {
            dynamics,
            dt,
            factors,
            adjoint,
            rhs: vec![0.0; n * dynamics.components()],
            work: vec![0.0; n],
        })
    }

    /// Maps a physical state into the marching variables (`S⁻¹u` forward,
    /// `Sᵀw` adjoint) for the diagonal stepper.
    fn to_internal(&self, u: &State) -> State {
        match self.factors {
            Factors::Block(_) => u.clone(),
            Factors::Diagonal(_) => {
                let t = if self.adjoint {
                    self.dynamics.s.transpose()
                } else {
                    self.dynamics.s_inv.clone()
                };
                mix(&t, u)
            }
        }
    }

    fn to_physical(&self, v: &State) -> State {
        match self.factors {
            Factors::Block(_) => v.clone(),
            Factors::Diagonal(_) => {
                let t = if self.adjoint {
                    self.dynamics.s_inv.transpose()
                } else {
                    self.dynamics.s.clone()
                };
                mix(&t, v)
            }
        }
    }

    /// Input matrix in marching variables: `S⁻¹D` (diagonal) or `D`.
    fn injection(&self) -> DMatrix<f64> {
        match self.factors {
            Factors::Block(_) => self.dynamics.d.clone(),
            Factors::Diagonal(_) => &self.dynamics.s_inv * &self.dynamics.d,
        }
    }

    /// Observation matrix in marching variables: `Dᵀ S⁻ᵀ` (diagonal) or
    /// `Dᵀ`, so that `Dᵀw = obs · q`.
    fn observation(&self) -> DMatrix<f64> {
        match self.factors {
            Factors::Block(_) => self.dynamics.d.transpose(),
            Factors::Diagonal(_) => self.dynamics.d.transpose() * self.dynamics.s_inv.transpose(),
        }
    }

    /// One Crank–Nicolson step in marching variables, with an optional
    /// source `dt·g` (`g` in marching variables, component-major).
    fn step(&mut self, v: &mut State, source: Option<&[f64]>) {
        self.advance(v, source, 0.5 * self.dt, self.dt);
    }

    /// One implicit Euler step of length `dt/2`.
    fn half_step(&mut self, v: &mut State, source: Option<&[f64]>) {
        self.advance(v, source, 0.0, 0.5 * self.dt);
    }

    /// Solves `(I + (Δt/2)K) v⁺ = (I − explicit·K) v + weight·g`.
    fn advance(&mut self, v: &mut State, source: Option<&[f64]>, explicit: f64, weight: f64) {
        let n = self.dynamics.grid.len();
        let comps = self.dynamics.components();
        let half = explicit;
        let op = &self.dynamics.operator;
        for i in 0..comps {
            let vi = v.component(i);
            op.apply(vi, &mut self.work);
            let rhs = &mut self.rhs[i * n..(i + 1) * n];
            match &self.factors {
                Factors::Diagonal(_) => {
                    let shift = 1.0 - half * self.dynamics.sigma[i];
                    for j in 0..n {
                        rhs[j] = shift * vi[j] + half * self.work[j];
                    }
                }
                Factors::Block(_) => {
                    for j in 0..n {
                        rhs[j] = vi[j] + half * self.work[j];
                    }
                }
            }
        }
        if let Factors::Block(_) = self.factors {
            // − (Δt/2) K v with K = C or Cᵀ acting per node.
            let c = &self.dynamics.c;
            for i in 0..comps {
                for k in 0..comps {
                    let coef = if self.adjoint { c[(k, i)] } else { c[(i, k)] };
                    if coef == 0.0 {
                        continue;
                    }
                    let vk = v.component(k);
                    let rhs = &mut self.rhs[i * n..(i + 1) * n];
                    for j in 0..n {
                        rhs[j] -= half * coef * vk[j];
                    }
                }
            }
        }
        if let Some(g) = source {
            self.rhs.iter_mut().zip(g).for_each(|(r, s)| *r += weight * s);
        }
        match &self.factors {
            Factors::Diagonal(factors) => {
                for (i, factor) in factors.iter().enumerate() {
                    factor.solve(&mut self.rhs[i * n..(i + 1) * n]);
                }
            }
            Factors::Block(block) => block.solve(&mut self.rhs, comps),
        }
        v.as_mut_slice().copy_from_slice(&self.rhs);
    }
}

fn mix(t: &DMatrix<f64>, u: &State) -> State {
    let comps = u.components();
    let mut out = State::zeros(comps, u.points());
    for i in 0..comps {
        for k in 0..comps {
            let coef = t[(i, k)];
            if coef == 0.0 {
                continue;
            }
            let src = u.component(k).to_vec();
            out.component_mut(i)
                .iter_mut()
                .zip(&src)
                .for_each(|(o, s)| *o += coef * s);
        }
    }
    out
}

/// Block tridiagonal factorization of `(I − τL) ⊗ I_n + τK`.
struct BlockFactor {
    off: Vec<f64>,
    inverses: Vec<DMatrix<f64>>,
}

impl BlockFactor {
    fn new(op: &SymTridiagonal, k: &DMatrix<f64>, tau: f64) -> Result<Self> {
        let n = op.len();
        let comps = k.nrows();
        let half = tau;
        let off: Vec<f64> = op.off.iter().map(|e| -half * e).collect();
        let identity = DMatrix::<f64>::identity(comps, comps);
        let mut inverses: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        for j in 0..n {
            let mut block = &identity * (1.0 - half * op.diag[j]) + k * half;
            if j > 0 {
                block -= &inverses[j - 1] * (off[j - 1] * off[j - 1]);
            }
            let inv = block.try_inverse().ok_or_else(|| {
                Error::Numerical(format!("singular block {j} in block tridiagonal solve"))
            })?;
            inverses.push(inv);
        }
        Ok(Self { off, inverses })
    }

    /// Solves in place; `x` is component-major.
    fn solve(&self, x: &mut [f64], comps: usize) {
        let n = self.inverses.len();
        let gather = |x: &[f64], j: usize| -> nalgebra::DVector<f64> {
            nalgebra::DVector::from_iterator(comps, (0..comps).map(|c| x[c * n + j]))
        };
        let mut y: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(n);
        for j in 0..n {
            let mut r = gather(x, j);
            if j > 0 {
                r -= &y[j - 1] * self.off[j - 1];
            }
            y.push(&self.inverses[j] * r);
        }
        for j in (0..n - 1).rev() {
            let next = y[j + 1].clone();
            let correction = &self.inverses[j] * next * self.off[j];
            y[j] -= correction;
        }
        for (j, v) in y.iter().enumerate() {
            for c in 0..comps {
                x[c * n + j] = v[c];
            }
        }
    }
}

/// Forward solve of `∂t u = 𝓛u − Cu + D 1_ω f`.
pub fn solve_forward(
    dynamics: &Dynamics,
    disc: &Discretization,
    u0: &State,
    control: Option<&ControlField>,
    record: Record,
) -> Result<Trajectory> {
    dynamics.check_state(u0)?;
    dynamics.check_disc(disc)?;
    if let Some(f) = control {
        dynamics.check_control(disc, f)?;
    }
    let mut stepper = Stepper::new(dynamics, disc.dt(), false)?;
    let injection = stepper.injection();
    let n = dynamics.grid.len();
    let comps = dynamics.components();
    let mut v = stepper.to_internal(u0);
    let mut source = vec![0.0; n * comps];
    let mut trajectory = Trajectory {
        times: vec![disc.t0],
        states: vec![u0.clone()],
    };
    for m in 0..disc.steps {
        let g = control.map(|f| {
            fill_source(&mut source, &injection, f, m, n);
            source.as_slice()
        });
        if disc.is_smoothing(m) {
            stepper.half_step(&mut v, g);
            stepper.half_step(&mut v, g);
        } else {
            stepper.step(&mut v, g);
        }
        if record.keeps(m + 1, disc.steps) {
            trajectory.times.push(disc.time(m + 1));
            trajectory.states.push(stepper.to_physical(&v));
        }
    }
    let last = trajectory.last();
    if !last.is_finite() {
        return Err(Error::Numerical("forward solve produced non-finite values".into()));
    }
    Ok(trajectory)
}

fn fill_source(source: &mut [f64], injection: &DMatrix<f64>, f: &ControlField, m: usize, n: usize) {
    source.iter_mut().for_each(|s| *s = 0.0);
    let comps = injection.nrows();
    for input in 0..f.inputs {
        let values = f.slice(m, input);
        for i in 0..comps {
            let coef = injection[(i, input)];
            if coef == 0.0 {
                continue;
            }
            for (idx, &node) in f.mask.iter().enumerate() {
                source[i * n + node] += coef * values[idx];
            }
        }
    }
}

/// Terminal state of the forward solve.
pub fn forward_terminal(
    dynamics: &Dynamics,
    disc: &Discretization,
    u0: &State,
    control: Option<&ControlField>,
) -> Result<State> {
    Ok(solve_forward(dynamics, disc, u0, control, Record::Endpoints)?
        .states
        .pop()
        .expect("endpoint snapshot"))
}

/// Backward solve of `−∂t w = 𝓛w − Cᵀw` from `w(t₁) = wT`,
/// marched in reversed time. Snapshots are returned in increasing time.
pub fn solve_adjoint(
    dynamics: &Dynamics,
    disc: &Discretization,
    w_terminal: &State,
    record: Record,
) -> Result<Trajectory> {
    Ok(adjoint_pass(dynamics, disc, w_terminal, record, false)?.0)
}

/// Observation on ω at every step, `Dᵀ(w^m + w^{m+1})/2` on Crank–Nicolson
/// steps and `Dᵀ(w^m + w^{m+1/2})/2` on smoothing steps, together with
/// `w(t₀)`. This is exactly the transpose of the forward control map.
pub fn adjoint_observation(
    dynamics: &Dynamics,
    disc: &Discretization,
    w_terminal: &State,
) -> Result<(ControlField, State)> {
    let (trajectory, field) = adjoint_pass(dynamics, disc, w_terminal, Record::Endpoints, true)?;
    Ok((field.expect("observation requested"), trajectory.states[0].clone()))
}

fn adjoint_pass(
    dynamics: &Dynamics,
    disc: &Discretization,
    w_terminal: &State,
    record: Record,
    observe: bool,
) -> Result<(Trajectory, Option<ControlField>)> {
    dynamics.check_state(w_terminal)?;
    dynamics.check_disc(disc)?;
    let mut stepper = Stepper::new(dynamics, disc.dt(), true)?;
    let observation = stepper.observation();
    let mut field = observe.then(|| dynamics.zero_control(disc));
    let mut q = stepper.to_internal(w_terminal);
    let mut previous = q.clone();
    let mut times = vec![disc.t1];
    let mut states = vec![w_terminal.clone()];
    for m in (0..disc.steps).rev() {
        if observe {
            previous.as_mut_slice().copy_from_slice(q.as_slice());
        }
        if disc.is_smoothing(m) {
            stepper.half_step(&mut q, None);
            if observe {
                previous.as_mut_slice().copy_from_slice(q.as_slice());
            }
            stepper.half_step(&mut q, None);
        } else {
            stepper.step(&mut q, None);
        }
        if let Some(f) = field.as_mut() {
            let n = dynamics.grid.len();
            for input in 0..f.inputs {
                let out = f.slice_mut(m, input);
                out.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..dynamics.components() {
                    let coef = observation[(input, i)];
                    if coef == 0.0 {
                        continue;
                    }
                    let a = &q.as_slice()[i * n..(i + 1) * n];
                    let b = &previous.as_slice()[i * n..(i + 1) * n];
                    for (idx, &node) in dynamics.mask.iter().enumerate() {
                        out[idx] += coef * 0.5 * (a[node] + b[node]);
                    }
                }
            }
        }
        if record.keeps(disc.steps - m, disc.steps) {
            times.push(disc.time(m));
            states.push(stepper.to_physical(&q));
        }
    }
    times.reverse();
    states.reverse();
    if !states[0].is_finite() {
        return Err(Error::Numerical("adjoint solve produced non-finite values".into()));
    }
    Ok((Trajectory { times, states }, field))
}

/// `⟨u(t₁), wT⟩ − ⟨u(t₀), w(t₀)⟩ − ∫∫_ω f · Dᵀw`, zero up to round-off.
pub fn duality_defect(
    dynamics: &Dynamics,
    disc: &Discretization,
    u0: &State,
    f: &ControlField,
    w_terminal: &State,
) -> Result<f64> {
    let u_end = forward_terminal(dynamics, disc, u0, Some(f))?;
    let (obs, w0) = adjoint_observation(dynamics, disc, w_terminal)?;
    let g = &dynamics.grid;
    Ok(u_end.dot(g, w_terminal) - u0.dot(g, &w0) - f.dot(&obs))
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    /// `γ = max(0, −min eig sym(C))`.
    pub gamma: f64,
    /// `C′ = 2γ + margin`.
    pub allowed_rate: f64,
    /// Largest observed `ln(‖u(t_{m+1})‖²/‖u(t_m)‖²)/(t_{m+1} − t_m)`.
    pub max_rate: f64,
    /// Least-squares slope of `ln ‖u(t)‖²`.
    pub fitted_rate: f64,
    pub passed: bool,
}

/// Checks `‖u(t)‖² ≤ e^{C′(t−τ)}‖u(τ)‖²` between consecutive snapshots, using
/// the per-step amplification bound `1/(1−γΔt/2)²`, which covers both the
/// Crank–Nicolson steps and the pairs of implicit Euler half steps.
pub fn energy_decay_check(
    trajectory: &Trajectory,
    grid: &Grid,
    c: &DMatrix<f64>,
    dt: f64,
    margin: f64,
) -> Result<EnergyReport> {
    let sym = (c + c.transpose()) * 0.5;
    let min_eig = sym
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let gamma = (-min_eig).max(0.0);
    if gamma * dt >= 2.0 {
        return Err(Error::InvalidParameter(format!(
            "time step {dt} too large for growth rate {gamma}"
        )));
    }
    let per_step = -2.0 * (-0.5 * gamma * dt).ln_1p();
    let norms: Vec<f64> = trajectory.states.iter().map(|s| s.norm(grid).powi(2)).collect();
    let mut passed = true;
    let mut max_rate = f64::NEG_INFINITY;
    for (w, t) in norms.windows(2).zip(trajectory.times.windows(2)) {
        let span = t[1] - t[0];
        let steps = (span / dt).round().max(1.0);
        let allowed = (2.0 * per_step * steps + margin * span).exp() * w[0];
        if w[1] > allowed * (1.0 + 1e-12) + f64::MIN_POSITIVE {
            passed = false;
        }
        if w[0] > 0.0 && w[1] > 0.0 {
            max_rate = max_rate.max((w[1] / w[0]).ln() / span);
        }
    }
    let points: Vec<(f64, f64)> = trajectory
        .times
        .iter()
        .zip(&norms)
        .filter(|(_, n)| **n > 0.0)
        .map(|(t, n)| (*t, n.ln()))
        .collect();
    Ok(EnergyReport {
        gamma,
        allowed_rate: 2.0 * gamma + margin,
        max_rate: if max_rate.is_finite() { max_rate } else { 0.0 },
        fitted_rate: least_squares_slope(&points),
        passed,
    })
}

/// Slope of the least-squares line through `points`; 0 for fewer than two.
pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}
