//! Null-control synthesis.
//!
//! * Low-frequency moment control: steer the moments `⟨u, Φ_j⟩` of the
//!   `K·n` lowest adjoint eigenfunctions to zero with the minimal-norm control
//!   in `span{observation of Φ_j}`.
//! * Free decay: with the low moments gone the state decays at least like
//!   `e^{−μ_{K+1} t}`.
//! * Penalized HUM: solve `(Λ + ηI) w_T = −y_free(t₁)` by conjugate
//!   gradients, `Λ` being the discrete controllability Gramian applied
//!   matrix-free through one adjoint and one forward solve.
//! * The three-stage composition of the above on `[0,T/3]`, `[T/3,2T/3]`,
//!   `[2T/3,T]`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::State;
use crate::pde::{
    adjoint_observation, forward_terminal, least_squares_slope, solve_forward, ControlField,
    Discretization, Dynamics, Record,
};
use crate::spectral::{low_frequency_cutoff, LowFrequencySpace};

/// A synthesized control. The control vanishes outside ω by construction and
/// between segments.
#[derive(Debug, Clone)]
pub struct ControlResult {
    /// Time segments carrying a non-trivial control.
    pub segments: Vec<ControlField>,
    /// `‖f‖_{L²((t₀,t₁)×ω)}`.
    pub cost: f64,
    pub terminal_norm: f64,
    pub iterations: usize,
    pub eta: f64,
    pub stage_breakdown: Option<StageBreakdown>,
    pub gramian_min_eig: Option<f64>,
    /// `sqrt(η (‖f‖² + η‖w_T*‖²))` for HUM solves.
    pub terminal_bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StageBreakdown {
    pub stage1_cost: f64,
    pub stage3_cost: f64,
    /// `‖Π u(T/3)‖`.
    pub projection_residual: f64,
    pub norm_after_stage1: f64,
    pub norm_after_stage2: f64,
    pub decay_bound_holds: bool,
    pub fitted_decay_rate: f64,
    pub mu_next: f64,
    pub cutoff: usize,
    pub stage3_iterations: usize,
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!("eta = {eta} must be > 0")));
    }
    Ok(())
}

/// `∫_ω (DᵀΦ_j)·(DᵀΦ_l)` for all low-frequency pairs.
pub fn observation_overlap(space: &LowFrequencySpace, dynamics: &Dynamics) -> DMatrix<f64> {
    let dim = space.dim();
    let weights: Vec<DVector<f64>> = space
        .members
        .iter()
        .map(|p| dynamics.d.transpose() * DVector::from_column_slice(&p.coeffs))
        .collect();
    let grid = &dynamics.grid;
    let mut overlap = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        for l in 0..=j {
            let spatial = grid.dot_on(&dynamics.mask, &space.members[j].phi, &space.members[l].phi);
            let v = weights[j].dot(&weights[l]) * spatial;
            overlap[(j, l)] = v;
            overlap[(l, j)] = v;
        }
    }
    overlap
}

/// Continuous-time Gramian
/// `G_{jl} = ∫_ω (Φ_j)₁(Φ_l)₁ · (1 − e^{−(μ_j+μ_l)T3})/(μ_j+μ_l)`.
pub fn low_frequency_gramian(space: &LowFrequencySpace, dynamics: &Dynamics, t3: f64) -> Result<DMatrix<f64>> {
    if !(t3 > 0.0) {
        return Err(Error::InvalidParameter(format!("window length {t3} must be > 0")));
    }
    let mut g = observation_overlap(space, dynamics);
    let mu = space.mu();
    for j in 0..space.dim() {
        for l in 0..space.dim() {
            let s = mu[j] + mu[l];
            let factor = if s.abs() < 1e-300 {
                t3
            } else {
                -(-s * t3).exp_m1() / s
            };
            g[(j, l)] *= factor;
        }
    }
    Ok(g)
}

/// Crank–Nicolson amplification factor `(1 − μΔt/2)/(1 + μΔt/2)`.
pub fn cn_factor(mu: f64, dt: f64) -> f64 {
    (1.0 - 0.5 * mu * dt) / (1.0 + 0.5 * mu * dt)
}

/// Discrete evolution of one moment under the solver: `m(t₁) = R m(t₀) +
/// Δt Σ_k e_k ⟨F^k, Φ⟩`. Returns `(R, e)`; `e_k` is also the time profile of
/// the adjoint observation of `Φ`.
pub fn moment_profile(mu: f64, disc: &Discretization) -> (f64, Vec<f64>) {
    let dt = disc.dt();
    let mut profile = vec![0.0; disc.steps];
    let mut tail = 1.0;
    let a = 1.0 / (1.0 + 0.5 * mu * dt);
    for k in (0..disc.steps).rev() {
        if disc.is_smoothing(k) {
            profile[k] = tail * 0.5 * (a + a * a);
            tail *= a * a;
        } else {
            profile[k] = tail * a;
            tail *= cn_factor(mu, dt);
        }
    }
    (tail, profile)
}

/// Gramian of the time-discrete moment dynamics: equal to the exact one up to
/// the `O(Δt²)` time error, and consistent with the solver so that the
/// steered moments vanish to round-off.
pub fn discrete_low_frequency_gramian(
    space: &LowFrequencySpace,
    dynamics: &Dynamics,
    disc: &Discretization,
) -> DMatrix<f64> {
    let profiles: Vec<Vec<f64>> = space.mu().iter().map(|m| moment_profile(*m, disc).1).collect();
    gramian_from_profiles(observation_overlap(space, dynamics), &profiles, disc.dt())
}

fn gramian_from_profiles(mut g: DMatrix<f64>, profiles: &[Vec<f64>], dt: f64) -> DMatrix<f64> {
    for j in 0..profiles.len() {
        for l in 0..=j {
            let sum: f64 = profiles[j].iter().zip(&profiles[l]).map(|(a, b)| a * b).sum();
            g[(j, l)] *= dt * sum;
            if l != j {
                g[(l, j)] = g[(j, l)];
            }
        }
    }
    g
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(g: &DMatrix<f64>) -> f64 {
    g.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone)]
pub struct LowFrequencyOutcome {
    pub result: ControlResult,
    pub terminal: State,
    pub beta: DVector<f64>,
    pub gramian_min_eig: f64,
    /// Ridge added to the Gramian diagonal, 0 when none was needed.
    pub ridge: f64,
    /// `‖Π u(t₁)‖`.
    pub projection_residual: f64,
}

/// Moment control on `disc`: `f = Σ_l β_l e_l(t) DᵀΦ_l 1_ω` with `Gβ = −m(t₁)`
/// where `m(t₁)` are the free-evolution moments.
pub fn low_frequency_control(
    dynamics: &Dynamics,
    space: &LowFrequencySpace,
    u0: &State,
    disc: &Discretization,
) -> Result<LowFrequencyOutcome> {
    let dim = space.dim();
    let steps = disc.steps;
    let (decay, profiles): (Vec<f64>, Vec<Vec<f64>>) =
        space.mu().iter().map(|m| moment_profile(*m, disc)).unzip();
    let moments = space.moments(u0);
    let rhs = DVector::from_iterator(dim, (0..dim).map(|j| -decay[j] * moments[j]));
    let mut g = gramian_from_profiles(observation_overlap(space, dynamics), &profiles, disc.dt());
    let gramian_min_eig = min_eigenvalue(&g);
    let mut ridge = 0.0;
    if gramian_min_eig < 1e-12 {
        ridge = 1e-12 * g.trace() / dim as f64;
        log::warn!(
            "low-frequency Gramian is ill-conditioned (min eigenvalue {gramian_min_eig:.3e}); adding ridge {ridge:.3e}"
        );
        for j in 0..dim {
            g[(j, j)] += ridge;
        }
    }
    let beta = if rhs.amax() == 0.0 {
        DVector::zeros(dim)
    } else {
        g.clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .or_else(|| g.clone().lu().solve(&rhs))
            .ok_or_else(|| Error::Numerical("low-frequency Gramian solve failed".into()))?
    };
    let mut field = dynamics.zero_control(disc);
    if beta.amax() > 0.0 {
        let weights: Vec<DVector<f64>> = space
            .members
            .iter()
            .map(|p| dynamics.d.transpose() * DVector::from_column_slice(&p.coeffs))
            .collect();
        for m in 0..steps {
            for (j, pair) in space.members.iter().enumerate() {
                let time = beta[j] * profiles[j][m];
                if time == 0.0 {
                    continue;
                }
                for input in 0..dynamics.inputs() {
                    let coef = time * weights[j][input];
                    if coef == 0.0 {
                        continue;
                    }
                    let out = field.slice_mut(m, input);
                    for (idx, &node) in dynamics.mask.iter().enumerate() {
                        out[idx] += coef * pair.phi[node];
                    }
                }
            }
        }
    }
    let terminal = forward_terminal(dynamics, disc, u0, Some(&field))?;
    let projection_residual = space.projection_norm(&terminal);
    let cost = field.norm();
    let terminal_norm = terminal.norm(&dynamics.grid);
    Ok(LowFrequencyOutcome {
        result: ControlResult {
            segments: if field.is_zero() { vec![] } else { vec![field] },
            cost,
            terminal_norm,
            iterations: 0,
            eta: ridge,
            stage_breakdown: None,
            gramian_min_eig: Some(gramian_min_eig),
            terminal_bound: None,
        },
        terminal,
        beta,
        gramian_min_eig,
        ridge,
        projection_residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub mu_next: f64,
    /// Least-squares slope of `ln ‖u(t)‖`.
    pub fitted_rate: f64,
    /// `‖u(t₁)‖ / ‖u(t₀)‖`.
    pub ratio: f64,
    /// `e^{−0.95 μ_{K+1} (t₁ − t₀)}`.
    pub bound: f64,
    pub bound_holds: bool,
    pub steps: usize,
    pub initial_projection: f64,
}

/// Relative norm level below which decay snapshots are not fitted.
pub const FIT_FLOOR: f64 = 1e-10;

/// Step count with `μ Δt <= 0.1` and `Δt <= h`, so that the discrete decay
/// factor of the slowest retained-above-cutoff mode is within 0.1% of the
/// exponential.
pub fn decay_steps(mu_next: f64, window: f64, h: f64) -> usize {
    let by_mu = (mu_next.max(0.0) * window / 0.1).ceil();
    let by_h = (window / h).ceil();
    by_mu.max(by_h).max(1.0) as usize
}

/// Uncontrolled evolution over `[t0, t1]`. `reference` is the norm against
/// which the projection precondition is measured (default `‖u‖`).
pub fn free_decay(
    dynamics: &Dynamics,
    u: &State,
    t0: f64,
    t1: f64,
    space: &LowFrequencySpace,
    reference: Option<f64>,
) -> Result<(State, DecayReport)> {
    let norm0 = u.norm(&dynamics.grid);
    let reference = reference.unwrap_or(norm0);
    let projection = space.projection_norm(u);
    if projection > 1e-6 * reference {
        return Err(Error::StageCoupling(format!(
            "low-frequency projection {projection:.3e} exceeds 1e-6 × {reference:.3e}"
        )));
    }
    let mu_next = space.next.mu;
    let steps = decay_steps(mu_next, t1 - t0, dynamics.grid.h());
    let disc = Discretization::unchecked(dynamics.grid, steps, t0, t1)?;
    let snapshots = (steps / 1000).max(1);
    let trajectory = solve_forward(dynamics, &disc, u, None, Record::Every(snapshots))?;
    // The slope is fitted on the Crank–Nicolson part, away from the damped
    // end steps, and only while the norm is above 1e-10 of its start: below
    // that, round-off components in slower modes take over.
    let margin = disc.smoothing.min(steps / 2) as f64 * disc.dt() * (1.0 - 1e-9);
    let floor = FIT_FLOOR * norm0;
    let points: Vec<(f64, f64)> = trajectory
        .times
        .iter()
        .zip(&trajectory.states)
        .map(|(t, s)| (*t, s.norm(&dynamics.grid)))
        .take_while(|(_, n)| *n > floor && *n > 0.0)
        .filter(|(t, _)| *t >= t0 + margin && *t <= t1 - margin)
        .map(|(t, n)| (t, n.ln()))
        .collect();
    let end = trajectory.last().clone();
    let norm1 = end.norm(&dynamics.grid);
    let bound = (-0.95 * mu_next * (t1 - t0)).exp();
    let ratio = if norm0 > 0.0 { norm1 / norm0 } else { 0.0 };
    let bound_holds = norm1 <= bound * norm0;
    if !bound_holds {
        log::info!(
            "free decay ratio {ratio:.3e} above e^(-0.95 μ_(K+1) T/3) = {bound:.3e} (remaining low-mode mass {projection:.3e})"
        );
    }
    Ok((
        end,
        DecayReport {
            mu_next,
            fitted_rate: least_squares_slope(&points),
            ratio,
            bound,
            bound_holds,
            steps,
            initial_projection: projection,
        },
    ))
}

/// Conjugate-gradient settings for HUM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HumOutcome {
    pub result: ControlResult,
    /// Minimizer `w_T*` of the penalized functional.
    pub w_star: State,
    pub terminal: State,
    pub relative_residual: f64,
}

/// `Λ w = u(t₁)` driven from rest by the adjoint observation of `w`.
pub fn apply_gramian(dynamics: &Dynamics, disc: &Discretization, w: &State) -> Result<State> {
    let (f, _) = adjoint_observation(dynamics, disc, w)?;
    forward_terminal(dynamics, disc, &dynamics.zero_state(), Some(&f))
}

/// Penalized HUM on the window of `disc`.
pub fn hum_control(
    dynamics: &Dynamics,
    disc: &Discretization,
    u_start: &State,
    eta: f64,
    cg: CgOptions,
) -> Result<HumOutcome> {
    check_eta(eta)?;
    let grid = dynamics.grid;
    let y_free = forward_terminal(dynamics, disc, u_start, None)?;
    let b_norm = y_free.norm(&grid);
    if b_norm == 0.0 {
        return Ok(HumOutcome {
            result: ControlResult {
                segments: vec![],
                cost: 0.0,
                terminal_norm: 0.0,
                iterations: 0,
                eta,
                stage_breakdown: None,
                gramian_min_eig: None,
                terminal_bound: Some(0.0),
            },
            w_star: dynamics.zero_state(),
            terminal: dynamics.zero_state(),
            relative_residual: 0.0,
        });
    }
    let mut rhs = y_free.clone();
    rhs.scale(-1.0);
    let mut w = dynamics.zero_state();
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&grid, &r);
    let target = cg.tol * b_norm;
    let mut iterations = 0;
    while rr.sqrt() > target {
        if iterations >= cg.max_iter {
            return Err(Error::Convergence {
                iterations,
                residual: rr.sqrt() / b_norm,
            });
        }
        let mut ap = apply_gramian(dynamics, disc, &p)?;
        ap.axpy(eta, &p);
        let pap = p.dot(&grid, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numerical(format!(
                "Gramian lost positive definiteness in CG (pᵀAp = {pap:.3e})"
            )));
        }
        let alpha = rr / pap;
        w.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rr_new = r.dot(&grid, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        let mut next = r.clone();
        next.axpy(beta, &p);
        p = next;
        iterations += 1;
        log::debug!("cg iteration {iterations}: relative residual {:.3e}", rr.sqrt() / b_norm);
    }
    let (f, _) = adjoint_observation(dynamics, disc, &w)?;
    let terminal = forward_terminal(dynamics, disc, u_start, Some(&f))?;
    let cost = f.norm();
    let w_norm = w.norm(&grid);
    let terminal_bound = (eta * (cost * cost + eta * w_norm * w_norm)).sqrt();
    Ok(HumOutcome {
        result: ControlResult {
            segments: vec![f],
            cost,
            terminal_norm: terminal.norm(&grid),
            iterations,
            eta,
            stage_breakdown: None,
            gramian_min_eig: None,
            terminal_bound: Some(terminal_bound),
        },
        w_star: w,
        terminal,
        relative_residual: rr.sqrt() / b_norm,
    })
}

/// `∫∫_ω f·Dᵀw + ⟨u0, w(t₀)⟩ + η⟨w_T*, w_T⟩` for adjoint test data `w_T`;
/// vanishes at the HUM minimizer.
pub fn optimality_defect(
    dynamics: &Dynamics,
    disc: &Discretization,
    u_start: &State,
    outcome: &HumOutcome,
    w_test: &State,
) -> Result<f64> {
    let (obs, w0) = adjoint_observation(dynamics, disc, w_test)?;
    let pairing = outcome
        .result
        .segments
        .first()
        .map(|f| f.dot(&obs))
        .unwrap_or(0.0);
    let grid = &dynamics.grid;
    Ok(pairing + u_start.dot(grid, &w0) + outcome.result.eta * outcome.w_star.dot(grid, w_test))
}

/// Settings of the three-stage construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct ThreeStageOptions {
    /// Cutoff constant `D` in `K = floor(D/ε)`.
    pub cutoff_constant: f64,
    pub eta: f64,
    pub cg: CgOptions,
    /// Steps on each controlled stage; `None` picks the smallest count with
    /// `Δt <= h`.
    pub stage_steps: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ThreeStageOutcome {
    pub result: ControlResult,
    pub stage1: LowFrequencyOutcome,
    pub decay: DecayReport,
    pub stage3: HumOutcome,
    pub space_dim: usize,
}

/// Low-frequency control on `[0,T/3]`, free decay on `[T/3,2T/3]`, penalized
/// HUM on `[2T/3,T]`.
pub fn three_stage_control(
    dynamics: &Dynamics,
    space: &LowFrequencySpace,
    u0: &State,
    horizon: f64,
    options: ThreeStageOptions,
) -> Result<ThreeStageOutcome> {
    check_eta(options.eta)?;
    let grid = dynamics.grid;
    let third = horizon / 3.0;
    let stage_disc = |t0: f64, t1: f64| match options.stage_steps {
        Some(m) => Discretization::new(grid, m, t0, t1),
        None => Discretization::auto(grid, t0, t1),
    };
    let norm0 = u0.norm(&grid);
    let d1 = stage_disc(0.0, third)?;
    let stage1 = low_frequency_control(dynamics, space, u0, &d1)?;
    let (u2, decay) = free_decay(dynamics, &stage1.terminal, third, 2.0 * third, space, Some(norm0))?;
    let d3 = stage_disc(2.0 * third, horizon)?;
    let stage3 = hum_control(dynamics, &d3, &u2, options.eta, options.cg)?;
    let c1 = stage1.result.cost;
    let c3 = stage3.result.cost;
    let mut segments = stage1.result.segments.clone();
    segments.extend(stage3.result.segments.iter().cloned());
    let breakdown = StageBreakdown {
        stage1_cost: c1,
        stage3_cost: c3,
        projection_residual: stage1.projection_residual,
        norm_after_stage1: stage1.terminal.norm(&grid),
        norm_after_stage2: u2.norm(&grid),
        decay_bound_holds: decay.bound_holds,
        fitted_decay_rate: decay.fitted_rate,
        mu_next: decay.mu_next,
        cutoff: space.cutoff,
        stage3_iterations: stage3.result.iterations,
    };
    Ok(ThreeStageOutcome {
        result: ControlResult {
            segments,
            cost: (c1 * c1 + c3 * c3).sqrt(),
            terminal_norm: stage3.result.terminal_norm,
            iterations: stage3.result.iterations,
            eta: options.eta,
            stage_breakdown: Some(breakdown),
            gramian_min_eig: Some(stage1.gramian_min_eig),
            terminal_bound: stage3.result.terminal_bound,
        },
        space_dim: space.dim(),
        stage1,
        decay,
        stage3,
    })
}

/// `K = floor(D/ε)` low-frequency space for a system.
pub fn build_space(
    dynamics: &Dynamics,
    epsilon: f64,
    cutoff_constant: f64,
) -> Result<LowFrequencySpace> {
    let cutoff = low_frequency_cutoff(epsilon, cutoff_constant)?;
    LowFrequencySpace::from_operator(&dynamics.operator, &dynamics.grid, &dynamics.c, cutoff)
}
