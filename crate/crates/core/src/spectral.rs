//! Eigenpairs of `−𝓛^ε` and of the coupled adjoint operator `−𝓛^ε + Cᵀ`,
//! low-frequency spaces, and the gap and ω-mass diagnostics.
//!
//! For every eigenvalue `σ` of `Cᵀ` with eigenvector `c(σ)` and every scalar
//! pair `(λ_k, φ_k)`, `Φ = c(σ) ⊗ φ_k` solves `(−𝓛 + Cᵀ)Φ = (λ_k + σ)Φ`.
//! When `C` is a companion matrix, `c(σ) ∝ (1, σ, …, σ^{n−1})`.
//!
//! `C` is not normal in general, so the `Φ` sharing a scalar index `k` are
//! not mutually orthogonal; pairs with different `k` are. Projections
//! therefore go through the Gram matrix of the family.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::coeff::{PeriodicCoefficient, TransformData};
use crate::error::{Error, Result};
use crate::grid::{Grid, Interval, State};
use crate::kalman::{null_vector, real_spectrum};
use crate::pde::{assemble_operator, Sampling};
use crate::tridiag::SymTridiagonal;

#[derive(Debug, Clone)]
pub struct ScalarEigenpair {
    /// 1-based index.
    pub k: usize,
    pub lambda: f64,
    /// Grid values, unit norm in the discrete `L²(0,1)` product.
    pub phi: Arc<Vec<f64>>,
    /// `‖−Lφ − λφ‖` in the discrete `L²` norm.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct CoupledEigenpair {
    pub k: usize,
    /// 1-based branch index, branches ordered by ascending `σ`.
    pub i: usize,
    pub lambda: f64,
    pub sigma: f64,
    /// `λ_k + σ_i`.
    pub mu: f64,
    /// Unit vector `c(σ_i)` with `Cᵀ c = σ_i c`.
    pub coeffs: Vec<f64>,
    pub phi: Arc<Vec<f64>>,
}

impl CoupledEigenpair {
    /// `Φ = c ⊗ φ`.
    pub fn state(&self) -> State {
        State::tensor(&self.coeffs, &self.phi)
    }

    /// `⟨u, Φ⟩` in the discrete `(L²)ⁿ` product.
    pub fn pair_with(&self, grid: &Grid, u: &State) -> f64 {
        let h = grid.h();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(c, w)| {
                w * h * u
                    .component(c)
                    .iter()
                    .zip(self.phi.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum()
    }
}

fn check_mode_count(grid: &Grid, count: usize, components: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::InvalidParameter("requested zero eigenpairs".into()));
    }
    if count * components > grid.len() / 4 {
        return Err(Error::Resolution(format!(
            "{count} modes × {components} components exceed N/4 = {} resolved modes",
            grid.len() / 4
        )));
    }
    Ok(())
}

/// First `count` eigenpairs of `−L` with `L` the flux-form discretization of
/// `∂x(a(x/ε)∂x)`; `components` only enters the resolved-mode check.
pub fn scalar_spectrum(
    a: &PeriodicCoefficient,
    epsilon: f64,
    grid: &Grid,
    count: usize,
    components: usize,
) -> Result<Vec<ScalarEigenpair>> {
    scalar_spectrum_with(a, epsilon, grid, count, components, Sampling::Midpoint)
}

pub fn scalar_spectrum_with(
    a: &PeriodicCoefficient,
    epsilon: f64,
    grid: &Grid,
    count: usize,
    components: usize,
    sampling: Sampling,
) -> Result<Vec<ScalarEigenpair>> {
    check_mode_count(grid, count, components.max(1))?;
    let operator = assemble_operator(a, epsilon, grid, sampling)?;
    operator_spectrum(&operator, grid, count)
}

/// Lowest `count` eigenpairs of `−L` for an assembled operator `L`.
pub fn operator_spectrum(
    operator: &SymTridiagonal,
    grid: &Grid,
    count: usize,
) -> Result<Vec<ScalarEigenpair>> {
    let negated = operator.scaled(-1.0);
    let pairs = negated.lowest_eigenpairs(count)?;
    let scale = 1.0 / grid.h().sqrt();
    let mut out = Vec::with_capacity(count);
    let mut work = vec![0.0; grid.len()];
    for (index, (lambda, v)) in pairs.into_iter().enumerate() {
        let sign = if v.iter().find(|x| x.abs() > 1e-300).copied().unwrap_or(1.0) < 0.0 {
            -scale
        } else {
            scale
        };
        let phi: Vec<f64> = v.iter().map(|x| x * sign).collect();
        negated.apply(&phi, &mut work);
        let residual = grid.norm(
            &work
                .iter()
                .zip(&phi)
                .map(|(lp, p)| lp - lambda * p)
                .collect::<Vec<_>>(),
        );
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Numerical(format!(
                "eigenvalue {index} = {lambda} of −L is not positive"
            )));
        }
        if residual > 1e-6 * lambda {
            return Err(Error::Numerical(format!(
                "eigenpair {} did not converge (residual {residual:.3e})",
                index + 1
            )));
        }
        out.push(ScalarEigenpair {
            k: index + 1,
            lambda,
            phi: Arc::new(phi),
            residual,
        });
    }
    Ok(out)
}

/// True when `c` has a unit subdiagonal and zeros off the subdiagonal and
/// last column.
pub fn is_companion(c: &DMatrix<f64>) -> bool {
    let n = c.nrows();
    (0..n).all(|i| {
        (0..n - 1).all(|j| {
            let expected = if i == j + 1 { 1.0 } else { 0.0 };
            c[(i, j)] == expected
        })
    })
}

/// Unit eigenvectors of `Cᵀ`, one per ascending eigenvalue, with the first
/// non-negligible entry positive.
pub fn adjoint_branches(c: &DMatrix<f64>) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = c.nrows();
    let sigmas = real_spectrum(c)?;
    let radius = sigmas.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if sigmas
        .windows(2)
        .any(|w| !(w[1] - w[0] > 1e-8 * radius.max(f64::MIN_POSITIVE)))
    {
        return Err(Error::HypothesisViolation(
            "coupling matrix has a repeated eigenvalue".into(),
        ));
    }
    let companion = is_companion(c);
    let ct = c.transpose();
    sigmas
        .into_iter()
        .map(|sigma| {
            let mut v: Vec<f64> = if companion {
                (0..n).map(|p| sigma.powi(p as i32)).collect()
            } else {
                null_vector(&ct, sigma)?.iter().copied().collect()
            };
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let lead = v.iter().copied().find(|x| x.abs() > 1e-12 * norm).unwrap_or(1.0);
            let factor = lead.signum() / norm;
            v.iter_mut().for_each(|x| *x *= factor);
            Ok((sigma, v))
        })
        .collect()
}

/// All pairs `(σ_i + λ_k, c(σ_i) ⊗ φ_k)`, sorted by `μ` with `(k, i)`
/// tie-breaking.
pub fn coupled_spectrum(
    scalars: &[ScalarEigenpair],
    c: &DMatrix<f64>,
) -> Result<Vec<CoupledEigenpair>> {
    let branches = adjoint_branches(c)?;
    let mut pairs = Vec::with_capacity(scalars.len() * branches.len());
    for s in scalars {
        for (i, (sigma, coeffs)) in branches.iter().enumerate() {
            pairs.push(CoupledEigenpair {
                k: s.k,
                i: i + 1,
                lambda: s.lambda,
                sigma: *sigma,
                mu: s.lambda + sigma,
                coeffs: coeffs.clone(),
                phi: Arc::clone(&s.phi),
            });
        }
    }
    sort_pairs(&mut pairs);
    Ok(pairs)
}

fn sort_pairs(pairs: &mut [CoupledEigenpair]) {
    pairs.sort_by(|a, b| {
        a.mu.total_cmp(&b.mu)
            .then(a.k.cmp(&b.k))
            .then(a.i.cmp(&b.i))
    });
}

/// `max(1, floor(D/ε))`.
pub fn low_frequency_cutoff(epsilon: f64, d: f64) -> Result<usize> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidParameter(format!("cutoff constant D = {d} must be > 0")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {epsilon} must be > 0")));
    }
    Ok(((d / epsilon) * (1.0 + 1e-12)).floor().max(1.0) as usize)
}

/// Span of the `K·n` coupled pairs with smallest `μ`.
#[derive(Debug, Clone)]
pub struct LowFrequencySpace {
    pub cutoff: usize,
    pub grid: Grid,
    pub members: Vec<CoupledEigenpair>,
    /// The next pair above the cut, `μ_{K+1}` in the relabeled sequence.
    pub next: CoupledEigenpair,
    gram: DMatrix<f64>,
    gram_factor: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
}

impl LowFrequencySpace {
    /// Computes enough scalar modes that no uncomputed pair can fall below
    /// the `(K·n+1)`-th `μ`.
    pub fn build(
        a: &PeriodicCoefficient,
        epsilon: f64,
        grid: &Grid,
        c: &DMatrix<f64>,
        cutoff: usize,
        sampling: Sampling,
    ) -> Result<Self> {
        let operator = assemble_operator(a, epsilon, grid, sampling)?;
        Self::from_operator(&operator, grid, c, cutoff)
    }

    pub fn from_operator(
        operator: &SymTridiagonal,
        grid: &Grid,
        c: &DMatrix<f64>,
        cutoff: usize,
    ) -> Result<Self> {
        let n = c.nrows();
        check_mode_count(grid, cutoff, n)?;
        let branches = adjoint_branches(c)?;
        let mut count = cutoff + 1;
        loop {
            if count > grid.len() {
                return Err(Error::Resolution(
                    "grid too coarse to separate the low-frequency space".into(),
                ));
            }
            let scalars = operator_spectrum(operator, grid, count)?;
            let top = scalars.last().unwrap().lambda;
            let pairs = coupled_spectrum(&scalars, c)?;
            let next_mu = pairs[cutoff * n].mu;
            // Any uncomputed pair has μ >= λ_{count+1} + σ_min > top + σ_min.
            if next_mu <= top + branches[0].0 || count == grid.len() {
                let mut members = pairs;
                let next = members[cutoff * n].clone();
                members.truncate(cutoff * n);
                return Self::from_members(*grid, cutoff, members, next);
            }
            count = (count + n).min(grid.len());
        }
    }

    pub fn from_members(
        grid: Grid,
        cutoff: usize,
        members: Vec<CoupledEigenpair>,
        next: CoupledEigenpair,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidParameter("empty low-frequency space".into()));
        }
        let dim = members.len();
        let mut gram = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            for l in 0..=j {
                let v = if members[j].k == members[l].k {
                    dot(&members[j].coeffs, &members[l].coeffs) * grid.dot(&members[j].phi, &members[l].phi)
                } else {
                    0.0
                };
                gram[(j, l)] = v;
                gram[(l, j)] = v;
            }
        }
        let gram_factor = gram.clone().cholesky().ok_or_else(|| {
            Error::Numerical("Gram matrix of the low-frequency family is singular".into())
        })?;
        Ok(Self {
            cutoff,
            grid,
            members,
            next,
            gram,
            gram_factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.members.len()
    }

    pub fn components(&self) -> usize {
        self.members[0].coeffs.len()
    }

    /// `Q_{jl} = ⟨Φ_j, Φ_l⟩`, block diagonal in `k`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `(⟨u, Φ_j⟩)_j`.
    pub fn moments(&self, u: &State) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.members.iter().map(|p| p.pair_with(&self.grid, u)))
    }

    /// Coordinates `α` of the orthogonal projection `Πu = Σ α_j Φ_j`.
    pub fn project(&self, u: &State) -> DVector<f64> {
        self.gram_factor.solve(&self.moments(u))
    }

    pub fn reconstruct(&self, alpha: &DVector<f64>) -> State {
        let mut out = State::zeros(self.components(), self.grid.len());
        for (p, a) in self.members.iter().zip(alpha.iter()) {
            out.axpy(*a, &p.state());
        }
        out
    }

    /// `‖Πu‖ = sqrt(αᵀ Q α)`.
    pub fn projection_norm(&self, u: &State) -> f64 {
        let m = self.moments(u);
        let alpha = self.gram_factor.solve(&m);
        alpha.dot(&m).max(0.0).sqrt()
    }

    pub fn mu(&self) -> Vec<f64> {
        self.members.iter().map(|p| p.mu).collect()
    }

    /// `max |⟨Φ_j, Φ_l⟩|` over pairs with different scalar index.
    pub fn cross_orthogonality_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (j, a) in self.members.iter().enumerate() {
            for b in &self.members[..j] {
                if a.k != b.k {
                    let v = dot(&a.coeffs, &b.coeffs) * self.grid.dot(&a.phi, &b.phi);
                    worst = worst.max(v.abs());
                }
            }
        }
        worst
    }
}

/// Coordinates of `u` in the low-frequency family, the orthogonal
/// projection `Π` onto its span.
pub fn project_low(u: &State, space: &LowFrequencySpace) -> Result<DVector<f64>> {
    if u.components() != space.components() || u.points() != space.grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "state {}x{} does not match space {}x{}",
            u.components(),
            u.points(),
            space.components(),
            space.grid.len()
        )));
    }
    Ok(space.project(u))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    /// `π / √ā`.
    pub reference: f64,
    /// `√μ_{j+1} − √μ_j` of the merged sequence, `j < K`.
    pub merged: Vec<f64>,
    /// Per-branch gaps `√μ_{k+1,i} − √μ_{k,i}` for `k < K`.
    pub branches: Vec<Vec<f64>>,
    pub min_branch_gap: f64,
    pub threshold: f64,
    /// `(branch, k)` with branch gap below `reference − threshold`.
    pub violations: Vec<(usize, usize)>,
}

/// Gap diagnostics; never fails on small gaps, only reports them.
pub fn spectral_gap_report(
    pairs: &[CoupledEigenpair],
    a_bar: f64,
    cutoff: usize,
    threshold: f64,
) -> Result<GapReport> {
    if cutoff > pairs.len() {
        return Err(Error::InvalidParameter(format!(
            "cutoff {cutoff} exceeds the {} available pairs",
            pairs.len()
        )));
    }
    if !(a_bar > 0.0) {
        return Err(Error::InvalidParameter(format!("ā = {a_bar} must be > 0")));
    }
    let reference = PI / a_bar.sqrt();
    let merged: Vec<f64> = pairs
        .windows(2)
        .take(cutoff)
        .map(|w| w[1].mu.max(0.0).sqrt() - w[0].mu.max(0.0).sqrt())
        .collect();
    let n_branches = pairs.iter().map(|p| p.i).max().unwrap_or(0);
    let mut branches = Vec::with_capacity(n_branches);
    let mut violations = Vec::new();
    let mut min_branch_gap = f64::INFINITY;
    for i in 1..=n_branches {
        let mut branch: Vec<&CoupledEigenpair> = pairs.iter().filter(|p| p.i == i).collect();
        branch.sort_by_key(|p| p.k);
        let gaps: Vec<f64> = branch
            .windows(2)
            .filter(|w| w[0].k < cutoff.max(1) + 1 && w[1].k == w[0].k + 1)
            .take(cutoff)
            .map(|w| w[1].mu.max(0.0).sqrt() - w[0].mu.max(0.0).sqrt())
            .collect();
        for (idx, g) in gaps.iter().enumerate() {
            min_branch_gap = min_branch_gap.min(*g);
            if *g < reference - threshold {
                violations.push((i, branch[idx].k));
            }
        }
        branches.push(gaps);
    }
    if !violations.is_empty() {
        log::info!(
            "{} branch gaps fall below π/√ā − {threshold} = {:.4}",
            violations.len(),
            reference - threshold
        );
    }
    Ok(GapReport {
        reference,
        merged,
        branches,
        min_branch_gap,
        threshold,
        violations,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OmegaMassReport {
    /// `‖(Φ_j)₁‖_{L²(ω)}` in member order.
    pub masses: Vec<f64>,
    pub min: f64,
}

/// Observed mass of the first component of each pair on ω.
pub fn omega_mass_report(
    pairs: &[CoupledEigenpair],
    grid: &Grid,
    omega: &Interval,
) -> Result<OmegaMassReport> {
    let mask = grid.mask(omega);
    if mask.is_empty() {
        return Err(Error::Resolution(format!(
            "no grid node lies inside omega = ({}, {})",
            omega.left, omega.right
        )));
    }
    let masses: Vec<f64> = pairs
        .iter()
        .map(|p| p.coeffs[0].abs() * grid.dot_on(&mask, &p.phi, &p.phi).sqrt())
        .collect();
    let min = masses.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(OmegaMassReport { masses, min })
}

/// Lowest `count` Dirichlet eigenvalues of `−∂yy + b(y)` on `(0, L)` using
/// `points` interior nodes of a uniform y-grid.
pub fn schrodinger_spectrum(
    transform: &TransformData,
    points: usize,
    count: usize,
) -> Result<Vec<f64>> {
    if points < 4 * count {
        return Err(Error::Resolution(format!(
            "{points} nodes cannot resolve {count} Schrödinger modes"
        )));
    }
    let hy = transform.length / (points as f64 + 1.0);
    let inv = 1.0 / (hy * hy);
    let diag: Vec<f64> = (1..=points)
        .map(|j| 2.0 * inv + transform.b_of_y(j as f64 * hy))
        .collect();
    let op = SymTridiagonal::new(diag, vec![-inv; points - 1])?;
    (0..count).map(|k| op.eigenvalue(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{build_transform, TransformOptions};
    use crate::kalman::companion_reduction;

    fn unit() -> PeriodicCoefficient {
        PeriodicCoefficient::constant(1.0).unwrap()
    }

    #[test]
    fn constant_coefficient_scaling() {
        let grid = Grid::new(400).unwrap();
        let one = scalar_spectrum(&unit(), 0.1, &grid, 5, 1).unwrap();
        let four = scalar_spectrum(&PeriodicCoefficient::constant(4.0).unwrap(), 0.1, &grid, 5, 1)
            .unwrap();
        let h = grid.h();
        for (k, (p, q)) in one.iter().zip(&four).enumerate() {
            let exact = 4.0 / (h * h) * ((k + 1) as f64 * PI * h / 2.0).sin().powi(2);
            assert!((p.lambda - exact).abs() < 1e-9 * exact);
            assert!((q.lambda - 4.0 * p.lambda).abs() < 1e-9 * q.lambda);
            assert!((grid.norm(&p.phi) - 1.0).abs() < 1e-10);
            assert!(p.phi[0] > 0.0);
        }
    }

    #[test]
    fn mode_budget_enforced() {
        let grid = Grid::new(40).unwrap();
        assert!(matches!(
            scalar_spectrum(&unit(), 0.5, &grid, 11, 1),
            Err(Error::Resolution(_))
        ));
        assert!(matches!(
            scalar_spectrum(&PeriodicCoefficient::sin(2.0, 1.0).unwrap(), 0.01, &grid, 2, 1),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn uncoupled_branch_is_scalar_spectrum() {
        let grid = Grid::new(200).unwrap();
        let scalars = scalar_spectrum(&unit(), 0.5, &grid, 4, 1).unwrap();
        let pairs = coupled_spectrum(&scalars, &DMatrix::zeros(1, 1)).unwrap();
        for (p, s) in pairs.iter().zip(&scalars) {
            assert_eq!(p.mu, s.lambda);
            assert_eq!(p.coeffs, vec![1.0]);
        }
    }

    #[test]
    fn two_branch_normalization() {
        let grid = Grid::new(200).unwrap();
        let scalars = scalar_spectrum(&unit(), 0.5, &grid, 2, 2).unwrap();
        let form = companion_reduction(
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
            &DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        let pairs = coupled_spectrum(&scalars, &form.c).unwrap();
        let first: Vec<&CoupledEigenpair> = pairs.iter().filter(|p| p.k == 1).collect();
        assert!((first[0].mu - scalars[0].lambda - 1.0).abs() < 1e-12);
        assert!((first[1].mu - scalars[0].lambda - 2.0).abs() < 1e-12);
        let r2 = 2f64.sqrt();
        let r5 = 5f64.sqrt();
        assert!((first[0].coeffs[0] - 1.0 / r2).abs() < 1e-15);
        assert!((first[0].coeffs[1] - 1.0 / r2).abs() < 1e-15);
        assert!((first[1].coeffs[0] - 1.0 / r5).abs() < 1e-15);
        assert!((first[1].coeffs[1] - 2.0 / r5).abs() < 1e-15);
    }

    #[test]
    fn general_cascade_uses_null_vectors() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 3.0]);
        let branches = adjoint_branches(&c).unwrap();
        for (sigma, v) in branches {
            let v = DVector::from_vec(v);
            assert!((c.transpose() * &v - &v * sigma).amax() < 1e-12);
        }
    }

    #[test]
    fn cutoff_examples() {
        assert_eq!(low_frequency_cutoff(0.1, 1.0).unwrap(), 10);
        assert_eq!(low_frequency_cutoff(0.1, 0.5).unwrap(), 5);
        assert_eq!(low_frequency_cutoff(1.0 / 3.0, 1.0).unwrap(), 3);
        assert_eq!(low_frequency_cutoff(0.9, 0.5).unwrap(), 1);
        assert!(low_frequency_cutoff(0.1, 0.0).is_err());
    }

    #[test]
    fn unit_gaps_are_pi() {
        let grid = Grid::new(4000).unwrap();
        let scalars = scalar_spectrum(&unit(), 0.5, &grid, 6, 1).unwrap();
        let pairs = coupled_spectrum(&scalars, &DMatrix::zeros(1, 1)).unwrap();
        let report = spectral_gap_report(&pairs, 1.0, 5, 0.1).unwrap();
        assert!((report.reference - PI).abs() < 1e-15);
        for g in &report.merged {
            assert!((g - PI).abs() < 1e-5 * PI, "{g}");
        }
        assert!(report.violations.is_empty());
    }

    #[test]
    fn merged_gaps_can_be_small_across_branches() {
        let grid = Grid::new(400).unwrap();
        let scalars = scalar_spectrum(&unit(), 0.5, &grid, 6, 2).unwrap();
        // σ = {1, 1 + 3π²}: λ_2 + 1 and λ_1 + 1 + 3π² nearly coincide.
        let s2 = 1.0 + 3.0 * PI * PI;
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, s2]);
        let pairs = coupled_spectrum(&scalars, &c).unwrap();
        let report = spectral_gap_report(&pairs, 1.0, 6, 0.1).unwrap();
        let smallest = report.merged.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(smallest < 0.05);
        for (branch, sigma) in report.branches.iter().zip([1.0, s2]) {
            for (k, g) in branch.iter().enumerate() {
                let k = (k + 1) as f64;
                let exact = ((k + 1.0).powi(2) * PI * PI + sigma).sqrt() - (k * k * PI * PI + sigma).sqrt();
                assert!((g - exact).abs() < 0.01, "{g} vs {exact}");
            }
        }
        assert!(report.branches[0].iter().all(|g| (g - PI).abs() < 0.1));
    }

    #[test]
    fn omega_mass_matches_closed_form() {
        let grid = Grid::new(4000).unwrap();
        let scalars = scalar_spectrum(&unit(), 0.5, &grid, 1, 1).unwrap();
        let pairs = coupled_spectrum(&scalars, &DMatrix::zeros(1, 1)).unwrap();
        let full = omega_mass_report(&pairs, &grid, &Interval::full()).unwrap();
        assert!((full.min - 1.0).abs() < 1e-10);
        let omega = Interval::new(0.3, 0.7).unwrap();
        let report = omega_mass_report(&pairs, &grid, &omega).unwrap();
        // ∫ 2 sin²(πx) over (0.3, 0.7) = 0.4 + (sin 0.6π − sin 1.4π) / (2π)
        let exact = 0.4 + ((0.6 * PI).sin() - (1.4 * PI).sin()) / (2.0 * PI);
        assert!((report.min - exact.sqrt()).abs() < 2e-3, "{} vs {}", report.min, exact.sqrt());
    }

    #[test]
    fn projection_identities() {
        let grid = Grid::new(300).unwrap();
        let a = PeriodicCoefficient::sin(2.0, 1.0).unwrap();
        let form = companion_reduction(
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
            &DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        let space = LowFrequencySpace::build(&a, 0.1, &grid, &form.c, 10, Sampling::Midpoint).unwrap();
        assert_eq!(space.dim(), 20);
        assert!(space.next.mu >= space.members.last().unwrap().mu);
        assert!(space.cross_orthogonality_defect() < 1e-10);
        let third = space.members[2].state();
        let alpha = project_low(&third, &space).unwrap();
        for (j, v) in alpha.iter().enumerate() {
            let e = if j == 2 { 1.0 } else { 0.0 };
            assert!((v - e).abs() < 1e-9, "{j}: {v}");
        }
        // A smooth state: Pythagoras between Πu and u − Πu.
        let u = State::from_components(vec![
            grid.sample(|x| x * (1.0 - x) * (3.0 * x).cos()),
            grid.sample(|x| (PI * x).sin().powi(3)),
        ])
        .unwrap();
        let alpha = project_low(&u, &space).unwrap();
        let pu = space.reconstruct(&alpha);
        let mut rest = u.clone();
        rest.axpy(-1.0, &pu);
        let total = u.norm(&grid).powi(2);
        let parts = pu.norm(&grid).powi(2) + rest.norm(&grid).powi(2);
        assert!((total - parts).abs() < 1e-8 * total);
        assert!((space.projection_norm(&u) - pu.norm(&grid)).abs() < 1e-10);
        assert!(space.moments(&rest).amax() < 1e-10);
    }

    #[test]
    fn liouville_spectrum_matches_unit_coefficient() {
        let t = build_transform(&unit(), 0.5, 40, TransformOptions::default()).unwrap();
        let values = schrodinger_spectrum(&t, 2000, 3).unwrap();
        for (k, v) in values.iter().enumerate() {
            let exact = ((k + 1) as f64 * PI).powi(2);
            assert!((v - exact).abs() < 1e-4 * exact);
        }
    }
}
