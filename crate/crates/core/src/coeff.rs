//! Periodic diffusion coefficients `a(y)`, their ε-scalings `a(x/ε)`, and the
//! change-of-variables chain that turns `-(a(x/ε) φ')'` into a Schrödinger
//! operator `-∂yy + b(y)` on `(0, L)`.
//!
//! The chain is
//!
//! ```text
//! x ∈ (0,1) ──z = δ(ε)·h(x/ε)──▶ z ∈ (0,1) ──y = H(z) = ∫₀ᶻ √r──▶ y ∈ (0,L)
//! ```
//!
//! with `h(X) = ∫₀ˣ 1/a`, `δ(ε) = 1/h(1/ε)`, `r(z) = (ε/δ)² a(h⁻¹(z/δ))`.
//! Writing `X = x/ε`, everything collapses to closed forms in `X`:
//! `y = ε ∫₀ˣ a^{-1/2}`, `g = a'(X) / (2ε √a(X))` and
//! `b = (a''(X)/4 - a'(X)²/(16 a(X))) / ε²`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

const TWO_PI: f64 = 2.0 * PI;
const DEFAULT_PANELS: usize = 8;

/// Closed-form family of a 1-periodic coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientKind {
    /// `a(y) = c`; parameters `[c]`.
    Constant,
    /// `a(y) = m + s·sin(2πy)`; parameters `[m, s]`.
    Sin,
    /// `a(y) = 1 / (α + β sin(2πy))`; parameters `[α, β]`.
    ReciprocalSin,
    /// `a(y) = a₀ + Σ_k (c_k cos 2πky + s_k sin 2πky)`; parameters
    /// `[a₀, c₁, s₁, c₂, s₂, ...]`.
    Fourier,
}

/// A smooth, 1-periodic coefficient with certified bounds
/// `0 < a_min <= a(y) <= a_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicCoefficient {
    kind: CoefficientKind,
    params: Vec<f64>,
    a_min: f64,
    a_max: f64,
}

impl PeriodicCoefficient {
    pub fn new(kind: CoefficientKind, params: Vec<f64>) -> Result<Self> {
        let expected = match kind {
            CoefficientKind::Constant => Some(1),
            CoefficientKind::Sin | CoefficientKind::ReciprocalSin => Some(2),
            CoefficientKind::Fourier => None,
        };
        if let Some(len) = expected {
            if params.len() != len {
                return Err(Error::InvalidParameter(format!(
                    "{kind:?} coefficient takes {len} parameter(s), got {}",
                    params.len()
                )));
            }
        } else if params.is_empty() || params.len().is_multiple_of(2) {
            return Err(Error::InvalidParameter(
                "fourier coefficient takes [a0, c1, s1, ...] (odd length)".into(),
            ));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coefficient parameter".into()));
        }
        let mut coefficient = Self {
            kind,
            params,
            a_min: 0.0,
            a_max: 0.0,
        };
        let (lo, hi) = coefficient.compute_bounds();
        if !(lo > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "coefficient is not uniformly positive (lower bound {lo:.3e})"
            )));
        }
        coefficient.a_min = lo;
        coefficient.a_max = hi;
        Ok(coefficient)
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(CoefficientKind::Constant, vec![c])
    }

    /// `m + s sin(2πy)`.
    pub fn sin(mean: f64, amplitude: f64) -> Result<Self> {
        Self::new(CoefficientKind::Sin, vec![mean, amplitude])
    }

    /// `1 / (α + β sin(2πy))`.
    pub fn reciprocal_sin(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(CoefficientKind::ReciprocalSin, vec![alpha, beta])
    }

    pub fn fourier(params: Vec<f64>) -> Result<Self> {
        Self::new(CoefficientKind::Fourier, params)
    }

    pub fn kind(&self) -> CoefficientKind {
        self.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn is_constant(&self) -> bool {
        match self.kind {
            CoefficientKind::Constant => true,
            CoefficientKind::Sin | CoefficientKind::ReciprocalSin => self.params[1] == 0.0,
            CoefficientKind::Fourier => self.params[1..].iter().all(|p| *p == 0.0),
        }
    }

    /// `a(y)`.
    pub fn value(&self, y: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            CoefficientKind::Constant => p[0],
            CoefficientKind::Sin => p[0] + p[1] * (TWO_PI * y).sin(),
            CoefficientKind::ReciprocalSin => 1.0 / (p[0] + p[1] * (TWO_PI * y).sin()),
            CoefficientKind::Fourier => {
                let mut v = p[0];
                for (k, pair) in p[1..].chunks(2).enumerate() {
                    let w = TWO_PI * (k + 1) as f64 * y;
                    v += pair[0] * w.cos() + pair[1] * w.sin();
                }
                v
            }
        }
    }

    /// `a'(y)`.
    pub fn derivative(&self, y: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            CoefficientKind::Constant => 0.0,
            CoefficientKind::Sin => p[1] * TWO_PI * (TWO_PI * y).cos(),
            CoefficientKind::ReciprocalSin => {
                let d = p[0] + p[1] * (TWO_PI * y).sin();
                -p[1] * TWO_PI * (TWO_PI * y).cos() / (d * d)
            }
            CoefficientKind::Fourier => {
                let mut v = 0.0;
                for (k, pair) in p[1..].chunks(2).enumerate() {
                    let freq = TWO_PI * (k + 1) as f64;
                    let w = freq * y;
                    v += freq * (-pair[0] * w.sin() + pair[1] * w.cos());
                }
                v
            }
        }
    }

    /// `a''(y)`.
    pub fn second_derivative(&self, y: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            CoefficientKind::Constant => 0.0,
            CoefficientKind::Sin => -p[1] * TWO_PI * TWO_PI * (TWO_PI * y).sin(),
            CoefficientKind::ReciprocalSin => {
                let (s, c) = (TWO_PI * y).sin_cos();
                let d = p[0] + p[1] * s;
                let dp = p[1] * TWO_PI * c;
                let dpp = -p[1] * TWO_PI * TWO_PI * s;
                // (1/d)'' = 2 d'^2 / d^3 - d'' / d^2
                2.0 * dp * dp / (d * d * d) - dpp / (d * d)
            }
            CoefficientKind::Fourier => {
                let mut v = 0.0;
                for (k, pair) in p[1..].chunks(2).enumerate() {
                    let freq = TWO_PI * (k + 1) as f64;
                    let w = freq * y;
                    v -= freq * freq * (pair[0] * w.cos() + pair[1] * w.sin());
                }
                v
            }
        }
    }

    fn compute_bounds(&self) -> (f64, f64) {
        let p = &self.params;
        match self.kind {
            CoefficientKind::Constant => (p[0], p[0]),
            CoefficientKind::Sin => (p[0] - p[1].abs(), p[0] + p[1].abs()),
            CoefficientKind::ReciprocalSin => {
                let lo_den = p[0] - p[1].abs();
                let hi_den = p[0] + p[1].abs();
                if lo_den <= 0.0 {
                    (lo_den, f64::INFINITY)
                } else {
                    (1.0 / hi_den, 1.0 / lo_den)
                }
            }
            CoefficientKind::Fourier => {
                // Sampled extrema are within max|a''| Δ² / 8 of the true ones.
                let samples = 8192;
                let dy = 1.0 / samples as f64;
                let curvature: f64 = p[1..]
                    .chunks(2)
                    .enumerate()
                    .map(|(k, pair)| {
                        let f = TWO_PI * (k + 1) as f64;
                        f * f * (pair[0].abs() + pair[1].abs())
                    })
                    .sum();
                let slack = curvature * dy * dy / 8.0;
                let (lo, hi) = (0..samples)
                    .map(|i| self.value(i as f64 * dy))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    });
                (lo - slack, hi + slack)
            }
        }
    }

    /// Largest sampled `|a''|` estimated by centered second differences, the
    /// `W^{2,∞}` surrogate check.
    pub fn second_difference_bound(&self, samples: usize) -> f64 {
        let d = 1.0 / samples.max(8) as f64;
        (0..samples.max(8))
            .map(|i| {
                let y = i as f64 * d;
                ((self.value(y + d) - 2.0 * self.value(y) + self.value(y - d)) / (d * d)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `∫₀¹ f(a(s)) ds` by composite Gauss–Legendre.
    fn cell_integral<F: Fn(f64) -> f64>(&self, rule: &GaussLegendre, f: F) -> f64 {
        rule.integrate_composite(|s| f(self.value(s)), 0.0, 1.0, DEFAULT_PANELS)
    }

    /// `∫₀ˣ f(a(s)) ds` for any `X >= 0` using periodicity.
    fn primitive<F: Fn(f64) -> f64>(&self, rule: &GaussLegendre, cell: f64, x: f64, f: F) -> f64 {
        let cells = x.floor();
        let frac = x - cells;
        let panels = ((frac * DEFAULT_PANELS as f64).ceil() as usize).max(1);
        let partial = if frac > 0.0 {
            rule.integrate_composite(|s| f(self.value(s)), 0.0, frac, panels)
        } else {
            0.0
        };
        cells * cell + partial
    }
}

/// `a(x/ε)`.
pub fn sample_coefficient(a: &PeriodicCoefficient, epsilon: f64, x: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    Ok(a.value(x / epsilon))
}

/// ε must lie in `(0, 1]`; ε = 1 is the unscaled coefficient.
pub fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon = {epsilon} must lie in (0, 1]"
        )));
    }
    Ok(())
}

/// True when ε = 1/k for an integer k, the setting in which `ε/δ(ε)`
/// equals `∫₀¹ 1/a` exactly.
pub fn is_reciprocal_integer(epsilon: f64) -> bool {
    let k = (1.0 / epsilon).round();
    k >= 1.0 && (k * epsilon - 1.0).abs() <= 1e-12 * k
}

/// Harmonic mean `(∫₀¹ 1/a)⁻¹`, the homogenized diffusion coefficient.
pub fn harmonic_mean(a: &PeriodicCoefficient, quad_order: usize) -> Result<f64> {
    if quad_order < 2 {
        return Err(Error::InvalidParameter(format!(
            "quadrature order must be at least 2, got {quad_order}"
        )));
    }
    let rule = GaussLegendre::new(quad_order);
    Ok(1.0 / a.cell_integral(&rule, |v| 1.0 / v))
}

/// How the derivatives of `a` entering `g` and `b` are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    #[default]
    Analytic,
    /// Fourth-order centered differences with the transform grid spacing.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformOptions {
    pub quad_order: usize,
    pub derivatives: DerivativeMode,
}

impl Default for TransformOptions {
    fn default() -> Self {
        Self {
            quad_order: 16,
            derivatives: DerivativeMode::Analytic,
        }
    }
}

/// Tabulated change-of-variables chain for one ε.
#[derive(Debug, Clone)]
pub struct TransformData {
    coefficient: PeriodicCoefficient,
    rule: GaussLegendre,
    options: TransformOptions,
    pub epsilon: f64,
    /// `δ(ε) = (∫₀^{1/ε} 1/a)⁻¹`.
    pub delta: f64,
    /// `ε/δ(ε)`; equals `∫₀¹ ã(z) dz` (the mean of `r`).
    pub scale: f64,
    /// `L = ∫₀¹ √r(z) dz`, the length of the Schrödinger interval.
    pub length: f64,
    cell_inv: f64,
    cell_rsqrt: f64,
    fd_step: f64,
    /// Tabulation nodes `x_i = i / grid_size`.
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    /// `y_i = H(z_i)`.
    pub y: Vec<f64>,
    pub g: Vec<f64>,
    pub b: Vec<f64>,
}

/// Tabulates the transform chain on `grid_size + 1` uniform x-nodes.
pub fn build_transform(
    a: &PeriodicCoefficient,
    epsilon: f64,
    grid_size: usize,
    options: TransformOptions,
) -> Result<TransformData> {
    check_epsilon(epsilon)?;
    if options.quad_order < 2 {
        return Err(Error::InvalidParameter("quadrature order must be >= 2".into()));
    }
    if (grid_size as f64) < 20.0 / epsilon * (1.0 - 1e-12) {
        return Err(Error::Resolution(format!(
            "transform grid of {grid_size} cells does not resolve ε = {epsilon} (need >= {:.0})",
            20.0 / epsilon
        )));
    }
    let rule = GaussLegendre::new(options.quad_order);
    let cell_inv = a.cell_integral(&rule, |v| 1.0 / v);
    let cell_rsqrt = a.cell_integral(&rule, |v| 1.0 / v.sqrt());
    let period_count = 1.0 / epsilon;
    let total_inv = a.primitive(&rule, cell_inv, period_count, |v| 1.0 / v);
    let total_rsqrt = a.primitive(&rule, cell_rsqrt, period_count, |v| 1.0 / v.sqrt());
    let delta = 1.0 / total_inv;
    let scale = epsilon / delta;
    let mut data = TransformData {
        coefficient: a.clone(),
        rule,
        options,
        epsilon,
        delta,
        scale,
        length: epsilon * total_rsqrt,
        cell_inv,
        cell_rsqrt,
        fd_step: 1.0 / (grid_size as f64 * epsilon),
        x: Vec::with_capacity(grid_size + 1),
        z: Vec::with_capacity(grid_size + 1),
        r: Vec::with_capacity(grid_size + 1),
        y: Vec::with_capacity(grid_size + 1),
        g: Vec::with_capacity(grid_size + 1),
        b: Vec::with_capacity(grid_size + 1),
    };
    for i in 0..=grid_size {
        let x = i as f64 / grid_size as f64;
        let z = data.z_of_x(x);
        let y = data.y_of_x(x);
        let (g, b) = data.g_b_at_x(x);
        data.x.push(x);
        data.z.push(z);
        data.r.push(data.r_at_x(x));
        data.y.push(y);
        data.g.push(g);
        data.b.push(b);
    }
    // Pin the endpoints against quadrature round-off.
    data.z[0] = 0.0;
    data.y[0] = 0.0;
    data.z[grid_size] = 1.0;
    data.y[grid_size] = data.length;
    Ok(data)
}

impl TransformData {
    pub fn coefficient(&self) -> &PeriodicCoefficient {
        &self.coefficient
    }

    /// `∫₀¹ ã(z) dz`, the averaged transformed coefficient entering the
    /// spectral-gap reference `π / √ā`.
    pub fn a_bar(&self) -> f64 {
        self.scale
    }

    fn inv_primitive(&self, cells: f64) -> f64 {
        self.coefficient
            .primitive(&self.rule, self.cell_inv, cells, |v| 1.0 / v)
    }

    fn rsqrt_primitive(&self, cells: f64) -> f64 {
        self.coefficient
            .primitive(&self.rule, self.cell_rsqrt, cells, |v| 1.0 / v.sqrt())
    }

    /// `z(x) = δ h(x/ε)`.
    pub fn z_of_x(&self, x: f64) -> f64 {
        self.delta * self.inv_primitive(x / self.epsilon)
    }

    /// `H(z(x)) = ε ∫₀^{x/ε} a^{-1/2}`.
    pub fn y_of_x(&self, x: f64) -> f64 {
        self.epsilon * self.rsqrt_primitive(x / self.epsilon)
    }

    /// `r(z(x)) = (ε/δ)² a(x/ε)`.
    pub fn r_at_x(&self, x: f64) -> f64 {
        self.scale * self.scale * self.coefficient.value(x / self.epsilon)
    }

    fn derivatives_at(&self, big_x: f64) -> (f64, f64, f64) {
        let a = &self.coefficient;
        let v = a.value(big_x);
        match self.options.derivatives {
            DerivativeMode::Analytic => (v, a.derivative(big_x), a.second_derivative(big_x)),
            DerivativeMode::FiniteDifference => {
                let d = self.fd_step;
                let (m2, m1, p1, p2) = (
                    a.value(big_x - 2.0 * d),
                    a.value(big_x - d),
                    a.value(big_x + d),
                    a.value(big_x + 2.0 * d),
                );
                let first = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * d);
                let second = (-m2 + 16.0 * m1 - 30.0 * v + 16.0 * p1 - p2) / (12.0 * d * d);
                (v, first, second)
            }
        }
    }

    /// `(g, b)` at the point with original coordinate `x`.
    fn g_b_at_x(&self, x: f64) -> (f64, f64) {
        let eps = self.epsilon;
        let (a, da, dda) = self.derivatives_at(x / eps);
        let g = da / (2.0 * eps * a.sqrt());
        let b = (dda / 4.0 - da * da / (16.0 * a)) / (eps * eps);
        (g, b)
    }

    /// Inverts a strictly increasing map tabulated in `table` at `self.x`,
    /// bracketing by bisection on the table and finishing with safeguarded
    /// Newton steps on the exact map.
    fn invert<F, D>(&self, table: &[f64], target: f64, map: F, slope: D) -> f64
    where
        F: Fn(f64) -> f64,
        D: Fn(f64) -> f64,
    {
        let last = table.len() - 1;
        if target <= table[0] {
            return self.x[0];
        }
        if target >= table[last] {
            return self.x[last];
        }
        let hi_idx = table.partition_point(|v| *v < target).clamp(1, last);
        let (mut lo, mut hi) = (self.x[hi_idx - 1], self.x[hi_idx]);
        let (t0, t1) = (table[hi_idx - 1], table[hi_idx]);
        let mut x = lo + (hi - lo) * (target - t0) / (t1 - t0);
        for _ in 0..64 {
            let f = map(x) - target;
            if f == 0.0 {
                return x;
            }
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let step = f / slope(x);
            if step.abs() <= 1e-16 {
                return x - step;
            }
            let mut next = x - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if hi - lo <= 1e-16 {
                return next;
            }
            x = next;
        }
        x
    }

    /// `x` with `z(x) = z`.
    pub fn x_of_z(&self, z: f64) -> f64 {
        let eps = self.epsilon;
        self.invert(
            &self.z,
            z,
            |x| self.z_of_x(x),
            |x| self.delta / (eps * self.coefficient.value(x / eps)),
        )
    }

    /// `x` with `H(z(x)) = y`.
    pub fn x_of_y(&self, y: f64) -> f64 {
        let eps = self.epsilon;
        self.invert(
            &self.y,
            y,
            |x| self.y_of_x(x),
            |x| 1.0 / self.coefficient.value(x / eps).sqrt(),
        )
    }

    /// `y = H(z)`.
    pub fn h_of_z(&self, z: f64) -> f64 {
        self.y_of_x(self.x_of_z(z))
    }

    /// `z = H⁻¹(y)`.
    pub fn z_of_y(&self, y: f64) -> f64 {
        self.z_of_x(self.x_of_y(y))
    }

    /// `r(z) = ã(z/ε)`.
    pub fn r_of_z(&self, z: f64) -> f64 {
        self.r_at_x(self.x_of_z(z))
    }

    /// `g(y) = r'(H⁻¹(y)) / (2 r(H⁻¹(y))^{3/2})`.
    pub fn g_of_y(&self, y: f64) -> f64 {
        self.g_b_at_x(self.x_of_y(y)).0
    }

    /// Potential of the Schrödinger form, `b = (g/2)' + (g/2)²`.
    pub fn b_of_y(&self, y: f64) -> f64 {
        self.g_b_at_x(self.x_of_y(y)).1
    }

    /// `exp(∫₀^y g/2)`, the factor `v = exp(∫g/2) w̃` that removes the
    /// first-order term; it equals `(r(z)/r(0))^{1/4}`.
    pub fn integrating_factor(&self, y: f64) -> f64 {
        let x = self.x_of_y(y);
        (self.coefficient.value(x / self.epsilon) / self.coefficient.value(0.0)).powf(0.25)
    }

    pub fn quadrature_order(&self) -> usize {
        self.rule.order()
    }
}
