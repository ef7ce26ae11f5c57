//! Uniform interior grids on (0, 1), discrete L² products and multi-component
//! grid states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Open subinterval `(left, right)` of `(0, 1)`; the control/observation set ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub left: f64,
    pub right: f64,
}

impl Interval {
    pub fn new(left: f64, right: f64) -> Result<Self> {
        if !(left.is_finite() && right.is_finite()) || left < 0.0 || right > 1.0 || left >= right {
            return Err(Error::InvalidParameter(format!(
                "omega = ({left}, {right}) must satisfy 0 <= left < right <= 1"
            )));
        }
        Ok(Self { left, right })
    }

    pub fn full() -> Self {
        Self {
            left: 0.0,
            right: 1.0,
        }
    }

    pub fn contains_strictly(&self, x: f64) -> bool {
        x > self.left + 1e-12 && x < self.right - 1e-12
    }

    pub fn length(&self) -> f64 {
        self.right - self.left
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.left + self.right)
    }
}

/// `N` interior nodes `x_j = j h`, `j = 1..=N`, `h = 1/(N+1)`; Dirichlet
/// values at `x = 0, 1` are eliminated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: usize,
}

impl Grid {
    pub fn new(points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 2 interior points, got {points}"
            )));
        }
        Ok(Self { points })
    }

    /// Number of interior points `N`.
    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points == 0
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.points as f64 + 1.0)
    }

    /// Coordinate of interior node `j` (0-based).
    pub fn x(&self, j: usize) -> f64 {
        (j as f64 + 1.0) * self.h()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.x(j)).collect()
    }

    /// Requires `h <= ε / 20` so that every period cell holds at least 20
    /// cells.
    pub fn check_resolution(&self, epsilon: f64) -> Result<()> {
        let needed = 20.0 / epsilon;
        if (self.points as f64 + 1.0) < needed * (1.0 - 1e-12) {
            return Err(Error::Resolution(format!(
                "N = {} interior points do not resolve ε = {epsilon}: need N + 1 >= {:.1}",
                self.points, needed
            )));
        }
        Ok(())
    }

    /// Discrete L²(0,1) product (trapezoid rule with zero boundary values).
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.h() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.dot(a, a).sqrt()
    }

    /// Indices of nodes strictly inside ω (boundary-coincident nodes within
    /// 1e-12 are excluded).
    pub fn mask(&self, omega: &Interval) -> Vec<usize> {
        (0..self.points)
            .filter(|&j| omega.contains_strictly(self.x(j)))
            .collect()
    }

    /// Discrete L²(ω) product restricted to the mask nodes.
    pub fn dot_on(&self, mask: &[usize], a: &[f64], b: &[f64]) -> f64 {
        self.h() * mask.iter().map(|&j| a[j] * b[j]).sum::<f64>()
    }

    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.points).map(|j| f(self.x(j))).collect()
    }
}

/// An `n`-component grid function, stored component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    components: usize,
    points: usize,
    data: Vec<f64>,
}

impl State {
    pub fn zeros(components: usize, points: usize) -> Self {
        Self {
            components,
            points,
            data: vec![0.0; components * points],
        }
    }

    pub fn from_components(parts: Vec<Vec<f64>>) -> Result<Self> {
        let components = parts.len();
        if components == 0 {
            return Err(Error::DimensionMismatch("state with no components".into()));
        }
        let points = parts[0].len();
        if parts.iter().any(|p| p.len() != points) {
            return Err(Error::DimensionMismatch(
                "state components have different lengths".into(),
            ));
        }
        Ok(Self {
            components,
            points,
            data: parts.concat(),
        })
    }

    /// `c ⊗ φ`: component `i` is `c[i] * φ`.
    pub fn tensor(c: &[f64], phi: &[f64]) -> Self {
        let mut s = Self::zeros(c.len(), phi.len());
        for (i, ci) in c.iter().enumerate() {
            s.component_mut(i)
                .iter_mut()
                .zip(phi)
                .for_each(|(v, p)| *v = ci * p);
        }
        s
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.data[i * self.points..(i + 1) * self.points]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.points..(i + 1) * self.points]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &State) -> bool {
        self.components == other.components && self.points == other.points
    }

    pub fn dot(&self, grid: &Grid, other: &State) -> f64 {
        grid.dot(&self.data, &other.data)
    }

    pub fn norm(&self, grid: &Grid) -> f64 {
        grid.norm(&self.data)
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &State) {
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += factor * b);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
