//! Gauss–Legendre rules and composite integration on intervals.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the `order`-point rule by Newton iteration on the Legendre
    /// three-term recurrence. `order` is clamped to at least 1.
    pub fn new(order: usize) -> Self {
        let n = order.max(1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let half = n.div_ceil(2);
        for i in 0..half {
            // Tricomi initial guess for the i-th root (descending order).
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrates `f` over `[a, b]` with a single panel.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(mid + half * t))
            .sum::<f64>()
            * half
    }

    /// Integrates `f` over `[a, b]` split into `panels` equal panels.
    pub fn integrate_composite<F: Fn(f64) -> f64>(
        &self,
        f: F,
        a: f64,
        b: f64,
        panels: usize,
    ) -> f64 {
        let panels = panels.max(1);
        let width = (b - a) / panels as f64;
        (0..panels)
            .map(|p| {
                let lo = a + width * p as f64;
                self.integrate(&f, lo, lo + width)
            })
            .sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two() {
        for order in [1, 2, 5, 16, 33] {
            let rule = GaussLegendre::new(order);
            let s: f64 = rule.weights().iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "order {order}: {s}");
        }
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        let rule = GaussLegendre::new(6);
        // ∫_0^2 x^11 dx = 2^12 / 12
        let v = rule.integrate(|x| x.powi(11), 0.0, 2.0);
        assert!((v - 4096.0 / 12.0).abs() < 1e-10);
    }

    #[test]
    fn composite_smooth_periodic() {
        let rule = GaussLegendre::new(10);
        let v = rule.integrate_composite(|x| (2.0 * PI * x).sin().powi(2), 0.0, 1.0, 4);
        assert!((v - 0.5).abs() < 1e-14);
    }
}
