//! Exponents and weights of the cascade Carleman argument.
//!
//! The weight is `(sθ)^d e^{2sθψ}` with `θ(t) = 1/(t(T−t))` and
//! `ψ(y) = −offset − κ(y − y_ω)²`, `y_ω` the midpoint of ω. Any `ψ` with
//! `sup ψ < 0` and `|ψ′| > 0` off ω would do; this one is concave with its
//! only critical point inside ω.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Interval;

/// `d_k = 1 + 3(n+1−k)` and the local-term exponents `ρ_k`, both indexed
/// `k = 1..=n`.
pub fn carleman_exponents(n: usize) -> Result<(Vec<i64>, Vec<i64>)> {
    if n == 0 {
        return Err(Error::InvalidParameter("carleman_exponents needs n >= 1".into()));
    }
    let n_i = n as i64;
    let d: Vec<i64> = (1..=n_i).map(|k| 1 + 3 * (n_i + 1 - k)).collect();
    let mut rho = vec![0i64; n];
    rho[n - 1] = d[n - 1];
    if n >= 2 {
        rho[n - 2] = 8;
        // ρ_{k−1} = 2ρ_k − d_k + 4 for k = n−1, …, 2.
        for k in (2..n).rev() {
            rho[k - 2] = 2 * rho[k - 1] - d[k - 1] + 4;
        }
    }
    Ok((d, rho))
}

/// `θ(t) = 1/(t(T−t))`.
pub fn theta(t: f64, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("T = {horizon} must be > 0")));
    }
    if !(t > 0.0 && t < horizon) {
        return Err(Error::SingularWeight(t));
    }
    Ok(1.0 / (t * (horizon - t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiParams {
    pub offset: f64,
    pub kappa: f64,
    pub center: f64,
    /// Right end `L` of the spatial interval.
    pub length: f64,
}

impl PsiParams {
    /// Centered at the midpoint of `omega ⊂ (0, length)`.
    pub fn for_omega(omega: &Interval, length: f64, offset: f64, kappa: f64) -> Result<Self> {
        if !(offset > 0.0 && kappa > 0.0 && length > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "psi needs offset, kappa, length > 0 (got {offset}, {kappa}, {length})"
            )));
        }
        Ok(Self {
            offset,
            kappa,
            center: 0.5 * (omega.left + omega.right) * length,
            length,
        })
    }

    pub fn value(&self, y: f64) -> f64 {
        -self.offset - self.kappa * (y - self.center).powi(2)
    }

    pub fn derivative(&self, y: f64) -> f64 {
        -2.0 * self.kappa * (y - self.center)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PsiReport {
    pub sup: f64,
    /// Smallest `|ψ′|` outside ω.
    pub min_slope_off_omega: f64,
    pub valid: bool,
}

/// Dense-sample check of `sup ψ < 0` and `inf_{(0,L)∖ω} |ψ′| > 0`.
pub fn validate_psi(psi: &PsiParams, omega: &Interval, samples: usize) -> PsiReport {
    let samples = samples.max(2);
    let mut sup = f64::NEG_INFINITY;
    let mut slope = f64::INFINITY;
    for i in 0..samples {
        let y = psi.length * (i as f64 + 0.5) / samples as f64;
        sup = sup.max(psi.value(y));
        let x = y / psi.length;
        if x <= omega.left || x >= omega.right {
            slope = slope.min(psi.derivative(y).abs());
        }
    }
    PsiReport {
        sup,
        min_slope_off_omega: slope,
        valid: sup < 0.0 && slope > 0.0,
    }
}

/// `(sθ(t))^d e^{2sθ(t)ψ(y)}`.
pub fn carleman_weight(t: f64, y: f64, s: f64, horizon: f64, d: f64, psi: &PsiParams) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!("s = {s} must be > 0")));
    }
    let th = theta(t, horizon)?;
    let st = s * th;
    // Combine in log space; both factors overflow separately near t = 0.
    Ok((d * st.ln() + 2.0 * st * psi.value(y)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponents() {
        assert_eq!(carleman_exponents(1).unwrap(), (vec![4], vec![4]));
        assert_eq!(carleman_exponents(2).unwrap(), (vec![7, 4], vec![8, 4]));
        assert_eq!(carleman_exponents(3).unwrap(), (vec![10, 7, 4], vec![13, 8, 4]));
        let (d, rho) = carleman_exponents(4).unwrap();
        assert_eq!(d, vec![13, 10, 7, 4]);
        assert_eq!(rho, vec![2 * 13 - 10 + 4, 13, 8, 4]);
        assert!(carleman_exponents(0).is_err());
    }

    #[test]
    fn theta_midpoint_and_endpoints() {
        assert!((theta(0.5, 1.0).unwrap() - 4.0).abs() < 1e-15);
        assert!((theta(1.0, 2.0).unwrap() - 4.0 / 4.0).abs() < 1e-15);
        assert!(matches!(theta(0.0, 1.0), Err(Error::SingularWeight(_))));
        assert!(matches!(theta(1.0, 1.0), Err(Error::SingularWeight(_))));
    }

    #[test]
    fn weight_vanishes_near_origin() {
        let omega = Interval::new(0.3, 0.8).unwrap();
        let psi = PsiParams::for_omega(&omega, 1.0, 1.0, 2.0).unwrap();
        let mut last = f64::INFINITY;
        for i in 0..30 {
            let t = 0.1 * 0.7f64.powi(i);
            let w = carleman_weight(t, 0.1, 1.0, 1.0, 4.0, &psi).unwrap();
            assert!(w <= last);
            last = w;
        }
        assert!(last < 1e-100);
    }

    #[test]
    fn psi_is_admissible() {
        let omega = Interval::new(0.3, 0.8).unwrap();
        let psi = PsiParams::for_omega(&omega, 4.0, 1.0, 0.5).unwrap();
        let report = validate_psi(&psi, &omega, 10_000);
        assert!(report.valid);
        assert!(report.sup <= -1.0 && report.sup > -1.001);
    }
}
