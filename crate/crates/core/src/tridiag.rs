//! Symmetric tridiagonal matrices: products, Thomas factorizations, and a
//! selective eigensolver (Sturm-sequence bisection plus inverse iteration).

use crate::error::{Error, Result};

/// Symmetric tridiagonal matrix stored as its diagonal and first
/// off-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if diag.is_empty() || off.len() + 1 != diag.len() {
            return Err(Error::DimensionMismatch(format!(
                "tridiagonal with {} diagonal and {} off-diagonal entries",
                diag.len(),
                off.len()
            )));
        }
        Ok(Self { diag, off })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `y = self * x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.diag.len();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(y.len(), n);
        if n == 1 {
            y[0] = self.diag[0] * x[0];
            return;
        }
        y[0] = self.diag[0] * x[0] + self.off[0] * x[1];
        for j in 1..n - 1 {
            y[j] = self.off[j - 1] * x[j - 1] + self.diag[j] * x[j] + self.off[j] * x[j + 1];
        }
        y[n - 1] = self.off[n - 2] * x[n - 2] + self.diag[n - 1] * x[n - 1];
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            diag: self.diag.iter().map(|d| d * factor).collect(),
            off: self.off.iter().map(|e| e * factor).collect(),
        }
    }

    /// `alpha * I + beta * self`.
    pub fn affine(&self, alpha: f64, beta: f64) -> Self {
        Self {
            diag: self.diag.iter().map(|d| alpha + beta * d).collect(),
            off: self.off.iter().map(|e| beta * e).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.diag
            .iter()
            .chain(&self.off)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for j in 0..n {
            let mut r = 0.0;
            if j > 0 {
                r += self.off[j - 1].abs();
            }
            if j + 1 < n {
                r += self.off[j].abs();
            }
            lo = lo.min(self.diag[j] - r);
            hi = hi.max(self.diag[j] + r);
        }
        (lo, hi)
    }

    /// Number of eigenvalues strictly below `x` (Sturm count from the
    /// pivots of the `LDLᵀ` factorization of `self - x I`).
    pub fn count_below(&self, x: f64) -> usize {
        let pivmin = f64::MIN_POSITIVE.max(1e-300) * (1.0 + self.max_abs());
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
        for j in 1..self.len() {
            let e = self.off[j - 1];
            q = self.diag[j] - x - e * e / q;
            if q.abs() < pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `index`-th smallest eigenvalue (0-based) by bisection.
    pub fn eigenvalue(&self, index: usize) -> Result<f64> {
        if index >= self.len() {
            return Err(Error::InvalidParameter(format!(
                "eigenvalue index {index} out of range for order {}",
                self.len()
            )));
        }
        let (mut lo, mut hi) = self.gershgorin();
        let pad = f64::EPSILON * (lo.abs().max(hi.abs()) + 1.0);
        lo -= pad;
        hi += pad;
        self.bisect(index, lo, hi)
    }

    fn bisect(&self, index: usize, mut lo: f64, mut hi: f64) -> Result<f64> {
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
                break;
            }
            if self.count_below(mid) > index {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let value = 0.5 * (lo + hi);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Numerical("bisection produced a non-finite eigenvalue".into()))
        }
    }

    /// The `count` smallest eigenpairs, eigenvalues ascending. Eigenvectors
    /// have unit Euclidean norm; callers rescale to their own inner product.
    pub fn lowest_eigenpairs(&self, count: usize) -> Result<Vec<(f64, Vec<f64>)>> {
        let n = self.len();
        if count > n {
            return Err(Error::InvalidParameter(format!(
                "requested {count} eigenpairs of an order-{n} matrix"
            )));
        }
        let (glo, ghi) = self.gershgorin();
        let pad = f64::EPSILON * (glo.abs().max(ghi.abs()) + 1.0);
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut pairs: Vec<(f64, Vec<f64>)> = Vec::with_capacity(count);
        let mut lower = glo - pad;
        for index in 0..count {
            let lambda = self.bisect(index, lower, ghi + pad)?;
            lower = lambda - pad;
            let mut v = self.inverse_iteration(lambda, index)?;
            // Reorthogonalize against numerically clustered predecessors.
            for (mu, w) in pairs.iter().rev() {
                if (lambda - mu).abs() > 1e-7 * scale {
                    break;
                }
                let proj: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(w).for_each(|(a, b)| *a -= proj * b);
                normalize(&mut v);
            }
            let rq = self.rayleigh_quotient(&v);
            pairs.push((rq, v));
        }
        Ok(pairs)
    }

    fn rayleigh_quotient(&self, v: &[f64]) -> f64 {
        let mut tv = vec![0.0; v.len()];
        self.apply(v, &mut tv);
        let num: f64 = v.iter().zip(&tv).map(|(a, b)| a * b).sum();
        let den: f64 = v.iter().map(|a| a * a).sum();
        num / den
    }

    fn inverse_iteration(&self, lambda: f64, seed: usize) -> Result<Vec<f64>> {
        let n = self.len();
        // Deterministic start vector with components in every mode.
        let mut v: Vec<f64> = (0..n)
            .map(|j| 1.0 + 0.5 * (((j * 7919 + seed * 104729) % 1009) as f64 / 1009.0))
            .collect();
        normalize(&mut v);
        let shifted_diag: Vec<f64> = self.diag.iter().map(|d| d - lambda).collect();
        for _ in 0..3 {
            v = solve_general_tridiagonal(&self.off, &shifted_diag, &self.off, &v)?;
            if !normalize(&mut v) {
                return Err(Error::Numerical(
                    "inverse iteration collapsed to zero".into(),
                ));
            }
        }
        Ok(v)
    }
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|a| *a /= norm);
    true
}

/// Solves a general tridiagonal system by Gaussian elimination with partial
/// pivoting. `sub[j]` couples row `j+1` to column `j`, `sup[j]` couples row
/// `j` to column `j+1`. Exactly singular pivots are perturbed to a tiny
/// multiple of the matrix scale, which is what inverse iteration needs.
pub fn solve_general_tridiagonal(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    if rhs.len() != n || sub.len() + 1 != n || sup.len() + 1 != n {
        return Err(Error::DimensionMismatch(
            "tridiagonal solve operand lengths".into(),
        ));
    }
    let scale = diag
        .iter()
        .chain(sub)
        .chain(sup)
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let tiny = f64::EPSILON * scale;
    // Row j of the upper factor: (u0, u1, u2) on columns j, j+1, j+2.
    let mut u0 = diag.to_vec();
    let mut u1: Vec<f64> = sup.to_vec();
    u1.push(0.0);
    let mut u2 = vec![0.0; n];
    let mut b = rhs.to_vec();
    let mut lower: Vec<f64> = sub.to_vec();
    for j in 0..n.saturating_sub(1) {
        if lower[j].abs() > u0[j].abs() {
            // Swap rows j and j+1.
            let next_diag = u0[j + 1];
            let next_sup = if j + 1 < n - 1 { u1[j + 1] } else { 0.0 };
            let (a0, a1, a2) = (u0[j], u1[j], u2[j]);
            u0[j] = lower[j];
            u1[j] = next_diag;
            u2[j] = next_sup;
            b.swap(j, j + 1);
            let m = a0 / u0[j];
            u0[j + 1] = a1 - m * u1[j];
            if j + 1 < n - 1 {
                u1[j + 1] = a2 - m * u2[j];
            }
            b[j + 1] -= m * b[j];
        } else {
            if u0[j] == 0.0 {
                u0[j] = tiny;
            }
            let m = lower[j] / u0[j];
            u0[j + 1] -= m * u1[j];
            b[j + 1] -= m * b[j];
        }
        lower[j] = 0.0;
    }
    if u0[n - 1] == 0.0 {
        u0[n - 1] = tiny;
    }
    let mut x = vec![0.0; n];
    for j in (0..n).rev() {
        let mut s = b[j];
        if j + 1 < n {
            s -= u1[j] * x[j + 1];
        }
        if j + 2 < n {
            s -= u2[j] * x[j + 2];
        }
        x[j] = s / u0[j];
    }
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Numerical("tridiagonal solve overflowed".into()))
    }
}

/// Precomputed Thomas factorization of a symmetric tridiagonal matrix that
/// is safe to eliminate without pivoting (diagonally dominant or SPD).
#[derive(Debug, Clone)]
pub struct ThomasFactor {
    off: Vec<f64>,
    inv_pivot: Vec<f64>,
    multiplier: Vec<f64>,
}

impl ThomasFactor {
    pub fn new(matrix: &SymTridiagonal) -> Result<Self> {
        let n = matrix.len();
        let mut inv_pivot = vec![0.0; n];
        let mut multiplier = vec![0.0; n.saturating_sub(1)];
        let mut pivot = matrix.diag[0];
        for j in 0..n {
            if j > 0 {
                let e = matrix.off[j - 1];
                multiplier[j - 1] = e * inv_pivot[j - 1];
                pivot = matrix.diag[j] - multiplier[j - 1] * e;
            }
            if !(pivot.is_finite() && pivot.abs() > f64::MIN_POSITIVE) {
                return Err(Error::Numerical(format!(
                    "zero pivot at row {j} in tridiagonal factorization"
                )));
            }
            inv_pivot[j] = 1.0 / pivot;
        }
        Ok(Self {
            off: matrix.off.clone(),
            inv_pivot,
            multiplier,
        })
    }

    /// Solves in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.inv_pivot.len();
        for j in 1..n {
            b[j] -= self.multiplier[j - 1] * b[j - 1];
        }
        b[n - 1] *= self.inv_pivot[n - 1];
        for j in (0..n - 1).rev() {
            b[j] = (b[j] - self.off[j] * b[j + 1]) * self.inv_pivot[j];
        }
    }
}
