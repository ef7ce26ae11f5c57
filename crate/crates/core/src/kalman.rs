//! Kalman rank tests and reduction of `(A, B)` to cascade canonical form.
//!
//! With `y = P u` the system `∂t y − 𝓛y + A y = B 1_ω f` becomes
//! `∂t u − 𝓛u + C u = D 1_ω f` where `A P = P C` and `P D` selects the
//! columns of `B` that seed the Krylov chains.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One Krylov chain `{b, Ab, …, A^{size−1} b}` seeded by column `column` of
/// `B`. `start` is the 0-based row/column where the chain begins in `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Block {
    pub column: usize,
    pub size: usize,
    pub start: usize,
}

#[derive(Debug, Clone)]
pub struct CanonicalForm {
    pub p: DMatrix<f64>,
    pub p_inv: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// `n × r` matrix of standard basis columns `e_{S_i}`.
    pub d: DMatrix<f64>,
    pub blocks: Vec<Block>,
    /// 1-norm condition number estimate of `P`.
    pub condition: f64,
}

impl CanonicalForm {
    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    /// `max |AP − PC|`.
    pub fn similarity_residual(&self, a: &DMatrix<f64>) -> f64 {
        (a * &self.p - &self.p * &self.c).amax()
    }

    /// Canonical coordinates `u = P⁻¹ y`.
    pub fn to_canonical(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.p_inv * y
    }

    /// Original coordinates `y = P u`.
    pub fn to_original(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.p * u
    }
}

fn check_square(a: &DMatrix<f64>) -> Result<usize> {
    if a.nrows() == 0 || a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "A must be square and non-empty, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.nrows())
}

fn check_pair(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<usize> {
    let n = check_square(a)?;
    if b.nrows() != n || b.ncols() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "B must be {n}xm with m >= 1, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(n)
}

/// `(B | AB | … | A^{n−1}B)`.
pub fn kalman_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = check_pair(a, b)?;
    let m = b.ncols();
    let mut k = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        k.view_mut((0, i * m), (n, m)).copy_from(&block);
        if i + 1 < n {
            block = a * &block;
        }
    }
    Ok(k)
}

/// Default numerical-rank tolerance `n · ε_mach · max column norm`.
pub fn default_rank_tolerance(k: &DMatrix<f64>) -> f64 {
    let largest = k
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0_f64, f64::max);
    k.nrows().max(k.ncols()) as f64 * f64::EPSILON * largest
}

/// Numerical rank from the diagonal of a column-pivoted QR factorization.
pub fn numerical_rank(k: &DMatrix<f64>, tol: Option<f64>) -> usize {
    if k.is_empty() {
        return 0;
    }
    let tol = tol.unwrap_or_else(|| default_rank_tolerance(k));
    let r = k.clone().col_piv_qr().r();
    (0..r.nrows().min(r.ncols()))
        .filter(|&i| r[(i, i)].abs() > tol)
        .count()
}

/// Rank of the Kalman matrix; the pair is controllable iff it equals `n`.
pub fn kalman_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: Option<f64>) -> Result<usize> {
    if let Some(t) = tol {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!("rank tolerance {t} must be > 0")));
        }
    }
    Ok(numerical_rank(&kalman_matrix(a, b)?, tol))
}

/// `(a_1, …, a_n)` with `Aⁿ = a_1 I + a_2 A + … + a_n A^{n−1}`, by the
/// Faddeev–LeVerrier recurrence.
pub fn char_poly_coeffs(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = check_square(a)?;
    // c[i] multiplies λ^i in the monic characteristic polynomial.
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let identity = DMatrix::<f64>::identity(n, n);
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m + &identity * c[n + 1 - k];
        let am = a * &m;
        c[n - k] = -am.trace() / k as f64;
    }
    Ok((0..n).map(|i| -c[i]).collect())
}

/// Companion matrix with unit subdiagonal and last column `coeffs`.
pub fn companion_matrix(coeffs: &[f64]) -> DMatrix<f64> {
    let n = coeffs.len();
    let mut c = DMatrix::zeros(n, n);
    for i in 1..n {
        c[(i, i - 1)] = 1.0;
    }
    for (i, v) in coeffs.iter().enumerate() {
        c[(i, n - 1)] = *v;
    }
    c
}

fn invert_with_condition(p: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let p_inv = p
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("transformation matrix P is singular".into()))?;
    let norm1 = |m: &DMatrix<f64>| {
        m.column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0_f64, f64::max)
    };
    let condition = norm1(p) * norm1(&p_inv);
    if condition > 1e10 {
        log::warn!("transformation matrix P is ill-conditioned (cond_1 ≈ {condition:.3e})");
    }
    Ok((p_inv, condition))
}

/// Single-input reduction: `P = (b | Ab | … | A^{n−1}b)`, `C` companion.
pub fn companion_reduction(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<CanonicalForm> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let n = check_pair(a, &bm)?;
    let p = kalman_matrix(a, &bm)?;
    let rank = numerical_rank(&p, None);
    if rank < n {
        return Err(Error::NotControllable { rank, n });
    }
    let c = companion_matrix(&char_poly_coeffs(a)?);
    let (p_inv, condition) = invert_with_condition(&p)?;
    let mut d = DMatrix::zeros(n, 1);
    d[(0, 0)] = 1.0;
    Ok(CanonicalForm {
        p,
        p_inv,
        c,
        d,
        blocks: vec![Block {
            column: 0,
            size: n,
            start: 0,
        }],
        condition,
    })
}

/// Multi-input reduction: scans the columns of `B` left to right and extends
/// each Krylov chain until the next power is dependent on the basis so far.
pub fn block_cascade_reduction(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<CanonicalForm> {
    let n = check_pair(a, b)?;
    let kalman = kalman_matrix(a, b)?;
    let tol = default_rank_tolerance(&kalman);
    let rank = numerical_rank(&kalman, Some(tol));
    if rank < n {
        return Err(Error::NotControllable { rank, n });
    }
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut blocks = Vec::new();
    for l in 0..b.ncols() {
        if basis.len() == n {
            break;
        }
        let mut v: DVector<f64> = b.column(l).into_owned();
        let start = basis.len();
        while basis.len() < n && extends_basis(&basis, &v, tol) {
            basis.push(v.clone());
            v = a * &v;
        }
        if basis.len() > start {
            blocks.push(Block {
                column: l,
                size: basis.len() - start,
                start,
            });
        }
    }
    if blocks.len() == 1 {
        let mut form = companion_reduction(a, &b.column(blocks[0].column).into_owned())?;
        form.blocks[0].column = blocks[0].column;
        return Ok(form);
    }
    let p = DMatrix::from_columns(&basis);
    let (p_inv, condition) = invert_with_condition(&p)?;
    let mut c = DMatrix::zeros(n, n);
    for block in &blocks {
        for i in 1..block.size {
            c[(block.start + i, block.start + i - 1)] = 1.0;
        }
        // Coordinates of A^{s_j} b^{l_j}; only blocks up to this one may be
        // non-zero because the chain stopped on a dependence.
        let last = block.start + block.size - 1;
        let image = a * p.column(last);
        let coords = &p_inv * image;
        let end = block.start + block.size;
        for row in 0..end {
            c[(row, last)] = coords[row];
        }
        let leak = coords.rows(end, n - end).amax();
        if leak > 1e-8 * (1.0 + coords.amax()) {
            return Err(Error::Numerical(format!(
                "cascade structure violated below block starting at {} (entry {leak:.3e})",
                block.start
            )));
        }
    }
    let mut d = DMatrix::zeros(n, blocks.len());
    for (j, block) in blocks.iter().enumerate() {
        d[(block.start, j)] = 1.0;
    }
    Ok(CanonicalForm {
        p,
        p_inv,
        c,
        d,
        blocks,
        condition,
    })
}

fn extends_basis(basis: &[DVector<f64>], v: &DVector<f64>, tol: f64) -> bool {
    if v.amax() == 0.0 {
        return false;
    }
    let mut columns = basis.to_vec();
    columns.push(v.clone());
    let m = DMatrix::from_columns(&columns);
    numerical_rank(&m, Some(tol.max(default_rank_tolerance(&m)))) == columns.len()
}

/// Outcome of the spectral hypothesis check on `A`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct H2Report {
    /// Eigenvalues of `A`, ascending.
    pub eigenvalues: Vec<f64>,
    pub min_eigenvalue: f64,
    /// `−π² / a_M`.
    pub lower_bound: f64,
    pub min_gap: f64,
    pub above_lower_bound: bool,
}

impl H2Report {
    pub fn passed(&self) -> bool {
        self.above_lower_bound
    }

    pub fn ensure(&self) -> Result<()> {
        if self.above_lower_bound {
            Ok(())
        } else {
            Err(Error::HypothesisViolation(format!(
                "min Spec(A) = {} is not above −π²/a_M = {}",
                self.min_eigenvalue, self.lower_bound
            )))
        }
    }
}

/// Checks that `A` has real, pairwise distinct eigenvalues; the bound
/// `min Spec(A) > −π²/a_M` is reported in the returned value.
pub fn validate_h2(a: &DMatrix<f64>, a_max: f64) -> Result<H2Report> {
    let n = check_square(a)?;
    if !(a_max > 0.0) {
        return Err(Error::InvalidParameter(format!("a_M = {a_max} must be > 0")));
    }
    let eigenvalues = real_spectrum(a)?;
    let radius = eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min_gap = eigenvalues
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if n > 1 && !(min_gap > 1e-8 * radius.max(f64::MIN_POSITIVE)) {
        return Err(Error::HypothesisViolation(format!(
            "A has a repeated eigenvalue (closest pair {min_gap:.3e} apart)"
        )));
    }
    let lower_bound = -std::f64::consts::PI.powi(2) / a_max;
    let min_eigenvalue = eigenvalues[0];
    Ok(H2Report {
        eigenvalues,
        min_eigenvalue,
        lower_bound,
        min_gap,
        above_lower_bound: min_eigenvalue > lower_bound,
    })
}

/// Ascending real eigenvalues; complex spectra are rejected.
pub fn real_spectrum(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_square(a)?;
    let values = a.clone().complex_eigenvalues();
    let radius = values.iter().fold(0.0_f64, |m, v| m.max(v.norm()));
    if let Some(v) = values
        .iter()
        .find(|v| v.im.abs() > 1e-10 * radius.max(f64::MIN_POSITIVE))
    {
        return Err(Error::HypothesisViolation(format!(
            "A has a complex eigenvalue {} {:+}i",
            v.re, v.im
        )));
    }
    let mut real: Vec<f64> = values.iter().map(|v| v.re).collect();
    real.sort_by(f64::total_cmp);
    Ok(real)
}

/// Unit vector spanning the numerical kernel of `m − σ I`.
pub fn null_vector(m: &DMatrix<f64>, sigma: f64) -> Result<DVector<f64>> {
    let n = check_square(m)?;
    let shifted = m - DMatrix::<f64>::identity(n, n) * sigma;
    let svd = shifted.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Numerical("empty SVD".into()))?;
    let mut v: DVector<f64> = v_t.row(idx).transpose();
    let pivot = v.iter().fold(0.0, |best: f64, x| if x.abs() > best.abs() { *x } else { best });
    if pivot < 0.0 {
        v = -v;
    }
    let norm = v.norm();
    Ok(v / norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn kalman_matrix_examples() {
        let e1 = mat(2, 1, &[1.0, 0.0]);
        assert_eq!(
            kalman_matrix(&DMatrix::identity(2, 2), &e1).unwrap(),
            mat(2, 2, &[1.0, 1.0, 0.0, 0.0])
        );
        assert_eq!(
            kalman_matrix(&mat(2, 2, &[0.0, 2.0, 1.0, 5.0]), &e1).unwrap(),
            DMatrix::identity(2, 2)
        );
        assert_eq!(
            kalman_matrix(&mat(2, 2, &[1.0, 2.0, 3.0, 4.0]), &e1).unwrap(),
            mat(2, 2, &[1.0, 1.0, 0.0, 3.0])
        );
        assert!(kalman_matrix(&DMatrix::identity(2, 2), &mat(3, 1, &[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn kalman_rank_examples() {
        let e1 = mat(2, 1, &[1.0, 0.0]);
        assert_eq!(kalman_rank(&DMatrix::identity(2, 2), &e1, None).unwrap(), 1);
        assert_eq!(kalman_rank(&mat(2, 2, &[0.0, 2.0, 1.0, 5.0]), &e1, None).unwrap(), 2);
        assert!(kalman_rank(&DMatrix::identity(2, 2), &e1, Some(0.0)).is_err());
    }

    #[test]
    fn char_poly_examples() {
        assert_eq!(char_poly_coeffs(&mat(1, 1, &[2.0])).unwrap(), vec![2.0]);
        assert_eq!(
            char_poly_coeffs(&mat(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap(),
            vec![2.0, 5.0]
        );
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(char_poly_coeffs(&d).unwrap(), vec![6.0, -11.0, 6.0]);
    }

    #[test]
    fn companion_examples() {
        let f = companion_reduction(&mat(1, 1, &[2.0]), &DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(f.p, mat(1, 1, &[1.0]));
        assert_eq!(f.c, mat(1, 1, &[2.0]));

        let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let f = companion_reduction(&a, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(f.p, mat(2, 2, &[1.0, 1.0, 0.0, 3.0]));
        assert_eq!(f.c, mat(2, 2, &[0.0, 2.0, 1.0, 5.0]));
        assert_eq!(&a * &f.p, mat(2, 2, &[1.0, 7.0, 3.0, 15.0]));
        assert_eq!(&f.p * &f.c, mat(2, 2, &[1.0, 7.0, 3.0, 15.0]));

        let a = mat(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let f = companion_reduction(&a, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(f.p, mat(2, 2, &[1.0, 1.0, 1.0, 2.0]));
        assert_eq!(f.c, mat(2, 2, &[0.0, -2.0, 1.0, 3.0]));
        let e1 = &f.p_inv * DVector::from_vec(vec![1.0, 1.0]);
        assert!((e1[0] - 1.0).abs() < 1e-14 && e1[1].abs() < 1e-14);
    }

    #[test]
    fn companion_rejects_uncontrollable_pair() {
        let err = companion_reduction(&DMatrix::identity(2, 2), &DVector::from_vec(vec![1.0, 0.0]))
            .unwrap_err();
        assert!(matches!(err, Error::NotControllable { rank: 1, n: 2 }));
        assert!(err.to_string().contains("kalman rank deficient"));
    }

    #[test]
    fn block_examples() {
        let a = mat(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let f = block_cascade_reduction(&a, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(f.blocks.len(), 2);
        assert_eq!(f.blocks.iter().map(|b| b.size).collect::<Vec<_>>(), vec![1, 1]);
        assert_eq!(f.blocks.iter().map(|b| b.start + 1).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(f.d, DMatrix::identity(2, 2));
        assert_eq!(f.c, a);

        let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = mat(2, 1, &[1.0, 0.0]);
        let block = block_cascade_reduction(&a, &b).unwrap();
        let single = companion_reduction(&a, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(block.c, single.c);
        assert_eq!(block.p, single.p);

        // Shift: e1 → e2 → e3 → 0.
        let mut shift = DMatrix::zeros(3, 3);
        shift[(1, 0)] = 1.0;
        shift[(2, 1)] = 1.0;
        let b = mat(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let f = block_cascade_reduction(&shift, &b).unwrap();
        assert_eq!(f.blocks.len(), 1);
        assert_eq!(f.blocks[0].size, 3);
        assert_eq!(f.blocks[0].column, 0);
    }

    #[test]
    fn block_with_coupled_chains() {
        // Chains of length 2 and 1 with a non-trivial off-diagonal column.
        let a = mat(3, 3, &[1.0, 0.0, 1.0, 1.0, 2.0, 0.0, 0.0, 0.0, 3.0]);
        let b = mat(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let f = block_cascade_reduction(&a, &b).unwrap();
        assert_eq!(f.blocks.iter().map(|b| b.size).collect::<Vec<_>>(), vec![2, 1]);
        assert!(f.similarity_residual(&a) < 1e-12);
        let selected = &f.p * &f.d;
        assert_eq!(selected, b);
        // Block upper triangular: nothing below the first block in its columns.
        assert_eq!(f.c[(2, 0)], 0.0);
        assert_eq!(f.c[(2, 1)], 0.0);
    }

    #[test]
    fn h2_examples() {
        let r = validate_h2(&mat(2, 2, &[1.0, 0.0, 0.0, 2.0]), 2.0).unwrap();
        assert!(r.passed());
        let r = validate_h2(&mat(2, 2, &[-5.0, 0.0, 0.0, 1.0]), 2.0).unwrap();
        assert!(!r.passed());
        assert!(r.ensure().unwrap_err().is_hypothesis());
        assert!((r.lower_bound + 4.934802200544679).abs() < 1e-12);
        let err = validate_h2(&mat(2, 2, &[0.0, 1.0, 0.0, 0.0]), 2.0).unwrap_err();
        assert!(err.is_hypothesis());
        let err = validate_h2(&mat(2, 2, &[0.0, -1.0, 1.0, 0.0]), 2.0).unwrap_err();
        assert!(err.is_hypothesis());
    }

    #[test]
    fn null_vector_of_companion_transpose() {
        let c = mat(2, 2, &[0.0, -2.0, 1.0, 3.0]);
        let ct = c.transpose();
        for sigma in [1.0, 2.0] {
            let v = null_vector(&ct, sigma).unwrap();
            assert!((v[1] / v[0] - sigma).abs() < 1e-12);
        }
    }
}
