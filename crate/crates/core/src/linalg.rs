//! Dense row-major matrices and the least-squares solver behind the
//! coefficient step of LSGD.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_mismatch, ensure_finite, Error, Result};

/// Relative cutoff (times the largest singular value) below which singular
/// values are treated as zero in the unregularized solve.
pub const SVD_TRUNCATION: f64 = 1e-12;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major entries, rejecting wrong lengths and
    /// non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim_mismatch(format!("{} entries for a {rows}x{cols} matrix", data.len())));
        }
        ensure_finite("matrix entries", &data)?;
        Ok(Self { rows, cols, data })
    }

    /// Unchecked constructor for hot paths whose inputs were validated upstream.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(dim_mismatch(format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // `chunks_exact(0)` panics, and a zero-column matrix has no row data.
        let width = self.cols.max(1);
        self.data.chunks_exact(width).take(if self.cols == 0 { 0 } else { self.rows })
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    /// `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(dim_mismatch(format!(
                "matvec: {}x{} matrix with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(self.row_iter().map(|r| dot(r, x)).collect())
    }

    /// `selfᵀ * x`.
    pub fn transpose_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(dim_mismatch(format!(
                "transpose_matvec: {}x{} matrix with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &xi) in self.row_iter().zip(x) {
            axpy(xi, r, &mut out);
        }
        Ok(out)
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

/// Matrix product `a * b`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(dim_mismatch(format!("matmul: {}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols)));
    }
    let mut c = DenseMatrix::zeros(a.rows, b.cols);
    gemm(a.rows, a.cols, b.cols, 1.0, (&a.data, false), (&b.data, false), 0.0, &mut c.data);
    Ok(c)
}

/// `c ← alpha·op(a)·op(b) + beta·c` on raw row-major buffers, where `op`
/// transposes when the flag is set. `op(a)` is `m×k`, `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    (a, a_t): (&[f64], bool),
    (b, b_t): (&[f64], bool),
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above pin every buffer to the extent implied by
    // its dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Returns `c` minimizing `‖a·c − y‖² + lambda·‖c‖²`.
///
/// With `lambda == 0` the minimum-norm minimizer is returned; singular
/// values below [`SVD_TRUNCATION`]`·σ_max` are dropped. With `lambda > 0`
/// the augmented system `[a; √λ·I] c ≈ [y; 0]` is solved by column-pivoted QR.
pub fn solve_least_squares(a: &DenseMatrix, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let (n, k) = a.shape();
    if n == 0 || k == 0 {
        return Err(dim_mismatch(format!("least squares on an empty {n}x{k} system")));
    }
    if y.len() != n {
        return Err(dim_mismatch(format!("least squares: {n} rows but right-hand side of length {}", y.len())));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("ridge parameter must be finite and nonnegative, got {lambda}")));
    }
    ensure_finite("least-squares matrix", &a.data)?;
    ensure_finite("least-squares right-hand side", y)?;

    if lambda == 0.0 {
        solve_min_norm(a, y)
    } else {
        solve_ridge(a, y, lambda)
    }
}

fn solve_min_norm(a: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>> {
    let (n, k) = a.shape();
    let am = a.to_nalgebra();
    let rhs = DVector::from_column_slice(y);

    // Tall systems are first reduced to the k×k triangular factor; the SVD of
    // R has the same singular values and null space as A.
    let (core, rhs) = if n > k {
        let qr = am.qr();
        let mut qty = rhs;
        qr.q_tr_mul(&mut qty);
        (qr.unpack_r(), qty.rows(0, k).into_owned())
    } else {
        (am, rhs)
    };

    let svd = core.try_svd(true, true, f64::EPSILON, 0).ok_or_else(|| Error::Solver("SVD did not converge".into()))?;
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if sigma_max == 0.0 {
        return Ok(vec![0.0; k]);
    }
    let c = svd.solve(&rhs, SVD_TRUNCATION * sigma_max).map_err(|e| Error::Solver(e.to_string()))?;
    finite_solution(c.as_slice().to_vec())
}

fn solve_ridge(a: &DenseMatrix, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let (n, k) = a.shape();
    let sqrt_lambda = lambda.sqrt();
    let mut aug = DMatrix::<f64>::zeros(n + k, k);
    for i in 0..n {
        for j in 0..k {
            aug[(i, j)] = a.get(i, j);
        }
    }
    for j in 0..k {
        aug[(n + j, j)] = sqrt_lambda;
    }
    let mut rhs = DVector::<f64>::zeros(n + k);
    rhs.rows_mut(0, n).copy_from_slice(y);

    let qr = aug.col_piv_qr();
    qr.q_tr_mul(&mut rhs);
    let r = qr.r();
    let mut z = rhs.rows(0, k).into_owned();
    if !r.solve_upper_triangular_mut(&mut z) {
        return Err(Error::Solver("singular triangular factor in ridge solve".into()));
    }
    qr.p().inv_permute_rows(&mut z);
    finite_solution(z.as_slice().to_vec())
}

fn finite_solution(c: Vec<f64>) -> Result<Vec<f64>> {
    if c.iter().all(|v| v.is_finite()) {
        Ok(c)
    } else {
        Err(Error::Solver("solution has non-finite entries".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn constant_fit() {
        let a = mat(&[&[1.0], &[1.0], &[1.0]]);
        let c = solve_least_squares(&a, &[2.0, 2.0, 2.0], 0.0).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn ridge_shrinks_to_zero() {
        let lambda = 1e12;
        let c = solve_least_squares(&DenseMatrix::identity(2), &[1.0, 0.0], lambda).unwrap();
        assert!((c[0] - 1.0 / (1.0 + lambda)).abs() < 1e-9 / (1.0 + lambda), "{c:?}");
        assert!(c[1].abs() < 1e-24);
        assert!(c[0].abs() < 1e-11);
    }

    #[test]
    fn exact_line_fit() {
        let a = mat(&[&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0]]);
        let c = solve_least_squares(&a, &[0.0, 1.0, 2.0], 0.0).unwrap();
        assert!(c[0].abs() < 1e-14 && (c[1] - 1.0).abs() < 1e-14, "{c:?}");
    }

    #[test]
    fn rank_deficient_gives_minimum_norm() {
        // Duplicated column: any c0 + c1 = 2 fits, the minimum-norm one is [1, 1].
        let a = mat(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let c = solve_least_squares(&a, &[2.0, 2.0], 0.0).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] - 1.0).abs() < 1e-12, "{c:?}");
    }

    #[test]
    fn wide_system_minimum_norm() {
        let a = mat(&[&[1.0, 1.0, 0.0]]);
        let c = solve_least_squares(&a, &[2.0], 0.0).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] - 1.0).abs() < 1e-12 && c[2].abs() < 1e-12);
    }

    #[test]
    fn solver_errors() {
        let a = mat(&[&[1.0], &[2.0]]);
        assert!(matches!(solve_least_squares(&a, &[1.0], 0.0), Err(Error::DimensionMismatch(_))));
        assert!(matches!(solve_least_squares(&a, &[1.0, f64::NAN], 0.0), Err(Error::NonFinite(_))));
        assert!(solve_least_squares(&a, &[1.0, 1.0], -1.0).is_err());
        assert!(DenseMatrix::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
        assert!(DenseMatrix::new(2, 2, vec![1.0]).is_err());
    }

    #[test]
    fn matmul_examples() {
        let b = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&DenseMatrix::identity(2), &b).unwrap(), b);
        let p = matmul(&mat(&[&[1.0, 2.0]]), &mat(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(p.as_slice(), &[11.0]);
        assert_eq!(matmul(&DenseMatrix::zeros(3, 2), &b).unwrap(), DenseMatrix::zeros(3, 2));
        assert!(matmul(&b, &DenseMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn gemm_transposes() {
        let a = mat(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = mat(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let mut c = vec![0.0; 6];
        gemm(3, 2, 2, 1.0, (a.as_slice(), true), (b.as_slice(), false), 0.0, &mut c);
        assert_eq!(c, a.transpose().as_slice());
        let at = a.transpose();
        let mut c = vec![0.0; 4];
        gemm(2, 3, 2, 1.0, (a.as_slice(), false), (at.as_slice(), false), 0.0, &mut c);
        let mut c2 = vec![0.0; 4];
        gemm(2, 3, 2, 1.0, (a.as_slice(), false), (a.as_slice(), true), 0.0, &mut c2);
        assert_eq!(c, c2);
    }

    fn random_system() -> impl Strategy<Value = (DenseMatrix, Vec<f64>)> {
        (2usize..12, 1usize..6).prop_flat_map(|(extra, k)| {
            let n = k + extra;
            (proptest::collection::vec(-3.0..3.0f64, n * k), proptest::collection::vec(-3.0..3.0f64, n))
                .prop_map(move |(a, y)| (DenseMatrix::new(n, k, a).unwrap(), y))
        })
    }

    proptest! {
        #[test]
        fn residual_is_orthogonal_to_columns((a, y) in random_system()) {
            let c = solve_least_squares(&a, &y, 0.0).unwrap();
            let ac = a.matvec(&c).unwrap();
            let r: Vec<f64> = ac.iter().zip(&y).map(|(p, t)| p - t).collect();
            let atr = a.transpose_matvec(&r).unwrap();
            prop_assert!(norm2(&atr) <= 1e-8 * a.frobenius_norm() * norm2(&y) + 1e-300);
        }

        #[test]
        fn ridge_satisfies_normal_equations((a, y) in random_system(), lambda in 1e-3..10.0f64) {
            let c = solve_least_squares(&a, &y, lambda).unwrap();
            let ac = a.matvec(&c).unwrap();
            let mut lhs = a.transpose_matvec(&ac).unwrap();
            axpy(lambda, &c, &mut lhs);
            let aty = a.transpose_matvec(&y).unwrap();
            let diff: Vec<f64> = lhs.iter().zip(&aty).map(|(l, r)| l - r).collect();
            let fro = a.frobenius_norm();
            prop_assert!(norm2(&diff) <= 1e-8 * (fro * fro + lambda) * norm2(&c) + 1e-8 * norm2(&aty));
        }

        #[test]
        fn ridge_norm_is_monotone((a, y) in random_system(), l1 in 0.0..1.0f64, gap in 1e-3..5.0f64) {
            let c1 = solve_least_squares(&a, &y, l1).unwrap();
            let c2 = solve_least_squares(&a, &y, l1 + gap).unwrap();
            prop_assert!(norm2(&c1) >= norm2(&c2) * (1.0 - 1e-12));
        }
    }
}
