//! Dense row-major f64 matrices and the two solvers shared by the rest of
//! the pipeline: pairwise squared distances and ridge least squares.
//!
//! Matrices are immutable once handed across a module boundary and are safe
//! to read from concurrent tasks. All arithmetic is in 64-bit floats.

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build from row-major data, validating length and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(
                "Matrix::new",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        let m = Matrix { rows, cols, data };
        m.check_finite("Matrix::new")?;
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(Error::dims("Matrix::from_rows", "ragged rows"));
        }
        Matrix::new(r, c, rows.concat())
    }

    /// Entries drawn uniformly from `[-scale, scale)`.
    pub fn random_uniform(rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> Self {
        Matrix {
            rows,
            cols,
            data: (0..rows * cols)
                .map(|_| rng.uniform_in(-scale, scale))
                .collect(),
        }
    }

    /// Entries drawn from N(0, sigma^2).
    pub fn random_normal(rows: usize, cols: usize, sigma: f64, rng: &mut RngStream) -> Self {
        Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| sigma * rng.normal()).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn same_shape(&self, other: &Matrix, context: &'static str) -> Result<()> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::dims(
                context,
                format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        Ok(())
    }

    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        for (idx, &v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context,
                    row: idx / self.cols.max(1),
                    col: idx % self.cols.max(1),
                });
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self (n x k) * rhs (k x m)`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::dims(
                "matmul",
                format!("{}x{} * {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        let m = rhs.cols;
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * m..(i + 1) * m];
            for (l, &a) in a_row.iter().enumerate() {
                let b_row = &rhs.data[l * m..(l + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self (n x k) * rhs^T` where `rhs` is `m x k`.
    pub fn matmul_transpose_b(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::dims(
                "matmul_transpose_b",
                format!("{}x{} * ({}x{})^T", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * rhs.rows..(i + 1) * rhs.rows];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = rhs.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                *o = acc;
            }
        }
        Ok(out)
    }

    /// `self^T * rhs` where `self` is `n x p`, `rhs` is `n x m`.
    pub fn matmul_transpose_a(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::dims(
                "matmul_transpose_a",
                format!("({}x{})^T * {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        let m = rhs.cols;
        for i in 0..self.rows {
            let a_row = self.row(i);
            let b_row = rhs.row(i);
            for (l, &a) in a_row.iter().enumerate() {
                let out_row = &mut out.data[l * m..(l + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Copy of the rows at `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.row(i));
        }
        out
    }

    /// Copy of the column block `[start, start + width)`.
    pub fn col_block(&self, start: usize, width: usize) -> Matrix {
        debug_assert!(start + width <= self.cols);
        let mut out = Matrix::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    /// Horizontal concatenation; all blocks must have equal row counts.
    pub fn hstack(blocks: &[&Matrix]) -> Result<Matrix> {
        let rows = blocks.first().map_or(0, |b| b.rows);
        if blocks.iter().any(|b| b.rows != rows) {
            return Err(Error::dims("hstack", "row counts differ"));
        }
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let out_row = out.row_mut(i);
            let mut off = 0;
            for b in blocks {
                out_row[off..off + b.cols].copy_from_slice(b.row(i));
                off += b.cols;
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Squared Euclidean distance between every row of `a` and every row of `b`.
///
/// `out[i][j] = sum_l (a[i][l] - b[j][l])^2`; computed by direct differencing
/// so entries are exact zeros on identical rows and never negative.
pub fn pairwise_sqdist(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::dims(
            "pairwise_sqdist",
            format!("a has {} cols, b has {}", a.cols, b.cols),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        let out_row = out.row_mut(i);
        for (j, o) in out_row.iter_mut().enumerate() {
            let br = b.row(j);
            let mut acc = 0.0;
            for (&x, &y) in ar.iter().zip(br) {
                let d = x - y;
                acc += d * d;
            }
            *o = acc;
        }
    }
    Ok(out)
}

/// Scale each row to sum to 1, preserving within-row proportions.
///
/// Entries must be nonnegative; a row with zero sum is reported by index.
pub fn row_normalize(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let sum: f64 = row.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::DegenerateRow { row: i });
        }
        let inv = 1.0 / sum;
        for v in row {
            *v *= inv;
        }
    }
    Ok(out)
}

/// Ridge least squares: the `B` minimizing `||Y - X B||_F^2 + eps ||B||_F^2`,
/// i.e. `B = (X^T X + eps I)^{-1} X^T Y`.
///
/// Solved by Cholesky on the `p x p` normal equations; `p` stays at the
/// embedded dimension here, so conditioning is acceptable at this scale.
/// With `eps = 0` a rank-deficient design is reported as a singularity.
pub fn solve_ridge(x: &Matrix, y: &Matrix, eps: f64) -> Result<Matrix> {
    if x.rows != y.rows {
        return Err(Error::dims(
            "solve_ridge",
            format!("X has {} rows, Y has {}", x.rows, y.rows),
        ));
    }
    if eps < 0.0 {
        return Err(Error::InvalidConfig {
            detail: format!("ridge eps must be nonnegative, got {eps}"),
        });
    }
    let mut gram = x.matmul_transpose_a(x)?;
    for k in 0..gram.rows() {
        gram[(k, k)] += eps;
    }
    let xty = x.matmul_transpose_a(y)?;
    let chol = cholesky(&gram)?;
    let mut out = Matrix::zeros(x.cols, y.cols);
    let mut col = vec![0.0; x.cols];
    for j in 0..y.cols {
        for i in 0..x.cols {
            col[i] = xty[(i, j)];
        }
        let solved = chol.solve(&col);
        for i in 0..x.cols {
            out[(i, j)] = solved[i];
        }
    }
    out.check_finite("solve_ridge")?;
    Ok(out)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
struct Cholesky {
    l: Matrix,
}

fn cholesky(a: &Matrix) -> Result<Cholesky> {
    let n = a.rows();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let floor = max_diag.max(1.0) * 1e-14;
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = a[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if acc <= floor {
                    return Err(Error::Singular {
                        detail: format!(
                            "normal equations pivot {i} is {acc:.3e}; \
                             design matrix is rank-deficient (rank < {n})"
                        ),
                    });
                }
                l[(i, i)] = acc.sqrt();
            } else {
                l[(i, j)] = acc / l[(j, j)];
            }
        }
    }
    Ok(Cholesky { l })
}

impl Cholesky {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut acc = b[i];
            for k in 0..i {
                acc -= self.l[(i, k)] * y[k];
            }
            y[i] = acc / self.l[(i, i)];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = y[i];
            for k in i + 1..n {
                acc -= self.l[(k, i)] * x[k];
            }
            x[i] = acc / self.l[(i, i)];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_sqdist(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.rows());
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                let mut acc = 0.0;
                for l in 0..a.cols() {
                    let d = a[(i, l)] - b[(j, l)];
                    acc += d * d;
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    #[test]
    fn sqdist_identical_rows_is_zero() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let d = pairwise_sqdist(&a, &a).unwrap();
        assert_eq!(d[(0, 0)], 0.0);
    }

    #[test]
    fn sqdist_one_dimensional() {
        let a = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0]]).unwrap();
        assert_eq!(pairwise_sqdist(&a, &b).unwrap()[(0, 0)], 9.0);
    }

    #[test]
    fn sqdist_matches_naive_loop() {
        let mut rng = RngStream::new(1, 0);
        let a = Matrix::random_normal(5, 3, 1.0, &mut rng);
        let b = Matrix::random_normal(4, 3, 1.0, &mut rng);
        let got = pairwise_sqdist(&a, &b).unwrap();
        let want = naive_sqdist(&a, &b);
        assert_eq!(got.max_abs_diff(&want), 0.0);
    }

    #[test]
    fn sqdist_self_is_symmetric_with_zero_diagonal() {
        let mut rng = RngStream::new(2, 0);
        for _ in 0..20 {
            let a = Matrix::random_normal(6, 4, 2.0, &mut rng);
            let d = pairwise_sqdist(&a, &a).unwrap();
            for i in 0..6 {
                assert_eq!(d[(i, i)], 0.0);
                for j in 0..6 {
                    assert_eq!(d[(i, j)], d[(j, i)]);
                    assert!(d[(i, j)] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn sqdist_rejects_dim_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 4);
        assert!(matches!(
            pairwise_sqdist(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn normalize_basic() {
        let m = Matrix::from_rows(&[vec![2.0, 2.0], vec![1.0, 3.0]]).unwrap();
        let n = row_normalize(&m).unwrap();
        assert_eq!(n.row(0), &[0.5, 0.5]);
        assert_eq!(n.row(1), &[0.25, 0.75]);
    }

    #[test]
    fn normalize_rows_sum_to_one() {
        let mut rng = RngStream::new(3, 0);
        let m = Matrix::from_fn(8, 5, |_, _| rng.uniform() + 0.01);
        let n = row_normalize(&m).unwrap();
        for i in 0..8 {
            let s: f64 = n.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_zero_row_reports_index() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        match row_normalize(&m) {
            Err(Error::DegenerateRow { row }) => assert_eq!(row, 1),
            other => panic!("expected degenerate row, got {other:?}"),
        }
    }

    #[test]
    fn ridge_identity_design_returns_targets() {
        let n = 4;
        let x = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 });
        let mut rng = RngStream::new(4, 0);
        let y = Matrix::random_normal(n, 2, 1.0, &mut rng);
        let b = solve_ridge(&x, &y, 0.0).unwrap();
        assert!(b.max_abs_diff(&y) < 1e-12);
    }

    #[test]
    fn ridge_recovers_planted_coefficients() {
        let mut rng = RngStream::new(5, 0);
        let x = Matrix::random_normal(40, 6, 1.0, &mut rng);
        let planted = Matrix::random_normal(6, 3, 1.0, &mut rng);
        let y = x.matmul(&planted).unwrap();
        let b = solve_ridge(&x, &y, 0.0).unwrap();
        assert!(b.sub(&planted).unwrap().frobenius_norm() < 1e-8);
    }

    #[test]
    fn ridge_residual_orthogonality_at_zero_eps() {
        let mut rng = RngStream::new(6, 0);
        for trial in 0..10 {
            let x = Matrix::random_normal(30, 5, 1.0, &mut rng);
            let y = Matrix::random_normal(30, 2, 1.0, &mut rng);
            let b = solve_ridge(&x, &y, 0.0).unwrap();
            let resid = y.sub(&x.matmul(&b).unwrap()).unwrap();
            let xtr = x.matmul_transpose_a(&resid).unwrap();
            let xty = x.matmul_transpose_a(&y).unwrap();
            assert!(
                xtr.frobenius_norm() <= 1e-8 * xty.frobenius_norm(),
                "trial {trial}: residual not orthogonal"
            );
        }
    }

    #[test]
    fn ridge_shrinks_toward_zero() {
        let mut rng = RngStream::new(7, 0);
        let x = Matrix::random_normal(20, 4, 1.0, &mut rng);
        let y = Matrix::random_normal(20, 2, 1.0, &mut rng);
        let mut prev = f64::INFINITY;
        for &eps in &[0.0, 1.0, 10.0, 100.0, 1e4, 1e8] {
            let norm = solve_ridge(&x, &y, eps).unwrap().frobenius_norm();
            assert!(norm <= prev + 1e-12, "eps {eps}: {norm} > {prev}");
            prev = norm;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn ridge_singular_at_zero_eps_is_reported() {
        // Two identical columns: rank 1 design.
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert!(matches!(
            solve_ridge(&x, &y, 0.0),
            Err(Error::Singular { .. })
        ));
        // The default ridge term rescues it.
        assert!(solve_ridge(&x, &y, 1e-6).is_ok());
    }

    #[test]
    fn ridge_row_count_mismatch() {
        let x = Matrix::zeros(3, 2);
        let y = Matrix::zeros(4, 1);
        assert!(matches!(
            solve_ridge(&x, &y, 0.1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = RngStream::new(8, 0);
        let a = Matrix::random_normal(7, 5, 1.0, &mut rng);
        let b = Matrix::random_normal(5, 6, 1.0, &mut rng);
        let ab = a.matmul(&b).unwrap();
        let via_tb = a.matmul_transpose_b(&b.transpose()).unwrap();
        let via_ta = a.transpose().matmul_transpose_a(&b).unwrap();
        assert!(ab.max_abs_diff(&via_tb) < 1e-12);
        assert!(ab.max_abs_diff(&via_ta) < 1e-12);
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn hstack_and_col_block_round_trip() {
        let mut rng = RngStream::new(9, 0);
        let a = Matrix::random_normal(3, 2, 1.0, &mut rng);
        let b = Matrix::random_normal(3, 4, 1.0, &mut rng);
        let joined = Matrix::hstack(&[&a, &b]).unwrap();
        assert_eq!(joined.cols(), 6);
        assert_eq!(joined.col_block(0, 2), a);
        assert_eq!(joined.col_block(2, 4), b);
    }
}
