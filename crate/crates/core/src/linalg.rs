//! Dense real linear algebra: row-major `f64` matrices, products, row-wise
//! softmax and normalization, and a cyclic Jacobi solver for symmetric
//! eigenproblems.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};

/// Row-major dense matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let expected = rows.checked_mul(cols).ok_or_else(|| Error::Shape(alloc::format!("{rows}x{cols} overflows")))?;
        if data.len() != expected {
            bail!(Shape, "data length {} does not match {rows}x{cols}", data.len());
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            bail!(Domain, "non-finite entry at flat index {pos}");
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
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
                bail!(Shape, "row {i} has {} columns, expected {cols}", r.len());
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        let n = values.len();
        let mut data = vec![0.0; n * n];
        for (i, v) in values.iter().enumerate() {
            data[i * n + i] = *v;
        }
        Self::new(n, n, data)
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub(crate) fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Copies the listed rows, in the given order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                bail!(Shape, "row index {i} out of bounds for {} rows", self.rows);
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self::from_raw(indices.len(), self.cols, data))
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_range(&self, start: usize, end: usize) -> Self {
        Self::from_raw(end - start, self.cols, self.data[start * self.cols..end * self.cols].to_vec())
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|x| x * x).sum())
    }

    /// Largest absolute entry-wise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return None;
        }
        Some(self.data.iter().zip(&other.data).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max))
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::from_raw(self.rows, self.cols, self.data.iter().map(|x| x * c).collect())
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues in non-increasing order and
/// eigenvectors stored as the matching columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DenseMatrix,
}

/// Matrix product `a * b`, accumulated row-major and left to right.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        bail!(Shape, "cannot multiply {}x{} by {}x{}", a.rows, a.cols, b.rows, b.cols);
    }
    let mut out = vec![0.0; a.rows * b.cols];
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out[i * b.cols..(i + 1) * b.cols];
        for j in 0..b.cols {
            let mut acc = 0.0;
            for (k, av) in arow.iter().enumerate() {
                acc += av * b.data[k * b.cols + j];
            }
            orow[j] = acc;
        }
    }
    Ok(DenseMatrix::from_raw(a.rows, b.cols, out))
}

/// `x * w` for a single row vector `x`.
pub(crate) fn vecmat(x: &[f64], w: &DenseMatrix) -> Vec<f64> {
    debug_assert_eq!(x.len(), w.rows);
    let mut out = vec![0.0; w.cols];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, xv) in x.iter().enumerate() {
            acc += xv * w.data[k * w.cols + j];
        }
        *o = acc;
    }
    out
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place max-shifted softmax of one row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(a: &DenseMatrix) -> DenseMatrix {
    let mut out = a.clone();
    if out.cols == 0 {
        return out;
    }
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Scales every nonzero row to unit Euclidean norm; zero rows are returned as is.
pub fn l2_normalize_rows(a: &DenseMatrix) -> DenseMatrix {
    let mut out = a.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let norm = libm::sqrt(dot(row, row));
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    out
}

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// The input is symmetrized as `(A + Aᵀ)/2` first. Sweeps stop once the
/// off-diagonal Frobenius norm drops to `1e-12·‖A‖_F`, or after 100 sweeps.
pub fn sym_eig(a: &DenseMatrix) -> Result<EigenDecomposition> {
    if a.rows != a.cols {
        bail!(Shape, "eigendecomposition needs a square matrix, got {}x{}", a.rows, a.cols);
    }
    if a.data.iter().any(|x| !x.is_finite()) {
        bail!(Domain, "matrix has non-finite entries");
    }
    let n = a.rows;
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = 0.5 * (a.data[i * n + j] + a.data[j * n + i]);
        }
    }
    let mut v = DenseMatrix::identity(n).data;
    let tol = JACOBI_REL_TOL * libm::sqrt(m.iter().map(|x| x * x).sum());

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m[i * n + j] * m[i * n + j];
                }
            }
        }
        if libm::sqrt(off) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(theta * theta + 1.0))
                } else {
                    -1.0 / (-theta + libm::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;

                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep their diagonal order
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let eigenvalues = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vecs[k * n + dst] = v[k * n + src];
        }
    }
    Ok(EigenDecomposition { eigenvalues, eigenvectors: DenseMatrix::from_raw(n, n, vecs) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
        let a = random(rng, n, n);
        let mut s = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                s.set(i, j, a.get(i, j) + a.get(j, i));
            }
        }
        s
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(DenseMatrix::new(2, 2, vec![1.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(DenseMatrix::new(1, 2, vec![1.0, f64::NAN]), Err(Error::Domain(_))));
        assert!(matches!(DenseMatrix::new(1, 1, vec![f64::INFINITY]), Err(Error::Domain(_))));
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let m = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]).unwrap();
        assert_eq!(matmul(&DenseMatrix::identity(3), &m).unwrap(), m);

        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let p = matmul(&a, &b).unwrap();
        assert_eq!(p.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, 5, 4);
        let b = random(&mut rng, 4, 3);
        let p = matmul(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a.data()[i * 4 + k] * b.data()[k * 3 + j];
                }
                assert!((p.get(i, j) - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random(&mut rng, 4, 6);
            let b = random(&mut rng, 6, 3);
            let c = random(&mut rng, 3, 5);
            let l = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let r = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = l.data().iter().fold(1.0f64, |m, x| m.max(x.abs()));
            assert!(l.max_abs_diff(&r).unwrap() <= 1e-9 * scale);
        }
    }

    #[test]
    fn eig_textbook_cases() {
        let d = DenseMatrix::diag(&[3.0, 1.0, 2.0]).unwrap();
        let e = sym_eig(&d).unwrap();
        assert_eq!(e.eigenvalues, vec![3.0, 2.0, 1.0]);

        let a = DenseMatrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let e = sym_eig(&a).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-12);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_errors() {
        assert!(matches!(sym_eig(&DenseMatrix::zeros(2, 3)), Err(Error::Shape(_))));
        let bad = DenseMatrix::from_raw(1, 1, vec![f64::NAN]);
        assert!(matches!(sym_eig(&bad), Err(Error::Domain(_))));
    }

    #[test]
    fn eig_trace_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_sym(&mut rng, 8);
        let e = sym_eig(&a).unwrap();
        let trace: f64 = (0..8).map(|i| a.get(i, i)).sum();
        let sum: f64 = e.eigenvalues.iter().sum();
        assert!((trace - sum).abs() <= 1e-9);
    }

    #[test]
    fn eig_residual_orthonormality_and_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &n in &[1usize, 2, 5, 17, 40, 64] {
            let a = random_sym(&mut rng, n);
            let e = sym_eig(&a).unwrap();
            let lam1 = e.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let tol = 1e-8 * (1.0 + lam1);
            assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            let v = &e.eigenvectors;
            for i in 0..n {
                for r in 0..n {
                    let av: f64 = (0..n).map(|k| a.get(r, k) * v.get(k, i)).sum();
                    assert!((av - e.eigenvalues[i] * v.get(r, i)).abs() <= tol);
                }
                for j in 0..n {
                    let d: f64 = (0..n).map(|k| v.get(k, i) * v.get(k, j)).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((d - want).abs() <= 1e-8);
                }
            }
            let lam = DenseMatrix::diag(&e.eigenvalues).unwrap();
            let rec = matmul(&matmul(v, &lam).unwrap(), &v.transpose()).unwrap();
            assert!(rec.max_abs_diff(&a).unwrap() <= tol);
        }
    }

    #[test]
    fn softmax_cases() {
        let a = DenseMatrix::from_rows(&[[0.0, 0.0], [1000.0, 1000.0], [0.0, 3f64.ln()]]).unwrap();
        let s = softmax_rows(&a);
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((s.get(1, 1) - 0.5).abs() < 1e-15);
        assert!((s.get(2, 0) - 0.25).abs() < 1e-12);
        assert!((s.get(2, 1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = random(&mut rng, 4, 7).scale(30.0);
            let s = softmax_rows(&a);
            for r in 0..4 {
                assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
            let shifted = DenseMatrix::new(4, 7, a.data().iter().map(|x| x + 12.5).collect()).unwrap();
            assert!(softmax_rows(&shifted).max_abs_diff(&s).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn l2_normalize_cases() {
        let a = DenseMatrix::from_rows(&[[3.0, 4.0], [0.0, 0.0], [0.6, 0.8]]).unwrap();
        let n = l2_normalize_rows(&a);
        assert!((n.get(0, 0) - 0.6).abs() < 1e-12 && (n.get(0, 1) - 0.8).abs() < 1e-12);
        assert_eq!(n.row(1), &[0.0, 0.0]);
        assert!((n.get(2, 0) - 0.6).abs() < 1e-12 && (n.get(2, 1) - 0.8).abs() < 1e-12);
    }
}
