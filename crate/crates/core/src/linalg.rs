//! Small dense real matrices.
//!
//! Everything here targets the d <= 8 regime of cocycle fibers: storage is
//! inline for up to 4x4, algorithms are the textbook dense ones (partial
//! pivoting LU, Householder QR, cyclic Jacobi for symmetric eigenproblems).

use core::fmt;
use core::ops::{Index, IndexMut, Mul};

use smallvec::{smallvec, SmallVec};

use crate::math;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: SmallVec<[f64; 16]>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{:.6e}", self[(i, j)])?;
            }
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: smallvec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// Panics if the rows are ragged.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = SmallVec::with_capacity(r * c);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), c, "ragged matrix rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), rows * cols);
        Matrix {
            rows,
            cols,
            data: SmallVec::from_slice(values),
        }
    }

    /// 2x2 rotation by `angle` radians.
    pub fn rotation(angle: f64) -> Self {
        let (s, c) = (math::sin(angle), math::cos(angle));
        Matrix::from_row_major(2, 2, &[c, -s, s, c])
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> SmallVec<[f64; 8]> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Columns `range` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, end - start);
        for i in 0..self.rows {
            for j in start..end {
                out[(i, j - start)] = self[(i, j)];
            }
        }
        out
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_block(&self, start: usize, end: usize) -> Matrix {
        Matrix::from_row_major(
            end - start,
            self.cols,
            &self.data[start * self.cols..end * self.cols],
        )
    }

    /// Horizontal concatenation.
    pub fn hstack(blocks: &[Matrix]) -> Matrix {
        let rows = blocks.first().map_or(0, |b| b.rows);
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for b in blocks {
            assert_eq!(b.rows, rows);
            for i in 0..rows {
                for j in 0..b.cols {
                    out[(i, offset + j)] = b[(i, j)];
                }
            }
            offset += b.cols;
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    /// `selfᵀ · other` without forming the transpose.
    pub fn tr_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows);
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let a = self[(k, i)];
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> SmallVec<[f64; 8]> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        let mut out = self.clone();
        out.scale_mut(s);
        out
    }

    pub fn scale_mut(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    /// `self - I`.
    pub fn minus_identity(&self) -> Matrix {
        assert!(self.is_square());
        let mut out = self.clone();
        for i in 0..self.rows {
            out[(i, i)] -= 1.0;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::sqrt(self.data.iter().map(|a| a * a).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// Operator 2-norm (largest singular value).
    pub fn spectral_norm(&self) -> f64 {
        self.singular_value_range().1
    }

    /// Smallest and largest singular values.
    pub fn singular_value_range(&self) -> (f64, f64) {
        let scale = self.max_abs();
        if scale == 0.0 || !scale.is_finite() {
            return (0.0, scale);
        }
        let m = self.scaled(1.0 / scale);
        let g = m.tr_matmul(&m);
        if m.rows == 2 && m.cols == 2 {
            let (_, hi) = sym2_eigenvalues(&g);
            let hi = math::sqrt(hi.max(0.0));
            let lo = if hi > 0.0 { m.determinant().abs() / hi } else { 0.0 };
            return (lo * scale, hi * scale);
        }
        let (lo, hi) = if g.rows == 2 {
            sym2_eigenvalues(&g)
        } else {
            let eig = g.symmetric_eigen();
            (eig.values[0], eig.values[eig.values.len() - 1])
        };
        (
            math::sqrt(lo.max(0.0)) * scale,
            math::sqrt(hi.max(0.0)) * scale,
        )
    }

    /// 2-norm condition number; infinite for singular input.
    pub fn condition_number(&self) -> f64 {
        let (lo, hi) = self.singular_value_range();
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    pub fn determinant(&self) -> f64 {
        assert!(self.is_square());
        match self.rows {
            0 => 1.0,
            1 => self.data[0],
            2 => self.data[0] * self.data[3] - self.data[1] * self.data[2],
            _ => match Lu::factor(self) {
                Some(lu) => lu.determinant(),
                None => 0.0,
            },
        }
    }

    /// Inverse via LU with partial pivoting; `None` if numerically singular.
    pub fn inverse(&self) -> Option<Matrix> {
        assert!(self.is_square());
        if self.rows == 2 {
            let det = self.determinant();
            let scale = self.max_abs();
            if det == 0.0 || !det.is_finite() || det.abs() <= f64::EPSILON * scale * scale * 1e-3 {
                return None;
            }
            let inv = 1.0 / det;
            return Some(Matrix::from_row_major(
                2,
                2,
                &[
                    self.data[3] * inv,
                    -self.data[1] * inv,
                    -self.data[2] * inv,
                    self.data[0] * inv,
                ],
            ));
        }
        let lu = Lu::factor(self)?;
        Some(lu.solve_matrix(&Matrix::identity(self.rows)))
    }

    /// Solves `self · X = rhs`.
    pub fn solve(&self, rhs: &Matrix) -> Option<Matrix> {
        Lu::factor(self).map(|lu| lu.solve_matrix(rhs))
    }

    /// Householder QR of a square or tall matrix, normalized so that the
    /// diagonal of `R` is nonnegative.
    pub fn qr(&self) -> Qr {
        let (m, n) = (self.rows, self.cols);
        assert!(m >= n, "qr requires rows >= cols");
        if m == 2 && n == 2 {
            return qr2(self);
        }
        let mut r = self.clone();
        let mut q = Matrix::identity(m);
        let mut v: SmallVec<[f64; 8]> = smallvec![0.0; m];
        for k in 0..n.min(m - 1) {
            let mut norm = 0.0;
            for i in k..m {
                norm += r[(i, k)] * r[(i, k)];
            }
            let norm = math::sqrt(norm);
            if norm == 0.0 {
                continue;
            }
            let alpha = if r[(k, k)] > 0.0 { -norm } else { norm };
            for i in 0..m {
                v[i] = if i < k { 0.0 } else { r[(i, k)] };
            }
            v[k] -= alpha;
            let vnorm2: f64 = v[k..].iter().map(|a| a * a).sum();
            if vnorm2 == 0.0 {
                continue;
            }
            // R <- H R
            for j in 0..n {
                let dot: f64 = (k..m).map(|i| v[i] * r[(i, j)]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in k..m {
                    r[(i, j)] -= f * v[i];
                }
            }
            // Q <- Q H
            for i in 0..m {
                let dot: f64 = (k..m).map(|l| q[(i, l)] * v[l]).sum();
                let f = 2.0 * dot / vnorm2;
                for l in k..m {
                    q[(i, l)] -= f * v[l];
                }
            }
        }
        // Thin factors and sign normalization.
        let mut q_thin = q.columns(0, n);
        let mut r_thin = r.row_block(0, n);
        for k in 0..n {
            for i in (k + 1)..n {
                r_thin[(i, k)] = 0.0;
            }
            if r_thin[(k, k)] < 0.0 {
                for j in 0..n {
                    r_thin[(k, j)] = -r_thin[(k, j)];
                }
                for i in 0..m {
                    q_thin[(i, k)] = -q_thin[(i, k)];
                }
            }
        }
        Qr {
            q: q_thin,
            r: r_thin,
        }
    }

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
    /// Eigenvalues ascending; eigenvectors are the matching columns.
    pub fn symmetric_eigen(&self) -> SymmetricEigen {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.clone();
        let mut v = Matrix::identity(n);
        for _sweep in 0..64 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            let total = a.frobenius_norm();
            if off <= (1e-32 * total * total).max(f64::MIN_POSITIVE) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + math::sqrt(theta * theta + 1.0));
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / math::sqrt(t * t + 1.0);
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: SmallVec<[usize; 8]> = (0..n).collect();
        order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let mut vectors = Matrix::zeros(n, n);
        for (col, &src) in order.iter().enumerate() {
            for k in 0..n {
                vectors[(k, col)] = v[(k, src)];
            }
        }
        SymmetricEigen { values, vectors }
    }

    /// `f(S)` for symmetric `S` via its eigen-decomposition.
    pub fn symmetric_function(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let eig = self.symmetric_eigen();
        let n = self.rows;
        let mut out = Matrix::zeros(n, n);
        for k in 0..n {
            let fk = f(eig.values[k]);
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] += eig.vectors[(i, k)] * fk * eig.vectors[(j, k)];
                }
            }
        }
        out
    }

    /// `(self + selfᵀ)/2`.
    pub fn symmetrized(&self) -> Matrix {
        let t = self.transpose();
        self.add(&t).scaled(0.5)
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

/// Thin QR factors.
#[derive(Clone, Debug)]
pub struct Qr {
    pub q: Matrix,
    pub r: Matrix,
}

#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: SmallVec<[f64; 8]>,
    pub vectors: Matrix,
}

fn sym2_eigenvalues(g: &Matrix) -> (f64, f64) {
    let (a, b, d) = (g[(0, 0)], 0.5 * (g[(0, 1)] + g[(1, 0)]), g[(1, 1)]);
    let mean = 0.5 * (a + d);
    let half = 0.5 * (a - d);
    let rad = math::hypot(half, b);
    let hi = mean + rad;
    // The product form avoids cancellation in the small eigenvalue.
    let det = a * d - b * b;
    let lo = if hi > 0.0 { det / hi } else { mean - rad };
    (lo, hi)
}

fn qr2(a: &Matrix) -> Qr {
    let (x, y) = (a[(0, 0)], a[(1, 0)]);
    let r11 = math::hypot(x, y);
    let (c, s) = if r11 == 0.0 { (1.0, 0.0) } else { (x / r11, y / r11) };
    // Q = [[c, -s], [s, c]]
    let r12 = c * a[(0, 1)] + s * a[(1, 1)];
    let mut r22 = -s * a[(0, 1)] + c * a[(1, 1)];
    let mut q = Matrix::from_row_major(2, 2, &[c, -s, s, c]);
    if r22 < 0.0 {
        r22 = -r22;
        q[(0, 1)] = -q[(0, 1)];
        q[(1, 1)] = -q[(1, 1)];
    }
    Qr {
        q,
        r: Matrix::from_row_major(2, 2, &[r11, r12, 0.0, r22]),
    }
}

/// LU factorization with partial pivoting.
pub struct Lu {
    lu: Matrix,
    perm: SmallVec<[usize; 8]>,
    sign: f64,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Option<Lu> {
        assert!(a.is_square());
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: SmallVec<[usize; 8]> = (0..n).collect();
        let mut sign = 1.0;
        let scale = a.max_abs();
        if scale == 0.0 || !scale.is_finite() {
            return None;
        }
        for k in 0..n {
            let (mut p, mut best) = (k, lu[(k, k)].abs());
            for i in (k + 1)..n {
                if lu[(i, k)].abs() > best {
                    best = lu[(i, k)].abs();
                    p = i;
                }
            }
            if best <= scale * 1e-300_f64.max(f64::EPSILON * 1e-6) {
                return None;
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
                sign = -sign;
            }
            for i in (k + 1)..n {
                let f = lu[(i, k)] / lu[(k, k)];
                lu[(i, k)] = f;
                for j in (k + 1)..n {
                    lu[(i, j)] -= f * lu[(k, j)];
                }
            }
        }
        Some(Lu { lu, perm, sign })
    }

    pub fn determinant(&self) -> f64 {
        (0..self.lu.rows).fold(self.sign, |d, i| d * self.lu[(i, i)])
    }

    pub fn solve_matrix(&self, rhs: &Matrix) -> Matrix {
        let n = self.lu.rows;
        assert_eq!(rhs.rows, n);
        let mut x = Matrix::zeros(n, rhs.cols);
        for c in 0..rhs.cols {
            for i in 0..n {
                let mut s = rhs[(self.perm[i], c)];
                for k in 0..i {
                    s -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.lu[(i, i)];
            }
        }
        x
    }
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
}
