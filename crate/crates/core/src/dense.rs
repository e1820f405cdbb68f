//! Dense row-major matrices and the small set of kernels the solver needs:
//! partial-pivot LU, Cholesky, and a cyclic Jacobi symmetric eigensolver.
//!
//! Blocks in this solver are small (a few state dimensions wide), so plain
//! contiguous storage beats any sparse format. The kernels are self-contained
//! on purpose: the reference computations in [`crate::oracle`] must not share
//! a third-party code path with the structured solver they certify.

use std::cell::Cell;
use std::fmt;
use std::ops::{Index, IndexMut};

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

thread_local! {
    /// When set, allocating or multiplying a matrix with *both* dimensions
    /// above the limit panics. Tests arm this around structured code paths
    /// that must never materialize horizon-sized matrices.
    static ALLOC_LIMIT: Cell<Option<usize>> = const { Cell::new(None) };
}

/// RAII guard for the thread-local allocation limit. See [`arm_alloc_guard`].
pub struct AllocGuard {
    prev: Option<usize>,
}

impl Drop for AllocGuard {
    fn drop(&mut self) {
        ALLOC_LIMIT.with(|l| l.set(self.prev));
    }
}

/// Trip a panic on any subsequent `Mat` allocation whose rows *and* cols both
/// exceed `limit`, until the returned guard is dropped.
pub fn arm_alloc_guard(limit: usize) -> AllocGuard {
    let prev = ALLOC_LIMIT.with(|l| l.replace(Some(limit)));
    AllocGuard { prev }
}

fn check_alloc(rows: usize, cols: usize) {
    ALLOC_LIMIT.with(|l| {
        if let Some(limit) = l.get() {
            if rows > limit && cols > limit {
                panic!("allocation guard tripped: {rows}x{cols} matrix exceeds limit {limit}");
            }
        }
    });
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for c in 0..self.cols.min(8) {
                write!(f, "{:>12.5e} ", self[(r, c)])?;
            }
            writeln!(f, "{}", if self.cols > 8 { "..." } else { "" })?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        check_alloc(rows, cols);
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Diagonal matrix from a slice.
    pub fn diag(d: &[f64]) -> Self {
        let mut m = Mat::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch("ragged row lengths".into()));
        }
        check_alloc(r, c);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Ok(Mat { rows: r, cols: c, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn scale(&self, a: f64) -> Mat {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= a;
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (v, w) in out.data.iter_mut().zip(&other.data) {
            *v += w;
        }
        out
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (v, w) in out.data.iter_mut().zip(&other.data) {
            *v -= w;
        }
        out
    }

    /// `self += a * other`
    pub fn add_scaled(&mut self, a: f64, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (v, w) in self.data.iter_mut().zip(&other.data) {
            *v += a * w;
        }
    }

    /// Copy `block` into `self` with its (0,0) entry at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Mat) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for r in 0..block.rows {
            let dst = &mut self.row_mut(r0 + r)[c0..c0 + block.cols];
            dst.copy_from_slice(block.row(r));
        }
    }

    /// `self[r0.., c0..] += a * block`
    pub fn add_block(&mut self, r0: usize, c0: usize, a: f64, block: &Mat) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for r in 0..block.rows {
            let dst = &mut self.row_mut(r0 + r)[c0..c0 + block.cols];
            for (d, s) in dst.iter_mut().zip(block.row(r)) {
                *d += a * s;
            }
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Mat {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols);
        Mat::from_fn(rows, cols, |r, c| self[(r0 + r, c0 + c)])
    }

    /// `C = self * other`
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul inner dimensions");
        check_alloc(self.rows, other.cols);
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let out_row = out.row_mut(r);
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `C = self^T * other`
    pub fn matmul_tn(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "matmul_tn inner dimensions");
        check_alloc(self.cols, other.cols);
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (r, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(r);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `C = self * other^T`
    pub fn matmul_nt(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_nt inner dimensions");
        check_alloc(self.rows, other.rows);
        let mut out = Mat::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let a_row = self.row(r);
            for c in 0..other.rows {
                out[(r, c)] = dot(a_row, other.row(c));
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.matvec_acc(x, &mut y, 1.0);
        y
    }

    /// `y += a * self * x`
    pub fn matvec_acc(&self, x: &[f64], y: &mut [f64], a: f64) {
        assert_eq!(x.len(), self.cols, "matvec x length");
        assert_eq!(y.len(), self.rows, "matvec y length");
        for r in 0..self.rows {
            y[r] += a * dot(self.row(r), x);
        }
    }

    /// `y += a * self^T * x`
    pub fn matvec_t_acc(&self, x: &[f64], y: &mut [f64], a: f64) {
        assert_eq!(x.len(), self.rows, "matvec_t x length");
        assert_eq!(y.len(), self.cols, "matvec_t y length");
        for (r, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let row = self.row(r);
            for (yv, &m) in y.iter_mut().zip(row) {
                *yv += a * xv * m;
            }
        }
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for r in 0..self.rows {
            for c in (r + 1)..self.cols.min(self.rows) {
                worst = worst.max((self[(r, c)] - self[(c, r)]).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square() && self.max_asymmetry() <= tol
    }

    /// Partial-pivot LU factorization.
    pub fn lu(&self) -> Result<LuFactor> {
        LuFactor::new(self)
    }

    /// Cholesky factorization of a symmetric positive-definite matrix.
    pub fn cholesky(&self) -> Result<CholFactor> {
        CholFactor::new(self)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

// Matrices serialize as nested row arrays so instance files stay readable.
impl Serialize for Mat {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.rows))?;
        for r in 0..self.rows {
            seq.serialize_element(self.row(r))?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Mat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct MatVisitor;
        impl<'de> Visitor<'de> for MatVisitor {
            type Value = Mat;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a sequence of equal-length rows of numbers")
            }
            fn visit_seq<A: SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> std::result::Result<Mat, A::Error> {
                let mut rows: Vec<Vec<f64>> = Vec::new();
                while let Some(row) = seq.next_element::<Vec<f64>>()? {
                    rows.push(row);
                }
                Mat::from_rows(&rows).map_err(de::Error::custom)
            }
        }
        deserializer.deserialize_seq(MatVisitor)
    }
}

/// LU factorization with partial pivoting, stored packed (L unit-lower, U upper).
pub struct LuFactor {
    lu: Mat,
    piv: Vec<usize>,
    rcond_est: f64,
}

impl LuFactor {
    fn new(a: &Mat) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "LU requires a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let mut lu = a.clone();
        let mut piv = Vec::with_capacity(n);
        let scale = a.norm_inf().max(1.0);
        for k in 0..n {
            let mut p = k;
            let mut max = lu[(k, k)].abs();
            for r in (k + 1)..n {
                let v = lu[(r, k)].abs();
                if v > max {
                    max = v;
                    p = r;
                }
            }
            if !(max > scale * 1e-307) || !max.is_finite() {
                return Err(Error::Singular { step: k, pivot: max });
            }
            piv.push(p);
            if p != k {
                let (lo, hi) = lu.data.split_at_mut(p * n);
                lo[k * n..(k + 1) * n].swap_with_slice(&mut hi[..n]);
            }
            let pivot = lu[(k, k)];
            // Rank-1 update of the trailing block; rows are contiguous.
            let (pivot_rows, rest) = lu.data.split_at_mut((k + 1) * n);
            let urow = &pivot_rows[k * n + k + 1..(k + 1) * n];
            for r in 0..(n - k - 1) {
                let row = &mut rest[r * n..(r + 1) * n];
                let l = row[k] / pivot;
                row[k] = l;
                if l != 0.0 {
                    let tail = &mut row[k + 1..];
                    for (t, &u) in tail.iter_mut().zip(urow) {
                        *t -= l * u;
                    }
                }
            }
        }
        let mut dmin = f64::INFINITY;
        let mut dmax = 0.0_f64;
        for k in 0..n {
            let d = lu[(k, k)].abs();
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
        let rcond_est = if dmax > 0.0 { dmin / dmax } else { 0.0 };
        Ok(LuFactor { lu, piv, rcond_est })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    /// Cheap reciprocal-condition estimate `min|u_kk| / max|u_kk|`.
    pub fn rcond_estimate(&self) -> f64 {
        self.rcond_est
    }

    pub fn solve_into(&self, b: &mut [f64]) {
        let n = self.dim();
        assert_eq!(b.len(), n, "rhs length");
        for (k, &p) in self.piv.iter().enumerate() {
            b.swap(k, p);
        }
        for k in 0..n {
            let bk = b[k];
            if bk != 0.0 {
                for r in (k + 1)..n {
                    b[r] -= self.lu[(r, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            let row = self.lu.row(k);
            for (c, bc) in b.iter().enumerate().skip(k + 1) {
                s -= row[c] * bc;
            }
            b[k] = s / row[k];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_into(&mut x);
        x
    }

    /// Solve with a matrix right-hand side, column by column.
    pub fn solve_mat(&self, b: &Mat) -> Mat {
        assert_eq!(b.rows(), self.dim(), "rhs rows");
        let mut out = Mat::zeros(b.rows(), b.cols());
        let mut col = vec![0.0; b.rows()];
        for c in 0..b.cols() {
            for r in 0..b.rows() {
                col[r] = b[(r, c)];
            }
            self.solve_into(&mut col);
            for r in 0..b.rows() {
                out[(r, c)] = col[r];
            }
        }
        out
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub struct CholFactor {
    l: Mat,
}

impl CholFactor {
    fn new(a: &Mat) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "Cholesky requires a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let mut l = Mat::zeros(n, n);
        for r in 0..n {
            for c in 0..=r {
                let mut s = a[(r, c)];
                for k in 0..c {
                    s -= l[(r, k)] * l[(c, k)];
                }
                if r == c {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite { step: r, pivot: s });
                    }
                    l[(r, c)] = s.sqrt();
                } else {
                    l[(r, c)] = s / l[(c, c)];
                }
            }
        }
        Ok(CholFactor { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    pub fn solve_into(&self, b: &mut [f64]) {
        let n = self.dim();
        assert_eq!(b.len(), n, "rhs length");
        for r in 0..n {
            let mut s = b[r];
            for c in 0..r {
                s -= self.l[(r, c)] * b[c];
            }
            b[r] = s / self.l[(r, r)];
        }
        for r in (0..n).rev() {
            let mut s = b[r];
            for c in (r + 1)..n {
                s -= self.l[(c, r)] * b[c];
            }
            b[r] = s / self.l[(r, r)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_into(&mut x);
        x
    }

    pub fn solve_mat(&self, b: &Mat) -> Mat {
        let mut out = Mat::zeros(b.rows(), b.cols());
        let mut col = vec![0.0; b.rows()];
        for c in 0..b.cols() {
            for r in 0..b.rows() {
                col[r] = b[(r, c)];
            }
            self.solve_into(&mut col);
            for r in 0..b.rows() {
                out[(r, c)] = col[r];
            }
        }
        out
    }
}

/// Eigendecomposition of a symmetric matrix: `a = vectors * diag(values) * vectors^T`.
pub struct SymEig {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, one per column, aligned with `values`.
    pub vectors: Mat,
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// Accurate to around `1e-12 * ||a||` and entirely dependency-free, which is
/// all the diagnostics need; dimensions stay modest wherever this is called.
pub fn sym_eig(a: &Mat) -> Result<SymEig> {
    let asym = a.max_asymmetry();
    if !a.is_square() || asym > 1e-12 * a.norm_inf().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    let off = |m: &Mat| -> f64 {
        let mut s = 0.0;
        for r in 0..n {
            for c in (r + 1)..n {
                s += m[(r, c)] * m[(r, c)];
            }
        }
        s.sqrt()
    };
    let norm = a.norm_inf().max(f64::MIN_POSITIVE);
    let tol = 1e-14 * norm * (n as f64);
    for _sweep in 0..60 {
        if off(&m) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
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
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (newc, &oldc) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, newc)] = v[(r, oldc)];
        }
    }
    Ok(SymEig { values, vectors })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_and_transpose_agree() {
        let a = mat(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = mat(&[&[7.0, 8.0], &[9.0, 10.0], &[11.0, 12.0]]);
        let c = a.matmul(&b);
        assert_eq!(c[(0, 0)], 58.0);
        assert_eq!(c[(1, 1)], 154.0);
        let c_tn = a.transpose().matmul_tn(&b.transpose().transpose());
        // (A^T)^T B = A B
        for r in 0..2 {
            for c2 in 0..2 {
                assert!((c[(r, c2)] - c_tn[(r, c2)]).abs() < 1e-14);
            }
        }
        let c_nt = a.matmul_nt(&b.transpose());
        for r in 0..2 {
            for c2 in 0..2 {
                assert!((c[(r, c2)] - c_nt[(r, c2)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lu_solves_permutation_system() {
        let a = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let f = a.lu().unwrap();
        let x = f.solve(&[1.0, 2.0]);
        assert_eq!(x, vec![2.0, 1.0]);
    }

    #[test]
    fn lu_detects_singularity() {
        let a = mat(&[&[1.0, 2.0], &[2.0, 4.0]]);
        match a.lu() {
            Err(Error::Singular { .. }) => {}
            Err(other) => panic!("expected singular, got {other:?}"),
            Ok(_) => panic!("expected singular, got a factorization"),
        }
    }

    #[test]
    fn lu_residual_on_random_matrix() {
        let mut rng = crate::problem::SplitMix::new(42);
        let n = 40;
        let a = Mat::from_fn(n, n, |r, c| {
            rng.uniform(-1.0, 1.0) + if r == c { 4.0 } else { 0.0 }
        });
        let b: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x = a.lu().unwrap().solve(&b);
        let mut r = b.clone();
        a.matvec_acc(&x, &mut r, -1.0);
        let bound = 1e-9 * (a.norm_inf() * norm_inf(&x) + norm_inf(&b));
        assert!(norm_inf(&r) <= bound, "residual {} > {}", norm_inf(&r), bound);
    }

    #[test]
    fn cholesky_matches_lu() {
        let b = mat(&[&[2.0, 1.0, 0.0], &[0.5, 3.0, 1.0], &[0.0, 1.0, 2.5]]);
        let a = b.matmul_tn(&b); // B^T B is SPD
        let rhs = [1.0, -2.0, 0.5];
        let x1 = a.cholesky().unwrap().solve(&rhs);
        let x2 = a.lu().unwrap().solve(&rhs);
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = mat(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(matches!(a.cholesky(), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn jacobi_eig_recovers_spectrum() {
        let a = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let eig = sym_eig(&a).unwrap();
        assert!((eig.values[0] + 1.0).abs() < 1e-12);
        assert!((eig.values[1] - 1.0).abs() < 1e-12);

        // Reconstruction A = V D V^T
        let n = 3;
        let b = mat(&[&[4.0, 1.0, -2.0], &[1.0, 3.0, 0.5], &[-2.0, 0.5, 5.0]]);
        let e = sym_eig(&b).unwrap();
        let d = Mat::diag(&e.values);
        let rec = e.vectors.matmul(&d).matmul_nt(&e.vectors);
        for r in 0..n {
            for c in 0..n {
                assert!((rec[(r, c)] - b[(r, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn alloc_guard_trips_on_large_matrices() {
        let result = std::panic::catch_unwind(|| {
            let _g = arm_alloc_guard(8);
            let _small = Mat::zeros(100, 4); // one dim small: fine
            let _big = Mat::zeros(9, 9);
        });
        assert!(result.is_err());
        // Guard is released after drop.
        let _ok = Mat::zeros(64, 64);
    }

    #[test]
    fn mat_serde_roundtrip_is_bit_exact() {
        let a = mat(&[&[0.1 + 0.2, -1.5e-300], &[std::f64::consts::PI, 3.0]]);
        let s = serde_json::to_string(&a).unwrap();
        let b: Mat = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
    }
}
