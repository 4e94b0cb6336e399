use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{contract, Error, Result};

pub type C64 = Complex64;

/// Dense complex matrix in row-major order.
#[derive(Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for CMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for z in self.row(i) {
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(contract(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_real(rows: usize, cols: usize, re: &[f64]) -> Result<Self> {
        Self::from_vec(rows, cols, re.iter().map(|&r| C64::new(r, 0.0)).collect())
    }

    pub fn diag(values: &[C64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
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
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Standard complex product `self · other`.
    pub fn matmul(&self, other: &CMat) -> Result<CMat> {
        if self.cols != other.rows {
            return Err(contract(format!(
                "matmul of {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = CMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn conj_transpose(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j].conj();
            }
        }
        out
    }

    /// `self · x`, panicking on a length mismatch.
    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    #[inline]
    pub fn mul_vec_into(&self, x: &[C64], out: &mut [C64]) {
        assert_eq!(x.len(), self.cols, "mul_vec: vector length");
        assert_eq!(out.len(), self.rows, "mul_vec: output length");
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            let mut acc = C64::new(0.0, 0.0);
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o = acc;
        }
    }

    /// `self^H · r` without forming the adjoint.
    pub fn adjoint_mul_vec(&self, r: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.cols];
        self.adjoint_mul_vec_into(r, &mut out);
        out
    }

    #[inline]
    pub fn adjoint_mul_vec_into(&self, r: &[C64], out: &mut [C64]) {
        assert_eq!(r.len(), self.rows, "adjoint_mul_vec: vector length");
        assert_eq!(out.len(), self.cols, "adjoint_mul_vec: output length");
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        for (ri, row) in r.iter().zip(self.data.chunks_exact(self.cols)) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * ri;
            }
        }
    }

    /// Gram matrix `self^H · self`.
    pub fn gram(&self) -> CMat {
        let n = self.cols;
        let mut g = CMat::zeros(n, n);
        for row in self.data.chunks_exact(n) {
            for i in 0..n {
                let ai = row[i].conj();
                for j in i..n {
                    g.data[i * n + j] += ai * row[j];
                }
            }
        }
        for i in 0..n {
            g.data[i * n + i].im = 0.0;
            for j in 0..i {
                g.data[i * n + j] = g.data[j * n + i].conj();
            }
        }
        g
    }

    pub fn frobenius_norm2(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&self, s: C64) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn sub(&self, other: &CMat) -> Result<CMat> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &CMat) -> Result<CMat> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &CMat, f: impl Fn(C64, C64) -> C64) -> Result<CMat> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(contract(format!(
                "shape {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Copy with column `j` removed.
    pub fn without_column(&self, j: usize) -> CMat {
        CMat::from_fn(self.rows, self.cols - 1, |r, c| {
            self.get(r, if c < j { c } else { c + 1 })
        })
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<C64>) -> CMat {
        CMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

/// Lower-triangular Cholesky factor `A = L L^H` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: CMat,
    min_pivot: f64,
    max_pivot: f64,
}

impl Cholesky {
    /// Factorizes `a`; fails with [`Error::Singular`] on a non-positive pivot.
    pub fn new(a: &CMat) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(contract("cholesky of a non-square matrix"));
        }
        let mut l = CMat::zeros(n, n);
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot: f64 = 0.0;
        for j in 0..n {
            let mut d = a.get(j, j).re;
            for k in 0..j {
                d -= l.get(j, k).norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Singular { pivot: d.max(0.0) });
            }
            min_pivot = min_pivot.min(d);
            max_pivot = max_pivot.max(d);
            let ljj = d.sqrt();
            l.set(j, j, C64::new(ljj, 0.0));
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k).conj();
                }
                l.set(i, j, s / ljj);
            }
        }
        Ok(Self {
            l,
            min_pivot,
            max_pivot,
        })
    }

    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    pub fn max_pivot(&self) -> f64 {
        self.max_pivot
    }

    pub fn factor(&self) -> &CMat {
        &self.l
    }

    /// Solves `A x = b`.
    pub fn solve_vec(&self, b: &[C64]) -> Vec<C64> {
        let n = self.l.rows();
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            let row = self.l.row(i);
            for k in 0..i {
                s -= row[k] * x[k];
            }
            x[i] = s / row[i].re;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l.get(k, i).conj() * x[k];
            }
            x[i] = s / self.l.get(i, i).re;
        }
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve_mat(&self, b: &CMat) -> CMat {
        let mut out = CMat::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let col = self.solve_vec(&b.column(j));
            for (i, v) in col.into_iter().enumerate() {
                out.set(i, j, v);
            }
        }
        out
    }

    pub fn inverse(&self) -> CMat {
        self.solve_mat(&CMat::identity(self.l.rows()))
    }
}

/// Below this ratio of smallest to largest Cholesky pivot of `H^H H` the
/// pseudo-inverse is recomputed from an SVD.
pub const GRAM_PIVOT_RATIO: f64 = 1e-6;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Moore-Penrose pseudo-inverse `(H^H H)^{-1} H^H` of a tall matrix.
pub fn pseudo_inverse(h: &CMat) -> Result<CMat> {
    if h.rows() < h.cols() {
        return Err(contract(format!(
            "pseudo_inverse needs rows >= cols, got {}x{}",
            h.rows(),
            h.cols()
        )));
    }
    if let Ok(ch) = Cholesky::new(&h.gram()) {
        if ch.min_pivot() >= GRAM_PIVOT_RATIO * ch.max_pivot() {
            return Ok(ch.solve_mat(&h.conj_transpose()));
        }
    }
    svd_pseudo_inverse(h)
}

fn svd_pseudo_inverse(h: &CMat) -> Result<CMat> {
    let svd = h.to_nalgebra().svd(true, true);
    let s = &svd.singular_values;
    let s_max = s.iter().cloned().fold(0.0, f64::max);
    let s_min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(s_min > RANK_TOLERANCE * s_max) {
        return Err(Error::Singular { pivot: s_min });
    }
    let u = svd.u.as_ref().expect("svd computed u");
    let v_t = svd.v_t.as_ref().expect("svd computed v_t");
    // pinv = V diag(1/s) U^H
    let k = s.len();
    let mut out = CMat::zeros(h.cols(), h.rows());
    for i in 0..h.cols() {
        for j in 0..h.rows() {
            let mut acc = C64::new(0.0, 0.0);
            for l in 0..k {
                acc += v_t[(l, i)].conj() * u[(j, l)].conj() / s[l];
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// Least-squares solution `H^+ y` without forming the pseudo-inverse when
/// the normal equations are well conditioned.
pub fn least_squares(h: &CMat, y: &[C64]) -> Result<Vec<C64>> {
    if h.rows() < h.cols() {
        return Err(contract("least_squares needs rows >= cols"));
    }
    if let Ok(ch) = Cholesky::new(&h.gram()) {
        if ch.min_pivot() >= GRAM_PIVOT_RATIO * ch.max_pivot() {
            return Ok(ch.solve_vec(&h.adjoint_mul_vec(y)));
        }
    }
    Ok(svd_pseudo_inverse(h)?.mul_vec(y))
}

/// Singular values in descending order.
pub fn svd_values(h: &CMat) -> Vec<f64> {
    if h.rows() == 0 || h.cols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = h.to_nalgebra().singular_values().iter().cloned().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Eigen-decomposition `A = U diag(λ) U^H` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns.
    pub vectors: CMat,
}

pub fn hermitian_eigen(a: &CMat) -> Result<HermitianEigen> {
    if a.rows() != a.cols() {
        return Err(contract("eigen-decomposition of a non-square matrix"));
    }
    let eig = nalgebra::SymmetricEigen::new(a.to_nalgebra());
    Ok(HermitianEigen {
        values: eig.eigenvalues.iter().cloned().collect(),
        vectors: CMat::from_nalgebra(&eig.eigenvectors),
    })
}

/// Equivalent real-valued system `[[Re H, -Im H], [Im H, Re H]]`, `[Re y; Im y]`.
pub fn real_embed(h: &CMat, y: &[C64]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if y.len() != h.rows() {
        return Err(contract(format!(
            "observation of length {} for {} receive antennas",
            y.len(),
            h.rows()
        )));
    }
    let (nr, nt) = (h.rows(), h.cols());
    let mut m = DMatrix::zeros(2 * nr, 2 * nt);
    for i in 0..nr {
        for j in 0..nt {
            let z = h.get(i, j);
            m[(i, j)] = z.re;
            m[(i, j + nt)] = -z.im;
            m[(i + nr, j)] = z.im;
            m[(i + nr, j + nt)] = z.re;
        }
    }
    let v = DVector::from_iterator(2 * nr, y.iter().map(|z| z.re).chain(y.iter().map(|z| z.im)));
    Ok((m, v))
}

/// Squared Euclidean norm of a complex vector.
#[inline]
pub fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}
