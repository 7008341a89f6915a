//! Dense complex matrices and state vectors with strict validity invariants.
//!
//! This module is the numerical substrate for the rest of the crate:
//!
//! * [`ComplexMatrix`] — row-major dense matrix over `Complex64`.  Every
//!   constructor rejects NaN/infinite entries, so a value of this type always
//!   holds finite data.
//! * [`StateVector`] — finite complex vector; a dedicated constructor asserts
//!   normalization to within [`STATE_NORM_TOL`].
//! * SVD and Hermitian eigendecomposition backed by `nalgebra`, with
//!   non-convergence surfaced as [`Error::Numerical`] (never silently
//!   replaced by zeros), deterministic ordering (singular values descending,
//!   eigenvalues ascending) and a deterministic eigenvector phase convention.
//! * Multi-system helpers: Kronecker products, partial trace, and tensor
//!   factor permutation for both operators and vectors.
//!
//! Shape errors that depend on runtime data are reported as
//! [`Error::Dimension`]; out-of-bounds element access is a programming error
//! and panics, like indexing a slice.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance within which a [`StateVector`] flagged as normalized must have
/// unit norm.
pub const STATE_NORM_TOL: f64 = 1e-12;

/// Shorthand complex constructor used pervasively in this crate.
#[inline]
pub const fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Frobenius-norm tolerance used by [`ComplexMatrix::eig_hermitian`] when
/// checking that its input is Hermitian.
pub const HERMITICITY_TOL: f64 = 1e-10;

fn check_finite(data: &[Complex64], what: &str) -> Result<()> {
    for (i, z) in data.iter().enumerate() {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::NonFinite(format!("{what}: entry {i} is {z}")));
        }
    }
    Ok(())
}

/// Row-major strides for a mixed-radix index over `dims`.
pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Dense complex matrix, stored row-major.
///
/// Invariant: all entries are finite.  Constructors and deserialization
/// enforce this; arithmetic on finite operands of the sizes supported by this
/// crate preserves it.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Build from row-major data; rejects wrong lengths and non-finite
    /// entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        check_finite(&data, "matrix")?;
        Ok(ComplexMatrix { rows, cols, data })
    }

    /// Build elementwise from a closure.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_vec(rows, cols, data)
    }

    /// Build from nested rows (each inner vector is one row).
    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.into_iter().flatten().collect())
    }

    /// Build from real row-major data.
    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::from_vec(
            rows,
            cols,
            data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        )
    }

    /// Square diagonal matrix from its diagonal.
    pub fn from_diag(diag: &[Complex64]) -> Result<Self> {
        check_finite(diag, "diagonal")?;
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = diag[i];
        }
        Ok(m)
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

    /// Row-major backing slice.
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        debug_assert!(r < self.rows && c < self.cols);
        r * self.cols + c
    }

    /// Element access; panics if out of bounds.
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of bounds");
        self.data[r * self.cols + c]
    }

    /// Set one element; panics if out of bounds or `v` is not finite.
    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of bounds");
        assert!(v.re.is_finite() && v.im.is_finite(), "non-finite assignment");
        let k = self.idx(r, c);
        self.data[k] = v;
    }

    /// Add `v` to one element; panics if out of bounds or `v` is not finite.
    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: Complex64) {
        let cur = self.get(r, c);
        self.set(r, c, cur + v);
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = ComplexMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Apply to a column vector.
    pub fn mul_vec(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if self.cols != v.len() {
            return Err(Error::Dimension(format!(
                "mul_vec: {}x{} * {}-vector",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        Ok(out)
    }

    /// Entrywise sum.
    pub fn add(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip_with(other, |a, b| a + b, "add")
    }

    /// Entrywise difference.
    pub fn sub(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip_with(other, |a, b| a - b, "sub")
    }

    fn zip_with(
        &self,
        other: &ComplexMatrix,
        f: impl Fn(Complex64, Complex64) -> Complex64,
        what: &str,
    ) -> Result<ComplexMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "{what}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Scalar multiple; panics on a non-finite scalar.
    pub fn scale(&self, s: Complex64) -> ComplexMatrix {
        assert!(s.re.is_finite() && s.im.is_finite(), "non-finite scale factor");
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    /// Real scalar multiple; panics on a non-finite scalar.
    pub fn scale_re(&self, s: f64) -> ComplexMatrix {
        self.scale(Complex64::new(s, 0.0))
    }

    /// Transpose (no conjugation).
    pub fn transpose(&self) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> ComplexMatrix {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j].conj();
            }
        }
        out
    }

    /// Trace; panics if the matrix is not square.
    pub fn trace(&self) -> Complex64 {
        assert!(self.is_square(), "trace of a non-square matrix");
        (0..self.rows).map(|i| self.data[i * self.cols + i]).sum()
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &ComplexMatrix) -> ComplexMatrix {
        let (r1, c1, r2, c2) = (self.rows, self.cols, other.rows, other.cols);
        let mut out = ComplexMatrix::zeros(r1 * r2, c1 * c2);
        for i in 0..r1 {
            for j in 0..c1 {
                let a = self.data[i * c1 + j];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                for k in 0..r2 {
                    let dst_row = (i * r2 + k) * out.cols + j * c2;
                    let src_row = k * c2;
                    for l in 0..c2 {
                        out.data[dst_row + l] = a * other.data[src_row + l];
                    }
                }
            }
        }
        out
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Frobenius distance `‖self − other‖_F`.
    pub fn frobenius_distance(&self, other: &ComplexMatrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "frobenius_distance: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt())
    }

    /// Largest entrywise modulus of the difference.
    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "max_abs_diff: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    /// `true` when the Frobenius distance to `other` is at most `tol`.
    pub fn approx_eq(&self, other: &ComplexMatrix, tol: f64) -> bool {
        matches!(self.frobenius_distance(other), Ok(d) if d <= tol)
    }

    /// `true` when `‖self − self†‖_F ≤ tol`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && self.frobenius_distance(&self.dagger()).unwrap() <= tol
    }

    /// `true` when `‖self†·self − I‖_F ≤ tol` (square matrices only).
    pub fn is_unitary(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let g = self.dagger().matmul(self).unwrap();
        g.approx_eq(&ComplexMatrix::identity(self.rows), tol)
    }

    /// Partial trace over the factors *not* listed in `keep`.
    ///
    /// `dims` are the tensor factor dimensions (row-major order, so factor 0
    /// is the most significant index); their product must equal the matrix
    /// size, and `keep` must be strictly increasing.  The surviving factors
    /// keep their relative order.
    pub fn partial_trace(&self, dims: &[usize], keep: &[usize]) -> Result<ComplexMatrix> {
        if !self.is_square() {
            return Err(Error::Dimension("partial_trace: non-square matrix".into()));
        }
        let total: usize = dims.iter().product();
        if total != self.rows {
            return Err(Error::Dimension(format!(
                "partial_trace: dims product {total} != matrix size {}",
                self.rows
            )));
        }
        if keep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Dimension("partial_trace: keep must be strictly increasing".into()));
        }
        if keep.iter().any(|&k| k >= dims.len()) {
            return Err(Error::Dimension("partial_trace: keep index out of range".into()));
        }
        let traced: Vec<usize> = (0..dims.len()).filter(|i| !keep.contains(i)).collect();
        let st = strides(dims);
        let keep_dims: Vec<usize> = keep.iter().map(|&k| dims[k]).collect();
        let keep_total: usize = keep_dims.iter().product();
        let traced_dims: Vec<usize> = traced.iter().map(|&t| dims[t]).collect();
        let traced_total: usize = traced_dims.iter().product();

        // Base offsets of every kept / traced multi-index into the full index.
        let offsets = |sel: &[usize], sel_dims: &[usize], count: usize| -> Vec<usize> {
            let sel_st = strides(sel_dims);
            (0..count)
                .map(|flat| {
                    sel.iter()
                        .zip(sel_st.iter())
                        .map(|(&sys, &s)| (flat / s % dims[sys]) * st[sys])
                        .sum()
                })
                .collect()
        };
        let keep_off = offsets(keep, &keep_dims, keep_total);
        let traced_off = offsets(&traced, &traced_dims, traced_total);

        let mut out = ComplexMatrix::zeros(keep_total, keep_total);
        for (a, &ra) in keep_off.iter().enumerate() {
            for (b, &rb) in keep_off.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for &t in &traced_off {
                    acc += self.data[(ra + t) * self.cols + (rb + t)];
                }
                out.data[a * keep_total + b] = acc;
            }
        }
        Ok(out)
    }

    /// Reorder tensor factors of a square operator.
    ///
    /// `perm[p] = s` places old factor `s` at new position `p`; `perm` must be
    /// a permutation of `0..dims.len()`.  Rows and columns are permuted
    /// consistently, i.e. the result is `P · self · P†` for the corresponding
    /// basis permutation `P`.
    pub fn permute_systems(&self, dims: &[usize], perm: &[usize]) -> Result<ComplexMatrix> {
        if !self.is_square() {
            return Err(Error::Dimension("permute_systems: non-square matrix".into()));
        }
        let map = index_permutation(dims, perm, self.rows)?;
        let mut out = ComplexMatrix::zeros(self.rows, self.cols);
        for (new_r, &old_r) in map.iter().enumerate() {
            for (new_c, &old_c) in map.iter().enumerate() {
                out.data[new_r * self.cols + new_c] = self.data[old_r * self.cols + old_c];
            }
        }
        Ok(out)
    }

    /// Singular value decomposition `self = U · diag(s) · V†` (economy size,
    /// `k = min(rows, cols)`).
    ///
    /// Singular values are returned in descending order.  Computed by
    /// one-sided Jacobi rotations, which stay accurate for small singular
    /// values and degenerate spectra; if the sweeps fail to converge the
    /// error is surfaced as [`Error::Numerical`].
    pub fn svd(&self) -> Result<Svd> {
        // Work on the tall orientation so the rotated side is the short one.
        if self.rows < self.cols {
            let sd = self.dagger().svd()?;
            return Ok(Svd {
                u: sd.v_dagger.dagger(),
                singular_values: sd.singular_values,
                v_dagger: sd.u.dagger(),
            });
        }
        let (m, n) = (self.rows, self.cols);
        let mut a = self.clone();
        let mut v = ComplexMatrix::identity(n);
        let tol = 1e-14;
        // Rotations preserve the Frobenius norm, so this floor is static.
        // Columns below it are roundoff debris of zero singular values and
        // must be flushed, or they stay self-correlated at their own scale
        // and the relative convergence test never passes.
        let zero_floor_sq = self
            .data
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .max(1e-300)
            * 1e-28;
        let mut converged = false;
        for _ in 0..64 {
            for q in 0..n {
                let colsq: f64 = (0..m).map(|r| a.data[r * n + q].norm_sqr()).sum();
                if colsq > 0.0 && colsq <= zero_floor_sq {
                    for r in 0..m {
                        a.data[r * n + q] = Complex64::new(0.0, 0.0);
                    }
                }
            }
            let mut rotated = false;
            for p in 0..n {
                for q in (p + 1)..n {
                    let mut app = 0.0f64;
                    let mut aqq = 0.0f64;
                    let mut apq = Complex64::new(0.0, 0.0);
                    for r in 0..m {
                        let xp = a.data[r * n + p];
                        let xq = a.data[r * n + q];
                        app += xp.norm_sqr();
                        aqq += xq.norm_sqr();
                        apq += xp.conj() * xq;
                    }
                    let g = apq.norm();
                    if g <= tol * (app * aqq).sqrt() || g < 1e-300 {
                        continue;
                    }
                    rotated = true;
                    // Phase the q-column so the 2x2 Gram block is real, then
                    // apply the classical Jacobi rotation that annihilates it.
                    let phase = apq / g;
                    let zeta = (aqq - app) / (2.0 * g);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    let jqp = phase.conj() * (-s);
                    let jqq = phase.conj() * c;
                    for r in 0..m {
                        let xp = a.data[r * n + p];
                        let xq = a.data[r * n + q];
                        a.data[r * n + p] = xp * c + xq * jqp;
                        a.data[r * n + q] = xp * s + xq * jqq;
                    }
                    for r in 0..n {
                        let xp = v.data[r * n + p];
                        let xq = v.data[r * n + q];
                        v.data[r * n + p] = xp * c + xq * jqp;
                        v.data[r * n + q] = xp * s + xq * jqq;
                    }
                }
            }
            if !rotated {
                converged = true;
                break;
            }
        }
        if !converged {
            // Rotations can dither at the roundoff floor; accept if the
            // columns are in fact orthogonal to well below our tolerances.
            let mut worst = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    let mut app = 0.0f64;
                    let mut aqq = 0.0f64;
                    let mut apq = Complex64::new(0.0, 0.0);
                    for r in 0..m {
                        let xp = a.data[r * n + p];
                        let xq = a.data[r * n + q];
                        app += xp.norm_sqr();
                        aqq += xq.norm_sqr();
                        apq += xp.conj() * xq;
                    }
                    if app * aqq > 0.0 {
                        worst = worst.max(apq.norm() / (app * aqq).sqrt());
                    }
                }
            }
            if worst > 1e-12 {
                return Err(Error::Numerical("SVD did not converge".into()));
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        let norms: Vec<f64> = (0..n)
            .map(|j| (0..m).map(|r| a.data[r * n + j].norm_sqr()).sum::<f64>().sqrt())
            .collect();
        order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).expect("finite norms"));
        let singular_values: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
        let mut um = ComplexMatrix::zeros(m, n);
        let mut vtm = ComplexMatrix::zeros(n, n);
        for (new, &old) in order.iter().enumerate() {
            if norms[old] > 0.0 {
                for r in 0..m {
                    um.data[r * n + new] = a.data[r * n + old] / norms[old];
                }
            }
            for c in 0..n {
                vtm.data[new * n + c] = v.data[c * n + old].conj();
            }
        }
        // Exactly-zero columns carry no direction; synthesize orthonormal
        // fill-ins from the canonical basis so U always has orthonormal
        // columns.
        for (new, &old) in order.iter().enumerate() {
            if norms[old] > 0.0 {
                continue;
            }
            let mut filled = false;
            for cand in 0..m {
                let mut col = vec![Complex64::new(0.0, 0.0); m];
                col[cand] = Complex64::new(1.0, 0.0);
                for _ in 0..2 {
                    for j in 0..n {
                        if j == new {
                            continue;
                        }
                        let ip: Complex64 = (0..m)
                            .map(|r| um.data[r * n + j].conj() * col[r])
                            .sum();
                        for (r, item) in col.iter_mut().enumerate() {
                            *item -= ip * um.data[r * n + j];
                        }
                    }
                }
                let nrm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if nrm > 1e-6 {
                    for r in 0..m {
                        um.data[r * n + new] = col[r] / nrm;
                    }
                    filled = true;
                    break;
                }
            }
            if !filled {
                return Err(Error::Numerical("SVD basis completion failed".into()));
            }
        }
        Ok(Svd {
            u: um,
            singular_values,
            v_dagger: vtm,
        })
    }

    /// Eigendecomposition of a Hermitian matrix.
    ///
    /// Requires `‖self − self†‖_F < `[`HERMITICITY_TOL`]; eigenvalues are
    /// returned in ascending order with a deterministic eigenvector phase
    /// (the largest-modulus entry of each eigenvector is made real positive).
    pub fn eig_hermitian(&self) -> Result<HermitianEigen> {
        if !self.is_square() {
            return Err(Error::Dimension("eig_hermitian: non-square matrix".into()));
        }
        let dev = self.frobenius_distance(&self.dagger()).unwrap();
        if dev >= HERMITICITY_TOL {
            return Err(Error::Validation(format!(
                "eig_hermitian: matrix is not Hermitian (deviation {dev:.3e})"
            )));
        }
        // Work on the exactly-Hermitian average to shield the solver from the
        // sub-tolerance asymmetry allowed above.
        let sym = self.add(&self.dagger()).unwrap().scale_re(0.5);
        let eig = nalgebra::linalg::SymmetricEigen::try_new(sym.to_nalgebra(), f64::EPSILON, 100_000)
            .ok_or_else(|| Error::Numerical("Hermitian eigensolver did not converge".into()))?;
        let n = self.rows;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .expect("eigenvalues are finite")
        });
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vecs = ComplexMatrix::zeros(n, n);
        for (new, &old) in order.iter().enumerate() {
            // Deterministic phase: rotate so the largest-modulus entry is
            // real positive.
            let mut best = 0usize;
            let mut best_mod = -1.0f64;
            for r in 0..n {
                let m = eig.eigenvectors[(r, old)].norm();
                if m > best_mod {
                    best_mod = m;
                    best = r;
                }
            }
            let pivot = eig.eigenvectors[(best, old)];
            let phase = if pivot.norm() > 0.0 {
                pivot.conj() / pivot.norm()
            } else {
                Complex64::new(1.0, 0.0)
            };
            for r in 0..n {
                vecs.data[r * n + new] = eig.eigenvectors[(r, old)] * phase;
            }
        }
        Ok(HermitianEigen {
            eigenvalues,
            eigenvectors: vecs,
        })
    }

    /// Column `c` as a vector.
    pub fn column(&self, c: usize) -> Vec<Complex64> {
        assert!(c < self.cols, "column {c} out of bounds");
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    /// Row `r` as a vector.
    pub fn row(&self, r: usize) -> Vec<Complex64> {
        assert!(r < self.rows, "row {r} out of bounds");
        self.data[r * self.cols..(r + 1) * self.cols].to_vec()
    }

    /// Determinant; panics if the matrix is not square.
    pub fn det(&self) -> Complex64 {
        assert!(self.is_square(), "determinant of a non-square matrix");
        self.to_nalgebra().determinant()
    }

    fn to_nalgebra(&self) -> nalgebra::DMatrix<Complex64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

/// Map `new flat index -> old flat index` for a tensor factor permutation.
fn index_permutation(dims: &[usize], perm: &[usize], expect_total: usize) -> Result<Vec<usize>> {
    let total: usize = dims.iter().product();
    if total != expect_total {
        return Err(Error::Dimension(format!(
            "permutation: dims product {total} != size {expect_total}"
        )));
    }
    let mut seen = vec![false; dims.len()];
    if perm.len() != dims.len() || perm.iter().any(|&p| p >= dims.len() || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::Dimension("permutation: not a permutation of the factors".into()));
    }
    let old_st = strides(dims);
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let new_st = strides(&new_dims);
    let mut map = vec![0usize; total];
    for (new_flat, slot) in map.iter_mut().enumerate() {
        let mut old_flat = 0;
        for (pos, &src) in perm.iter().enumerate() {
            let digit = new_flat / new_st[pos] % new_dims[pos];
            old_flat += digit * old_st[src];
        }
        *slot = old_flat;
    }
    Ok(map)
}

/// Result of [`ComplexMatrix::svd`]: `m = u · diag(singular_values) · v_dagger`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: ComplexMatrix,
    /// Descending, non-negative.
    pub singular_values: Vec<f64>,
    pub v_dagger: ComplexMatrix,
}

impl Svd {
    /// Numerical rank: number of singular values above `tol` (absolute).
    pub fn rank(&self, tol: f64) -> usize {
        self.singular_values.iter().filter(|&&s| s > tol).count()
    }

    /// Reassemble `u · diag(s) · v_dagger`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let k = self.singular_values.len();
        let mut scaled = self.u.clone();
        for r in 0..scaled.rows() {
            for c in 0..k {
                let v = scaled.get(r, c) * self.singular_values[c];
                scaled.set(r, c, v);
            }
        }
        scaled.matmul(&self.v_dagger).expect("shapes agree by construction")
    }
}

/// Result of [`ComplexMatrix::eig_hermitian`].
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors as columns, phase-normalized.
    pub eigenvectors: ComplexMatrix,
}

impl HermitianEigen {
    /// Reassemble `V · diag(λ) · V†`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let n = self.eigenvalues.len();
        let mut scaled = self.eigenvectors.clone();
        for r in 0..n {
            for c in 0..n {
                let v = scaled.get(r, c) * self.eigenvalues[c];
                scaled.set(r, c, v);
            }
        }
        scaled
            .matmul(&self.eigenvectors.dagger())
            .expect("shapes agree by construction")
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Serialize for ComplexMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixJson {
            rows: self.rows,
            cols: self.cols,
            re: self.data.iter().map(|z| z.re).collect(),
            im: self.data.iter().map(|z| z.im).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = MatrixJson::deserialize(d)?;
        if raw.re.len() != raw.rows * raw.cols || raw.im.len() != raw.rows * raw.cols {
            return Err(serde::de::Error::custom(format!(
                "matrix arrays have length {}/{}, expected {}",
                raw.re.len(),
                raw.im.len(),
                raw.rows * raw.cols
            )));
        }
        let data: Vec<Complex64> = raw
            .re
            .iter()
            .zip(&raw.im)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect();
        ComplexMatrix::from_vec(raw.rows, raw.cols, data).map_err(serde::de::Error::custom)
    }
}

/// Finite complex vector representing a pure state (or an unnormalized branch
/// of one).
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    data: Vec<Complex64>,
}

impl StateVector {
    /// Build from amplitudes; rejects empty and non-finite data.
    pub fn new(data: Vec<Complex64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Dimension("empty state vector".into()));
        }
        check_finite(&data, "state vector")?;
        Ok(StateVector { data })
    }

    /// Build a state that is required to be normalized to within
    /// [`STATE_NORM_TOL`].
    pub fn new_normalized(data: Vec<Complex64>) -> Result<Self> {
        let v = Self::new(data)?;
        let n = v.norm();
        if (n - 1.0).abs() > STATE_NORM_TOL {
            return Err(Error::Validation(format!(
                "state flagged normalized has norm {n:.15}"
            )));
        }
        Ok(v)
    }

    /// Computational basis state `|k⟩` in dimension `dim`.
    pub fn basis(dim: usize, k: usize) -> Self {
        assert!(k < dim, "basis index {k} out of range for dim {dim}");
        let mut data = vec![Complex64::new(0.0, 0.0); dim];
        data[k] = Complex64::new(1.0, 0.0);
        StateVector { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, i: usize) -> Complex64 {
        self.data[i]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Unit-norm copy; errors when the norm is numerically zero.
    pub fn normalized(&self) -> Result<StateVector> {
        let n = self.norm();
        if n < 1e-15 {
            return Err(Error::Numerical("cannot normalize a zero vector".into()));
        }
        Ok(StateVector {
            data: self.data.iter().map(|&z| z / n).collect(),
        })
    }

    /// Inner product `⟨self|other⟩` (conjugate-linear in `self`).
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "inner: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Tensor product `self ⊗ other`.
    pub fn kron(&self, other: &StateVector) -> StateVector {
        let mut data = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.data {
            for b in &other.data {
                data.push(a * b);
            }
        }
        StateVector { data }
    }

    /// Outer product `|self⟩⟨other|`.
    pub fn outer(&self, other: &StateVector) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim(), other.dim());
        for i in 0..self.dim() {
            for j in 0..other.dim() {
                out.data[i * other.dim() + j] = self.data[i] * other.data[j].conj();
            }
        }
        out
    }

    /// Density operator `|self⟩⟨self|`.
    pub fn to_density(&self) -> ComplexMatrix {
        self.outer(self)
    }

    /// Reduced density operator on the `keep` factors (strictly increasing
    /// positions into `dims`), without materializing the full outer product.
    pub fn reduced_density(&self, dims: &[usize], keep: &[usize]) -> Result<ComplexMatrix> {
        let total: usize = dims.iter().product();
        if total != self.dim() {
            return Err(Error::Dimension(format!(
                "reduced_density: dims product {total} != state dim {}",
                self.dim()
            )));
        }
        if keep.windows(2).any(|w| w[0] >= w[1]) || keep.iter().any(|&k| k >= dims.len()) {
            return Err(Error::Dimension(
                "reduced_density: keep positions must be strictly increasing and in range".into(),
            ));
        }
        let st = strides(dims);
        let keep_dims: Vec<usize> = keep.iter().map(|&k| dims[k]).collect();
        let rest: Vec<usize> = (0..dims.len()).filter(|p| !keep.contains(p)).collect();
        let rest_dims: Vec<usize> = rest.iter().map(|&p| dims[p]).collect();
        let offsets = |positions: &[usize], pos_dims: &[usize]| -> Vec<usize> {
            let count: usize = pos_dims.iter().product();
            (0..count)
                .map(|mut idx| {
                    let mut off = 0;
                    for (j, &p) in positions.iter().enumerate().rev() {
                        off += (idx % pos_dims[j]) * st[p];
                        idx /= pos_dims[j];
                    }
                    off
                })
                .collect()
        };
        let keep_off = offsets(keep, &keep_dims);
        let rest_off = offsets(&rest, &rest_dims);
        let k = keep_off.len();
        let mut out = ComplexMatrix::zeros(k, k);
        for (a, &ka) in keep_off.iter().enumerate() {
            for (b, &kb) in keep_off.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for &j in &rest_off {
                    acc += self.data[ka + j] * self.data[kb + j].conj();
                }
                out.set(a, b, acc);
            }
        }
        Ok(out)
    }

    /// Apply a matrix: `m |self⟩`.
    pub fn apply(&self, m: &ComplexMatrix) -> Result<StateVector> {
        Ok(StateVector {
            data: m.mul_vec(&self.data)?,
        })
    }

    /// Reorder tensor factors; same `perm` convention as
    /// [`ComplexMatrix::permute_systems`].
    pub fn permute_systems(&self, dims: &[usize], perm: &[usize]) -> Result<StateVector> {
        let map = index_permutation(dims, perm, self.dim())?;
        let mut data = vec![Complex64::new(0.0, 0.0); self.dim()];
        for (new, &old) in map.iter().enumerate() {
            data[new] = self.data[old];
        }
        Ok(StateVector { data })
    }
}

#[derive(Serialize, Deserialize)]
struct StateJson {
    dim: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Serialize for StateVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StateJson {
            dim: self.dim(),
            re: self.data.iter().map(|z| z.re).collect(),
            im: self.data.iter().map(|z| z.im).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StateVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = StateJson::deserialize(d)?;
        if raw.re.len() != raw.dim || raw.im.len() != raw.dim {
            return Err(serde::de::Error::custom("state arrays do not match dim"));
        }
        let data = raw
            .re
            .iter()
            .zip(&raw.im)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect();
        StateVector::new(data).map_err(serde::de::Error::custom)
    }
}

/// Unnormalized maximally entangled vector `Σ_k |k⟩|k⟩` on `dim ⊗ dim`.
pub fn unnormalized_bell(dim: usize) -> StateVector {
    let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
    for k in 0..dim {
        data[k * dim + k] = Complex64::new(1.0, 0.0);
    }
    StateVector { data }
}
