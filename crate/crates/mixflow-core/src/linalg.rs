//! Dense small-matrix kernels and a banded LU for the implicit step.
//!
//! The pointwise mixture matrices are at most (n-1)x(n-1) with n <= 8 species,
//! so the eigen/determinant routines favor robustness over speed: Householder
//! tridiagonalization followed by implicit-shift QL for symmetric eigenvalues,
//! partially pivoted LU for determinants and tiny solves, and a LAPACK-style
//! banded LU (column storage with fill-in rows) for the coupled time step.

use crate::scalar::Real;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is singular at pivot {0}")]
    Singular(usize),
    #[error("QL eigenvalue iteration failed to converge")]
    EigenNoConvergence,
    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S> {
    n: usize,
    data: Vec<S>,
}

impl<S: Real> Mat<S> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![S::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n));
        Self {
            n,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> S>(n: usize, mut f: F) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self::from_fn(self.n, |i, j| {
            (0..self.n).map(|k| self[(i, k)] * other[(k, j)]).sum()
        })
    }

    pub fn apply(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self[(i, j)] * x[j]).sum())
            .collect()
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |a, &v| a.max(v.abs()))
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self::from_fn(self.n, |i, j| self[(i, j)] - other[(i, j)])
    }

    pub fn scale(&self, s: S) -> Self {
        Self::from_fn(self.n, |i, j| self[(i, j)] * s)
    }

    /// Largest |A_ij - A_ji|.
    pub fn asymmetry(&self) -> S {
        let mut worst = S::zero();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Determinant by partially pivoted LU. Returns 0 for a singular matrix.
    pub fn det_lu(&self) -> S {
        let n = self.n;
        let mut a = self.clone();
        let mut det = S::one();
        for k in 0..n {
            let mut p = k;
            for i in (k + 1)..n {
                if a[(i, k)].abs() > a[(p, k)].abs() {
                    p = i;
                }
            }
            if a[(p, k)] == S::zero() {
                return S::zero();
            }
            if p != k {
                for j in 0..n {
                    let t = a[(k, j)];
                    a[(k, j)] = a[(p, j)];
                    a[(p, j)] = t;
                }
                det = -det;
            }
            det *= a[(k, k)];
            for i in (k + 1)..n {
                let m = a[(i, k)] / a[(k, k)];
                for j in (k + 1)..n {
                    let upd = m * a[(k, j)];
                    a[(i, j)] -= upd;
                }
            }
        }
        det
    }

    /// Solve A x = b by partially pivoted LU (small systems only).
    pub fn solve(&self, b: &[S]) -> Result<Vec<S>, LinalgError> {
        let n = self.n;
        let mut a = self.clone();
        let mut x = b.to_vec();
        for k in 0..n {
            let mut p = k;
            for i in (k + 1)..n {
                if a[(i, k)].abs() > a[(p, k)].abs() {
                    p = i;
                }
            }
            if a[(p, k)] == S::zero() {
                return Err(LinalgError::Singular(k));
            }
            if p != k {
                for j in 0..n {
                    let t = a[(k, j)];
                    a[(k, j)] = a[(p, j)];
                    a[(p, j)] = t;
                }
                x.swap(k, p);
            }
            for i in (k + 1)..n {
                let m = a[(i, k)] / a[(k, k)];
                for j in (k + 1)..n {
                    let upd = m * a[(k, j)];
                    a[(i, j)] -= upd;
                }
                let upd = m * x[k];
                x[i] -= upd;
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s = s - a[(i, j)] * x[j];
            }
            x[i] = s / a[(i, i)];
        }
        Ok(x)
    }

    /// Cholesky factor check: `Some(true)` iff the matrix is symmetric
    /// positive definite (within `sym_tol` of symmetric).
    pub fn is_spd(&self, sym_tol: S) -> bool {
        if self.asymmetry() > sym_tol {
            return false;
        }
        self.cholesky().is_ok()
    }

    /// Lower-triangular Cholesky factor of an SPD matrix.
    pub fn cholesky(&self) -> Result<Mat<S>, LinalgError> {
        let n = self.n;
        let mut l = Mat::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if s <= S::zero() {
                        return Err(LinalgError::NotPositiveDefinite(i));
                    }
                    l[(i, j)] = s.sqrt();
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Ok(l)
    }

    /// Eigenvalues of a symmetric matrix, ascending. Householder
    /// tridiagonalization followed by implicit-shift QL.
    pub fn sym_eigenvalues(&self) -> Result<Vec<S>, LinalgError> {
        let (d, e) = self.householder_tridiag();
        tridiag_eigenvalues(d, e)
    }

    /// Smallest eigenvalue of a symmetric matrix.
    pub fn sym_eigmin(&self) -> Result<S, LinalgError> {
        Ok(self.sym_eigenvalues()?[0])
    }

    /// Reduce a symmetric matrix to tridiagonal form.
    /// Returns (diagonal, subdiagonal) with `e[0] = 0`.
    fn householder_tridiag(&self) -> (Vec<S>, Vec<S>) {
        let n = self.n;
        let mut a = self.clone();
        let mut d = vec![S::zero(); n];
        let mut e = vec![S::zero(); n];
        for i in (1..n).rev() {
            let l = i - 1;
            let mut h = S::zero();
            if l > 0 {
                let mut scale = S::zero();
                for k in 0..=l {
                    scale += a[(i, k)].abs();
                }
                if scale == S::zero() {
                    e[i] = a[(i, l)];
                } else {
                    for k in 0..=l {
                        let v = a[(i, k)] / scale;
                        a[(i, k)] = v;
                        h += v * v;
                    }
                    let f = a[(i, l)];
                    let g = if f >= S::zero() { -h.sqrt() } else { h.sqrt() };
                    e[i] = scale * g;
                    h -= f * g;
                    a[(i, l)] = f - g;
                    let mut fsum = S::zero();
                    for j in 0..=l {
                        let mut g2 = S::zero();
                        for k in 0..=j {
                            g2 += a[(j, k)] * a[(i, k)];
                        }
                        for k in (j + 1)..=l {
                            g2 += a[(k, j)] * a[(i, k)];
                        }
                        e[j] = g2 / h;
                        fsum += e[j] * a[(i, j)];
                    }
                    let hh = fsum / (h + h);
                    for j in 0..=l {
                        let f2 = a[(i, j)];
                        let g2 = e[j] - hh * f2;
                        e[j] = g2;
                        for k in 0..=j {
                            let upd = f2 * e[k] + g2 * a[(i, k)];
                            a[(j, k)] -= upd;
                        }
                    }
                }
            } else {
                e[i] = a[(i, l)];
            }
            d[i] = h;
        }
        for i in 0..n {
            d[i] = a[(i, i)];
        }
        e[0] = S::zero();
        (d, e)
    }
}

impl<S> std::ops::Index<(usize, usize)> for Mat<S> {
    type Output = S;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.n + j]
    }
}

impl<S> std::ops::IndexMut<(usize, usize)> for Mat<S> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.n + j]
    }
}

fn hypot<S: Real>(a: S, b: S) -> S {
    let (a, b) = (a.abs(), b.abs());
    if a > b {
        let r = b / a;
        a * (S::one() + r * r).sqrt()
    } else if b != S::zero() {
        let r = a / b;
        b * (S::one() + r * r).sqrt()
    } else {
        S::zero()
    }
}

/// Implicit-shift QL sweep on a symmetric tridiagonal matrix.
/// `d` is the diagonal, `e` the subdiagonal with `e[0]` unused.
fn tridiag_eigenvalues<S: Real>(mut d: Vec<S>, mut e: Vec<S>) -> Result<Vec<S>, LinalgError> {
    let n = d.len();
    if n == 0 {
        return Ok(d);
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = S::zero();
    let eps = S::epsilon();
    for l in 0..n {
        let mut iter = 0usize;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= eps * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(LinalgError::EigenNoConvergence);
            }
            let mut g = (d[l + 1] - d[l]) / (S::of(2.0) * e[l]);
            let mut r = hypot(g, S::one());
            let sign_r = if g >= S::zero() { r.abs() } else { -r.abs() };
            g = d[m] - d[l] + e[l] / (g + sign_r);
            let mut s = S::one();
            let mut c = S::one();
            let mut p = S::zero();
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = hypot(f, g);
                e[i + 1] = r;
                if r == S::zero() {
                    d[i + 1] -= p;
                    e[m] = S::zero();
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                f = (d[i] - g) * s + S::of(2.0) * c * b;
                p = s * f;
                d[i + 1] = g + p;
                g = c * f - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = S::zero();
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(d)
}

/// Banded matrix in LAPACK-style column storage with `kl` extra fill-in rows
/// for partial pivoting. Entry (i, j) is stored at `ab[kl + ku + i - j][j]`.
#[derive(Debug, Clone)]
pub struct Banded<S> {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<S>, // (2*kl + ku + 1) rows * n cols, row-major over the band rows
}

impl<S: Real> Banded<S> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            ab: vec![S::zero(); (2 * kl + ku + 1) * n],
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i + self.ku + self.kl >= j && j + self.kl >= i, "({i},{j}) outside band");
        (self.kl + self.ku + i - j) * self.n + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.ab[self.slot(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        let s = self.slot(i, j);
        self.ab[s] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: S) {
        let s = self.slot(i, j);
        self.ab[s] += v;
    }

    /// In-place banded LU with partial pivoting (unblocked dgbtrf).
    pub fn lu_factor(mut self) -> Result<BandedLu<S>, LinalgError> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = 0usize;
            let mut pmax = self.get(j, j).abs();
            for ii in 1..=km {
                let v = self.get(j + ii, j).abs();
                if v > pmax {
                    pmax = v;
                    p = ii;
                }
            }
            if pmax == S::zero() {
                return Err(LinalgError::Singular(j));
            }
            ipiv[j] = j + p;
            let jmax = (j + ku + kl).min(n - 1);
            if p != 0 {
                for col in j..=jmax {
                    let a = self.slot(j, col);
                    let b = self.slot(j + p, col);
                    self.ab.swap(a, b);
                }
            }
            let piv = self.get(j, j);
            for ii in 1..=km {
                let m = self.get(j + ii, j) / piv;
                self.set(j + ii, j, m);
            }
            for col in (j + 1)..=jmax {
                let ajc = self.get(j, col);
                if ajc != S::zero() {
                    for ii in 1..=km {
                        let m = self.get(j + ii, j);
                        let upd = m * ajc;
                        let s = self.slot(j + ii, col);
                        self.ab[s] -= upd;
                    }
                }
            }
        }
        Ok(BandedLu { mat: self, ipiv })
    }
}

/// Factored banded matrix; `solve` may be reused for many right-hand sides.
#[derive(Debug, Clone)]
pub struct BandedLu<S> {
    mat: Banded<S>,
    ipiv: Vec<usize>,
}

impl<S: Real> BandedLu<S> {
    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let n = self.mat.n;
        let (kl, ku) = (self.mat.kl, self.mat.ku);
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                x.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            for ii in 1..=km {
                let upd = self.mat.get(j + ii, j) * x[j];
                x[j + ii] -= upd;
            }
        }
        for i in (0..n).rev() {
            let jmax = (i + ku + kl).min(n - 1);
            let mut s = x[i];
            for j in (i + 1)..=jmax {
                s = s - self.mat.get(i, j) * x[j];
            }
            x[i] = s / self.mat.get(i, i);
        }
        x
    }
}
