//! Dense symmetric linear algebra.
//!
//! Everything here works in `f64`. [`SymMatrix`] keeps a full row-major copy
//! of the matrix and mirrors every write, so `a[i][j] == a[j][i]` holds
//! bit-for-bit. The dense eigensolver reduces to tridiagonal form with
//! Householder reflectors and then runs implicit QL; selected eigenvectors are
//! recovered by inverse iteration so that callers needing only a handful of
//! pairs (the outlier checks in [`crate::rmt`]) avoid the full `O(n^3)`
//! vector accumulation.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Largest matrix the dense routines accept.
pub const DENSE_CAP: usize = 2048;

/// Residual below which [`orthogonalize`] reports the vector as vanished,
/// relative to the norm of its input.
pub const ZERO_TOL: f64 = 1e-14;

/// A flat parameter, gradient or direction vector of dimension `P`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[i] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &[f64]) {
        axpy(a, x, &mut self.0);
    }

    pub fn scale(&mut self, a: f64) {
        self.0.iter_mut().for_each(|x| *x *= a);
    }

    pub fn scaled(mut self, a: f64) -> Self {
        self.scale(a);
        self
    }

    /// Returns the unit vector in the direction of `self`, or `None` for a
    /// zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        (n > 0.0).then(|| self.clone().scaled(1.0 / n))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl From<&[f64]> for ParamVector {
    fn from(v: &[f64]) -> Self {
        ParamVector(v.to_vec())
    }
}

impl FromIterator<f64> for ParamVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        ParamVector(iter.into_iter().collect())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Dense symmetric `P x P` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![1.0; dim])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * m.dim + i] = d;
        }
        m
    }

    /// Builds a matrix from `f(i, j)` evaluated on the upper triangle
    /// (`i <= j`) and mirrored.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Wraps row-major storage, rejecting anything that is not exactly
    /// symmetric or contains non-finite entries.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(dim * dim, data.len())?;
        for i in 0..dim {
            for j in 0..i {
                if data[i * dim + j] != data[j * dim + i] {
                    return Err(Error::invalid(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(SymMatrix { dim, data })
    }

    /// `sum_i w_i v_i v_i^T`, symmetrized exactly.
    pub fn from_outer_products(
        dim: usize,
        weights: &[f64],
        vectors: &[ParamVector],
    ) -> Result<Self> {
        if weights.len() != vectors.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                got: vectors.len(),
            });
        }
        for v in vectors {
            check_dim(dim, v.dim())?;
        }
        let mut m = Self::zeros(dim);
        for (w, v) in weights.iter().zip(vectors) {
            for i in 0..dim {
                let wi = w * v[i];
                if wi == 0.0 {
                    continue;
                }
                let row = &mut m.data[i * dim..(i + 1) * dim];
                axpy(wi, v, row);
            }
        }
        m.symmetrize();
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Writes `a[i][j]` and `a[j][i]`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn add_diagonal(&mut self, shift: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += shift;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    /// `self += a * other`
    pub fn add_scaled(&mut self, a: f64, other: &SymMatrix) -> Result<()> {
        check_dim(self.dim, other.dim)?;
        axpy(a, &other.data, &mut self.data);
        Ok(())
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Replaces each off-diagonal pair by its average.
    fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in 0..i {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg;
            }
        }
    }

    /// `y = A x` written into `y`.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (yi, row) in y.iter_mut().zip(self.data.chunks_exact(self.dim)) {
            *yi = dot(row, x);
        }
    }
}

/// A symmetric operator known only through its action `x -> A x`.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// Writes `A x` into `y`.
    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()>;
}

impl LinearOperator for SymMatrix {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, y.len())?;
        self.apply_into(x, y);
        Ok(())
    }
}

/// Exact dense product `A x`.
pub fn matvec(a: &SymMatrix, x: &[f64]) -> Result<ParamVector> {
    check_dim(a.dim, x.len())?;
    let mut y = ParamVector::zeros(a.dim);
    a.apply_into(x, &mut y);
    Ok(y)
}

/// Result of [`orthogonalize`].
#[derive(Debug, Clone, PartialEq)]
pub enum Orthogonalized {
    /// The component of the input orthogonal to the basis (not normalized).
    Vector(ParamVector),
    /// The input lay in the span of the basis to within [`ZERO_TOL`].
    Zero,
}

impl Orthogonalized {
    pub fn is_zero(&self) -> bool {
        matches!(self, Orthogonalized::Zero)
    }

    pub fn into_vector(self) -> Option<ParamVector> {
        match self {
            Orthogonalized::Vector(v) => Some(v),
            Orthogonalized::Zero => None,
        }
    }
}

/// Removes the components of `v` along an orthonormal `basis` with two
/// Gram-Schmidt passes.
pub fn orthogonalize(v: &[f64], basis: &[ParamVector]) -> Orthogonalized {
    let mut r = ParamVector::from(v);
    let scale = norm(v);
    if scale == 0.0 {
        return Orthogonalized::Zero;
    }
    reorthogonalize_in_place(&mut r, basis);
    if r.norm() < ZERO_TOL * scale {
        Orthogonalized::Zero
    } else {
        Orthogonalized::Vector(r)
    }
}

pub(crate) fn reorthogonalize_in_place(r: &mut [f64], basis: &[ParamVector]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, r);
            axpy(-c, b, r);
        }
    }
}

/// Eigenpairs sorted by descending eigenvalue. Vector `i` belongs to
/// `values[i]`.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    dim: usize,
    vectors: Vec<f64>,
}

impl Eigh {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.vectors.chunks_exact(self.dim.max(1))
    }

    /// Reassembles `sum_i lambda_i phi_i phi_i^T`.
    pub fn reconstruct(&self) -> SymMatrix {
        let vs: Vec<ParamVector> = self.vectors().map(ParamVector::from).collect();
        SymMatrix::from_outer_products(self.dim, &self.values, &vs)
            .expect("eigenvector dimensions are consistent")
    }
}

fn check_cap(dim: usize) -> Result<()> {
    if dim > DENSE_CAP {
        Err(Error::DenseCapExceeded {
            dim,
            cap: DENSE_CAP,
        })
    } else if dim == 0 {
        Err(Error::invalid("empty matrix"))
    } else {
        Ok(())
    }
}

/// Full symmetric eigendecomposition, eigenvalues descending.
pub fn dense_eigh(a: &SymMatrix) -> Result<Eigh> {
    check_cap(a.dim)?;
    let n = a.dim;
    let tri = Tridiagonal::reduce(a);
    let mut d = tri.diag.clone();
    let mut e = tri.offdiag.clone();
    let mut rows = vec![0.0; n * n];
    for i in 0..n {
        rows[i * n + i] = 1.0;
    }
    tridiagonal_ql(&mut d, &mut e, Some(&mut rows))?;
    for row in rows.chunks_exact_mut(n) {
        tri.back_transform(row);
    }
    Ok(sorted_eigh(n, d, rows))
}

/// Eigenvalues only, descending.
pub fn dense_eigvalsh(a: &SymMatrix) -> Result<Vec<f64>> {
    check_cap(a.dim)?;
    let tri = Tridiagonal::reduce(a);
    let mut d = tri.diag;
    let mut e = tri.offdiag;
    tridiagonal_ql(&mut d, &mut e, None)?;
    d.sort_by(|x, y| y.total_cmp(x));
    Ok(d)
}

/// All eigenvalues (descending) together with the eigenvectors at the
/// requested positions of that descending order.
pub fn dense_eigh_select(a: &SymMatrix, positions: &[usize]) -> Result<(Vec<f64>, Eigh)> {
    check_cap(a.dim)?;
    let n = a.dim;
    if let Some(&p) = positions.iter().find(|&&p| p >= n) {
        return Err(Error::invalid(format!(
            "eigenpair position {p} out of range for dimension {n}"
        )));
    }
    let tri = Tridiagonal::reduce(a);
    let mut d = tri.diag.clone();
    let mut e = tri.offdiag.clone();
    tridiagonal_ql(&mut d, &mut e, None)?;
    d.sort_by(|x, y| y.total_cmp(x));

    let tnorm = tri
        .diag
        .iter()
        .zip(&tri.offdiag)
        .map(|(x, y)| x.abs() + 2.0 * y.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut found: Vec<(f64, ParamVector)> = Vec::with_capacity(positions.len());
    let mut values = Vec::with_capacity(positions.len());
    let mut vectors = Vec::with_capacity(positions.len() * n);
    for &p in positions {
        let lambda = d[p];
        let cluster: Vec<ParamVector> = found
            .iter()
            .filter(|(mu, _)| (mu - lambda).abs() <= 1e-7 * tnorm)
            .map(|(_, v)| v.clone())
            .collect();
        let y = inverse_iteration(&tri.diag, &tri.offdiag, lambda, tnorm, &cluster, p);
        let mut z = y.clone();
        tri.back_transform(&mut z);
        values.push(lambda);
        vectors.extend_from_slice(&z);
        found.push((lambda, ParamVector(y)));
    }
    Ok((
        d,
        Eigh {
            values,
            dim: n,
            vectors,
        },
    ))
}

fn sorted_eigh(n: usize, values: Vec<f64>, rows: Vec<f64>) -> Eigh {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let mut vectors = Vec::with_capacity(rows.len());
    for &i in &order {
        vectors.extend_from_slice(&rows[i * n..(i + 1) * n]);
    }
    Eigh {
        values: order.iter().map(|&i| values[i]).collect(),
        dim: n,
        vectors,
    }
}

/// Eigendecomposition of the symmetric tridiagonal matrix with diagonal `diag`
/// and off-diagonal `offdiag` (`offdiag.len() == diag.len() - 1`).
pub fn tridiagonal_eigh(diag: &[f64], offdiag: &[f64]) -> Result<Eigh> {
    let n = diag.len();
    if n == 0 {
        return Err(Error::invalid("empty tridiagonal matrix"));
    }
    check_dim(n - 1, offdiag.len())?;
    let mut d = diag.to_vec();
    let mut e = offdiag.to_vec();
    e.push(0.0);
    let mut rows = vec![0.0; n * n];
    for i in 0..n {
        rows[i * n + i] = 1.0;
    }
    tridiagonal_ql(&mut d, &mut e, Some(&mut rows))?;
    Ok(sorted_eigh(n, d, rows))
}

/// Householder reduction `A = Q T Q^T`. `offdiag[i]` couples `i` and `i + 1`;
/// `offdiag[n - 1]` is zero.
struct Tridiagonal {
    diag: Vec<f64>,
    offdiag: Vec<f64>,
    reflectors: Vec<(Vec<f64>, f64)>,
}

impl Tridiagonal {
    fn reduce(a: &SymMatrix) -> Self {
        let n = a.dim;
        // Only the lower triangle of `w` is kept current.
        let mut w = a.data.clone();
        let mut diag = vec![0.0; n];
        let mut offdiag = vec![0.0; n];
        let mut reflectors = Vec::with_capacity(n.saturating_sub(2));
        for k in 0..n.saturating_sub(2) {
            let base = k + 1;
            let m = n - base;
            diag[k] = w[k * n + k];
            let alpha = w[base * n + k];
            let tail: f64 = (1..m)
                .map(|i| w[(base + i) * n + k].powi(2))
                .sum::<f64>()
                .sqrt();
            if tail == 0.0 {
                offdiag[k] = alpha;
                reflectors.push((Vec::new(), 0.0));
                continue;
            }
            let beta = -alpha.signum() * alpha.hypot(tail);
            let tau = (beta - alpha) / beta;
            let inv = 1.0 / (alpha - beta);
            let mut v = vec![1.0; m];
            for (i, vi) in v.iter_mut().enumerate().skip(1) {
                *vi = w[(base + i) * n + k] * inv;
            }
            offdiag[k] = beta;

            // p = tau * A22 v using the lower triangle.
            let mut p = vec![0.0; m];
            for i in 0..m {
                let start = (base + i) * n + base;
                let row = &w[start..start + i];
                let vi = v[i];
                let mut s = 0.0;
                for ((rj, vj), pj) in row.iter().zip(&v[..i]).zip(&mut p[..i]) {
                    s += rj * vj;
                    *pj += rj * vi;
                }
                p[i] += s + w[start + i] * vi;
            }
            p.iter_mut().for_each(|x| *x *= tau);
            let correction = -0.5 * tau * dot(&p, &v);
            axpy(correction, &v, &mut p);

            // A22 -= v p^T + p v^T
            for i in 0..m {
                let start = (base + i) * n + base;
                let row = &mut w[start..=start + i];
                let (vi, pi) = (v[i], p[i]);
                for ((rj, vj), pj) in row.iter_mut().zip(&v[..=i]).zip(&p[..=i]) {
                    *rj -= vi * pj + pi * vj;
                }
            }
            reflectors.push((v, tau));
        }
        match n {
            0 => {}
            1 => diag[0] = w[0],
            _ => {
                diag[n - 2] = w[(n - 2) * n + n - 2];
                diag[n - 1] = w[(n - 1) * n + n - 1];
                offdiag[n - 2] = w[(n - 1) * n + n - 2];
            }
        }
        Tridiagonal {
            diag,
            offdiag,
            reflectors,
        }
    }

    /// Maps a vector from the tridiagonal basis back to the original one.
    fn back_transform(&self, z: &mut [f64]) {
        for (k, (v, tau)) in self.reflectors.iter().enumerate().rev() {
            if *tau == 0.0 {
                continue;
            }
            let seg = &mut z[k + 1..];
            let s = tau * dot(v, seg);
            axpy(-s, v, seg);
        }
    }
}

/// Implicit QL on a symmetric tridiagonal matrix. On return `d` holds the
/// (unsorted) eigenvalues. When `rows` is given, row `i` is rotated along and
/// ends up as the eigenvector of `d[i]` expressed in the starting basis.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], mut rows: Option<&mut [f64]>) -> Result<()> {
    let n = d.len();
    let max_iter = 30 * n.max(1);
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let mut total_iter = 0usize;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            loop {
                total_iter += 1;
                if total_iter > max_iter {
                    return Err(Error::NoConvergence {
                        iterations: total_iter,
                    });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(z) = rows.as_deref_mut() {
                        let (lo, hi) = z.split_at_mut((i + 1) * n);
                        let zi = &mut lo[i * n..];
                        let zi1 = &mut hi[..n];
                        for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                            let h = *b;
                            *b = s * *a + c * h;
                            *a = c * *a - s * h;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Eigenvector of the tridiagonal matrix for a known eigenvalue, by inverse
/// iteration with partial pivoting. Vectors in `cluster` (already found for
/// nearby eigenvalues) are projected out at every sweep.
fn inverse_iteration(
    diag: &[f64],
    offdiag: &[f64],
    lambda: f64,
    tnorm: f64,
    cluster: &[ParamVector],
    salt: usize,
) -> Vec<f64> {
    let n = diag.len();
    if n == 1 {
        return vec![1.0];
    }
    let lu = TridiagonalLu::factor(diag, offdiag, lambda, tnorm);
    // Deterministic, generic starting vector.
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * (((i + 7 * salt) as f64) * 0.618_033_988_75).fract())
        .collect();
    for _ in 0..4 {
        lu.solve(&mut x);
        reorthogonalize_in_place(&mut x, cluster);
        let nx = norm(&x);
        if nx == 0.0 || !nx.is_finite() {
            break;
        }
        x.iter_mut().for_each(|v| *v /= nx);
    }
    x
}

/// LU factorization of `T - lambda I` with row interchanges.
struct TridiagonalLu {
    u0: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    mult: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagonalLu {
    fn factor(diag: &[f64], offdiag: &[f64], lambda: f64, tnorm: f64) -> Self {
        let n = diag.len();
        let tiny = f64::EPSILON * tnorm;
        let mut u0 = vec![0.0; n];
        let mut u1 = vec![0.0; n];
        let mut u2 = vec![0.0; n];
        let mut mult = vec![0.0; n];
        let mut swapped = vec![false; n];
        let mut cur = [diag[0] - lambda, offdiag[0], 0.0];
        for i in 0..n - 1 {
            let sub = offdiag[i];
            let next = [
                sub,
                diag[i + 1] - lambda,
                if i + 2 < n { offdiag[i + 1] } else { 0.0 },
            ];
            if cur[0].abs() >= sub.abs() {
                let pivot = if cur[0] == 0.0 { tiny } else { cur[0] };
                let m = sub / pivot;
                u0[i] = pivot;
                u1[i] = cur[1];
                u2[i] = cur[2];
                mult[i] = m;
                cur = [next[1] - m * cur[1], next[2] - m * cur[2], 0.0];
            } else {
                let m = cur[0] / sub;
                u0[i] = sub;
                u1[i] = next[1];
                u2[i] = next[2];
                mult[i] = m;
                swapped[i] = true;
                cur = [cur[1] - m * next[1], cur[2] - m * next[2], 0.0];
            }
        }
        u0[n - 1] = if cur[0] == 0.0 { tiny } else { cur[0] };
        TridiagonalLu {
            u0,
            u1,
            u2,
            mult,
            swapped,
        }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = b.len();
        for i in 0..n - 1 {
            if self.swapped[i] {
                b.swap(i, i + 1);
            }
            b[i + 1] -= self.mult[i] * b[i];
        }
        b[n - 1] /= self.u0[n - 1];
        for i in (0..n - 1).rev() {
            let mut s = b[i] - self.u1[i] * b[i + 1];
            if i + 2 < n {
                s -= self.u2[i] * b[i + 2];
            }
            b[i] = s / self.u0[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{gaussian_vector, random_symmetric, seeded};

    fn naive_matvec(a: &SymMatrix, x: &[f64]) -> Vec<f64> {
        let n = a.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                y[i] += a.get(i, j) * x[j];
            }
        }
        y
    }

    #[test]
    fn matvec_identity_and_diagonal() {
        let y = matvec(&SymMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0, 3.0]);
        let y = matvec(&SymMatrix::from_diagonal(&[2.0, 0.0]), &[1.0, 1.0]).unwrap();
        assert_eq!(y.as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn matvec_matches_double_loop() {
        let mut rng = seeded(3);
        let a = random_symmetric(&mut rng, 5);
        let x = gaussian_vector(&mut rng, 5);
        let y = matvec(&a, &x).unwrap();
        for (u, v) in y.iter().zip(naive_matvec(&a, &x)) {
            assert!((u - v).abs() <= 1e-14);
        }
    }

    #[test]
    fn matvec_rejects_wrong_dimension() {
        let err = matvec(&SymMatrix::identity(3), &[1.0, 2.0]).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 3,
                got: 2
            }
        ));
    }

    #[test]
    fn set_mirrors() {
        let mut a = SymMatrix::zeros(3);
        a.set(0, 2, 4.5);
        assert_eq!(a.get(2, 0), 4.5);
        assert_eq!(a.max_abs_asymmetry(), 0.0);
        assert!(SymMatrix::from_row_major(2, vec![1.0, 2.0, 2.5, 1.0]).is_err());
    }

    #[test]
    fn eigh_diagonal_sorted() {
        let e = dense_eigh(&SymMatrix::from_diagonal(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
        assert!((e.vector(0)[0].abs() - 1.0).abs() < 1e-15);
        assert!((e.vector(1)[2].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eigh_swap_matrix() {
        let a = SymMatrix::from_row_major(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let e = dense_eigh(&a).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-15);
        assert!((e.values[1] + 1.0).abs() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vector(0);
        let v1 = e.vector(1);
        assert!(
            (v0[0] * v0[0].signum() - h).abs() < 1e-15
                && (v0[1] * v0[0].signum() - h).abs() < 1e-15
        );
        assert!(
            (v1[0] * v1[0].signum() - h).abs() < 1e-15
                && (v1[1] * v1[0].signum() + h).abs() < 1e-15
        );
    }

    #[test]
    fn eigh_reconstructs_random_matrix() {
        let mut rng = seeded(11);
        let a = random_symmetric(&mut rng, 50);
        let e = dense_eigh(&a).unwrap();
        let mut diff = e.reconstruct();
        diff.add_scaled(-1.0, &a).unwrap();
        assert!(diff.frobenius_norm() < 1e-10, "{}", diff.frobenius_norm());
        for w in e.values.windows(2) {
            assert!(w[0] >= w[1]);
        }
        // orthonormal columns
        for i in 0..50 {
            for j in 0..=i {
                let d = dot(e.vector(i), e.vector(j));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-10);
            }
        }
        let anorm = a.frobenius_norm();
        for (i, v) in e.vectors().enumerate() {
            let mut r = matvec(&a, v).unwrap();
            r.axpy(-e.values[i], v);
            assert!(r.norm() <= 1e-8 * anorm);
        }
    }

    #[test]
    fn eigvals_match_full_solver() {
        let mut rng = seeded(5);
        let a = random_symmetric(&mut rng, 80);
        let full = dense_eigh(&a).unwrap();
        let vals = dense_eigvalsh(&a).unwrap();
        for (x, y) in full.values.iter().zip(&vals) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((vals.iter().sum::<f64>() - a.trace()).abs() < 1e-9 * 80.0);
    }

    #[test]
    fn selected_pairs_match_full_solver() {
        let mut rng = seeded(9);
        let a = random_symmetric(&mut rng, 120);
        let full = dense_eigh(&a).unwrap();
        let (_, sel) = dense_eigh_select(&a, &[0, 1, 119, 60]).unwrap();
        for (k, &p) in [0usize, 1, 119, 60].iter().enumerate() {
            assert!((sel.values[k] - full.values[p]).abs() < 1e-12);
            let overlap = dot(sel.vector(k), full.vector(p)).abs();
            assert!((overlap - 1.0).abs() < 1e-10, "position {p}: {overlap}");
        }
    }

    #[test]
    fn selected_pairs_in_degenerate_cluster_are_orthogonal() {
        let a = SymMatrix::from_diagonal(&[2.0, 2.0, 2.0, 1.0, 0.5]);
        let (_, sel) = dense_eigh_select(&a, &[0, 1, 2]).unwrap();
        for i in 0..3 {
            for j in 0..i {
                assert!(dot(sel.vector(i), sel.vector(j)).abs() < 1e-10);
            }
            let mut r = matvec(&a, sel.vector(i)).unwrap();
            r.axpy(-2.0, sel.vector(i));
            assert!(r.norm() < 1e-10);
        }
    }

    #[test]
    fn tridiagonal_solver_handles_single_entry() {
        let e = tridiagonal_eigh(&[4.0], &[]).unwrap();
        assert_eq!(e.values, vec![4.0]);
        assert_eq!(e.vector(0), &[1.0]);
    }

    #[test]
    fn dense_cap_enforced() {
        let big = SymMatrix::zeros(DENSE_CAP + 1);
        assert!(matches!(
            dense_eigvalsh(&big),
            Err(Error::DenseCapExceeded { .. })
        ));
    }

    #[test]
    fn orthogonalize_cases() {
        let basis = vec![ParamVector::basis(3, 0), ParamVector::basis(3, 1)];
        match orthogonalize(&[0.0, 0.0, 2.0], &basis) {
            Orthogonalized::Vector(v) => assert_eq!(v.as_slice(), &[0.0, 0.0, 2.0]),
            Orthogonalized::Zero => panic!("orthogonal input vanished"),
        }
        assert!(orthogonalize(&basis[0], &basis).is_zero());
    }

    #[test]
    fn orthogonalize_random_against_random_basis() {
        let mut rng = seeded(21);
        let raw: Vec<ParamVector> = (0..5).map(|_| gaussian_vector(&mut rng, 40)).collect();
        let mut basis: Vec<ParamVector> = Vec::new();
        for v in raw {
            let q = orthogonalize(&v, &basis).into_vector().unwrap();
            basis.push(q.normalized().unwrap());
        }
        let v = gaussian_vector(&mut rng, 40);
        let r = orthogonalize(&v, &basis).into_vector().unwrap();
        for b in &basis {
            assert!(dot(b, &r).abs() < 1e-12);
        }
    }
}
