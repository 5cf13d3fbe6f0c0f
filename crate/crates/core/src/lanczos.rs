//! Lanczos iteration on matrix-free symmetric operators.

use crate::error::{Error, Result};
use crate::linalg::{
    axpy, dot, norm, reorthogonalize_in_place, tridiagonal_eigh, LinearOperator, ParamVector,
};
use crate::random::{seeded, unit_vector};

/// Ritz pairs with residual above this multiple of the operator norm
/// estimate are flagged.
pub const RESIDUAL_FLAG: f64 = 1e-4;

/// Relative size of the next Lanczos vector below which the Krylov space is
/// treated as invariant.
const BREAKDOWN_TOL: f64 = 1e-12;

/// Ritz pairs sorted by descending Ritz value.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub ritz_values: Vec<f64>,
    pub ritz_vectors: Vec<ParamVector>,
    /// `|beta_k s_{k,i}|`, the residual norm `||A phi_i - lambda_i phi_i||`.
    pub residuals: Vec<f64>,
    pub flagged: Vec<bool>,
    /// Steps asked for.
    pub requested: usize,
    /// True when the iteration stopped early on an invariant subspace.
    pub broke_down: bool,
}

impl SpectralDecomposition {
    /// Achieved number of steps `k'`.
    pub fn k(&self) -> usize {
        self.ritz_values.len()
    }

    pub fn dim(&self) -> usize {
        self.ritz_vectors.first().map_or(0, |v| v.dim())
    }

    pub fn largest(&self) -> f64 {
        self.ritz_values[0]
    }

    pub fn smallest(&self) -> f64 {
        *self.ritz_values.last().expect("decomposition is nonempty")
    }
}

/// Runs `k` Lanczos steps with full two-pass reorthogonalization from a
/// Gaussian starting vector drawn from `seed`.
pub fn lanczos(op: &dyn LinearOperator, k: usize, seed: u64) -> Result<SpectralDecomposition> {
    let p = op.dim();
    if k == 0 || k > p {
        return Err(Error::invalid(format!(
            "Lanczos steps {k} must lie in 1..={p}"
        )));
    }
    let mut rng = seeded(seed);
    let mut basis: Vec<ParamVector> = Vec::with_capacity(k);
    basis.push(unit_vector(&mut rng, p));
    let mut alpha = Vec::with_capacity(k);
    let mut beta: Vec<f64> = Vec::with_capacity(k);
    let mut w = ParamVector::zeros(p);
    let mut broke_down = false;
    let mut scale = 0.0f64;
    loop {
        let j = basis.len() - 1;
        op.apply(&basis[j], &mut w)?;
        let a = dot(&basis[j], &w);
        axpy(-a, &basis[j], &mut w);
        if j > 0 {
            axpy(-beta[j - 1], &basis[j - 1], &mut w);
        }
        reorthogonalize_in_place(&mut w, &basis);
        alpha.push(a);
        let b = w.norm();
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite("Lanczos recurrence".into()));
        }
        scale = scale.max(a.abs() + b + beta.last().copied().unwrap_or(0.0));
        beta.push(b);
        if basis.len() == k {
            break;
        }
        if b <= BREAKDOWN_TOL * scale.max(f64::MIN_POSITIVE) {
            broke_down = true;
            break;
        }
        let next = w.clone().scaled(1.0 / b);
        basis.push(next);
    }

    let m = alpha.len();
    let last_beta = if broke_down { 0.0 } else { beta[m - 1] };
    let tri = tridiagonal_eigh(&alpha, &beta[..m - 1])?;
    let norm_est = tri.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut ritz_vectors = Vec::with_capacity(m);
    let mut residuals = Vec::with_capacity(m);
    for s in tri.vectors() {
        let mut phi = ParamVector::zeros(p);
        for (q, &sj) in basis.iter().zip(s) {
            phi.axpy(sj, q);
        }
        let n = phi.norm();
        phi.scale(1.0 / n);
        ritz_vectors.push(phi);
        residuals.push((last_beta * s[m - 1]).abs());
    }
    let flagged = residuals
        .iter()
        .map(|&r| r > RESIDUAL_FLAG * norm_est)
        .collect();
    if broke_down {
        log::debug!("Lanczos broke down after {m} of {k} steps");
    }
    Ok(SpectralDecomposition {
        ritz_values: tri.values,
        ritz_vectors,
        residuals,
        flagged,
        requested: k,
        broke_down,
    })
}

/// Splits `g` into its coordinates along the Ritz vectors and the remainder
/// orthogonal to them (two projection passes).
pub fn project_sharp(decomp: &SpectralDecomposition, g: &[f64]) -> Result<(Vec<f64>, ParamVector)> {
    if g.len() != decomp.dim() {
        return Err(Error::DimensionMismatch {
            expected: decomp.dim(),
            got: g.len(),
        });
    }
    let mut residual = ParamVector::from(g);
    let mut coeffs = vec![0.0; decomp.k()];
    for _ in 0..2 {
        for (c, phi) in coeffs.iter_mut().zip(&decomp.ritz_vectors) {
            let d = dot(phi, &residual);
            *c += d;
            residual.axpy(-d, phi);
        }
    }
    Ok((coeffs, residual))
}

/// Fraction of the squared gradient norm carried by the `top_n` leading Ritz
/// vectors.
pub fn gradient_overlap(decomp: &SpectralDecomposition, g: &[f64], top_n: usize) -> Result<f64> {
    if top_n > decomp.k() {
        return Err(Error::invalid(format!(
            "top_n {top_n} exceeds the {} available Ritz vectors",
            decomp.k()
        )));
    }
    let gn = norm(g);
    if gn == 0.0 {
        return Err(Error::ZeroGradient);
    }
    let mass: f64 = decomp.ritz_vectors[..top_n]
        .iter()
        .map(|phi| (dot(phi, g) / gn).powi(2))
        .sum();
    Ok(mass.min(1.0))
}
