//! Spiked Wigner ensembles, the semicircle law, and Monte-Carlo checks of
//! eigenvector overlap.
//!
//! A batch Hessian is modelled as a low-rank "true" part `sum_i nu_i
//! theta_i theta_i^T` plus a symmetric Gaussian fluctuation whose off-diagonal
//! entries have variance `sigma^2 / B` (diagonal `2 sigma^2 / B`). With that
//! normalization the noise spectrum fills `[-2s, 2s]` with
//! `s = sigma sqrt(P / B)`, and a spike of size `|nu| > s` leaves an outlier
//! whose eigenvector keeps a squared overlap `1 - s^2 / nu^2` with `theta`.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dense_eigh_select, dot, ParamVector, SymMatrix, DENSE_CAP};
use crate::random::{derive_seed, gaussian, random_orthonormal, seeded};

/// Multiple of `s P^(-2/3)` added to the bulk edge before an eigenvalue
/// counts as an outlier.
pub const TRACY_WIDOM_BUFFER: f64 = 3.0;

/// Eigenvalues closer than this are treated as an ambiguous pairing.
pub const DEGENERACY_GAP: f64 = 1e-8;

/// Parameters of a spiked-ensemble experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikedEnsembleSpec {
    pub dim: usize,
    pub batch_size: usize,
    pub sigma: f64,
    pub spikes: Vec<f64>,
}

impl SpikedEnsembleSpec {
    pub fn new(dim: usize, batch_size: usize, sigma: f64, spikes: Vec<f64>) -> Result<Self> {
        let spec = SpikedEnsembleSpec {
            dim,
            batch_size,
            sigma,
            spikes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.batch_size == 0 {
            return Err(Error::invalid("dimension and batch size must be positive"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!(
                "noise scale {} must be finite and >= 0",
                self.sigma
            )));
        }
        if self.spikes.len() >= self.dim {
            return Err(Error::invalid("spike rank must be below the dimension"));
        }
        if self.spikes.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spike values".into()));
        }
        Ok(())
    }

    /// `s = sigma sqrt(P / B)`.
    pub fn scale(&self) -> f64 {
        self.sigma * (self.dim as f64 / self.batch_size as f64).sqrt()
    }

    pub fn law(&self) -> SemicircleLaw {
        SemicircleLaw::new(self.scale())
    }

    /// Eigenvalues above this are outliers.
    pub fn outlier_threshold(&self) -> f64 {
        let s = self.scale();
        2.0 * s + TRACY_WIDOM_BUFFER * s * (self.dim as f64).powf(-2.0 / 3.0)
    }
}

/// Semicircle distribution on `[-2s, 2s]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemicircleLaw {
    pub scale: f64,
}

impl SemicircleLaw {
    pub fn new(scale: f64) -> Self {
        assert!(scale >= 0.0, "semicircle scale must be nonnegative");
        SemicircleLaw { scale }
    }

    pub fn edge(&self) -> f64 {
        2.0 * self.scale
    }

    pub fn density(&self, x: f64) -> f64 {
        let r2 = self.edge().powi(2) - x * x;
        if r2 <= 0.0 {
            0.0
        } else {
            r2.sqrt() / (2.0 * PI * self.scale * self.scale)
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let e = self.edge();
        if x >= e {
            return 1.0;
        }
        if x <= -e {
            return 0.0;
        }
        let s2 = self.scale * self.scale;
        let t = x / e;
        0.5 + x * (e * e - x * x).sqrt() / (4.0 * PI * s2) + t.asin() / PI
    }

    /// Inverse of [`cdf`](Self::cdf) for `u` in `[0, 1]`, by bisection.
    pub fn quantile(&self, u: f64) -> f64 {
        let e = self.edge();
        if u <= 0.0 {
            return -e;
        }
        if u >= 1.0 {
            return e;
        }
        let (mut lo, mut hi) = (-e, e);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * e {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

fn check_dense(spec: &SpikedEnsembleSpec) -> Result<()> {
    spec.validate()?;
    if spec.dim > DENSE_CAP {
        return Err(Error::DenseCapExceeded {
            dim: spec.dim,
            cap: DENSE_CAP,
        });
    }
    Ok(())
}

/// Symmetric Gaussian fluctuation matrix: off-diagonal variance
/// `sigma^2 / B`, diagonal variance `2 sigma^2 / B`.
pub fn sample_fluctuation(spec: &SpikedEnsembleSpec, seed: u64) -> Result<SymMatrix> {
    check_dense(spec)?;
    let sd = spec.sigma / (spec.batch_size as f64).sqrt();
    let mut rng = seeded(seed);
    Ok(SymMatrix::from_fn(spec.dim, |i, j| {
        let z = gaussian(&mut rng);
        if i == j {
            z * sd * std::f64::consts::SQRT_2
        } else {
            z * sd
        }
    }))
}

/// A draw of `H_true + X` together with the spike directions `theta_i`
/// (in the order of `spec.spikes`).
#[derive(Debug, Clone)]
pub struct SpikedSample {
    pub batch: SymMatrix,
    pub true_vectors: Vec<ParamVector>,
}

/// Adds a random-orientation low-rank signal to the fluctuation that
/// [`sample_fluctuation`] produces for the same seed.
pub fn sample_spiked(spec: &SpikedEnsembleSpec, seed: u64) -> Result<SpikedSample> {
    let mut batch = sample_fluctuation(spec, seed)?;
    let mut rng = seeded(derive_seed(seed, 1));
    let thetas = random_orthonormal(&mut rng, spec.dim, spec.spikes.len());
    let signal = SymMatrix::from_outer_products(spec.dim, &spec.spikes, &thetas)?;
    batch.add_scaled(1.0, &signal)?;
    Ok(SpikedSample {
        batch,
        true_vectors: thetas,
    })
}

/// Predicted squared overlap: `1 - s^2 / nu^2` above the threshold `s`,
/// zero at or below it.
pub fn overlap_prediction(nu: f64, spec: &SpikedEnsembleSpec) -> f64 {
    let s = spec.scale();
    if nu.abs() > s {
        1.0 - (s / nu).powi(2)
    } else {
        0.0
    }
}

/// Predicted outlier eigenvalue `nu + s^2 / nu` (the bulk edge `2s` below
/// threshold).
pub fn outlier_location(nu: f64, spec: &SpikedEnsembleSpec) -> f64 {
    let s = spec.scale();
    if nu.abs() > s {
        nu + s * s / nu
    } else {
        2.0 * s * nu.signum()
    }
}

/// Measured squared overlaps between spike directions and the batch
/// eigenvectors paired with them.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMeasurement {
    /// `|theta_i^T phi_i|^2`, in the order of the spikes.
    pub overlaps: Vec<f64>,
    /// The batch eigenvalue paired with each spike.
    pub eigenvalues: Vec<f64>,
    /// Set when two paired eigenvalues lie within [`DEGENERACY_GAP`].
    pub degenerate: bool,
}

/// Pairs each spike with a batch eigenvector by rank: the `i`-th largest
/// positive spike takes the `i`-th largest eigenvalue, the `i`-th most
/// negative spike the `i`-th smallest. A spike below threshold is thereby
/// paired with an edge-of-bulk eigenvector.
pub fn measure_overlap(
    batch: &SymMatrix,
    true_vectors: &[ParamVector],
    spikes: &[f64],
) -> Result<OverlapMeasurement> {
    if true_vectors.len() != spikes.len() {
        return Err(Error::DimensionMismatch {
            expected: spikes.len(),
            got: true_vectors.len(),
        });
    }
    let p = batch.dim();
    let mut pos: Vec<usize> = (0..spikes.len()).filter(|&i| spikes[i] >= 0.0).collect();
    let mut neg: Vec<usize> = (0..spikes.len()).filter(|&i| spikes[i] < 0.0).collect();
    pos.sort_by(|&a, &b| spikes[b].total_cmp(&spikes[a]));
    neg.sort_by(|&a, &b| spikes[a].total_cmp(&spikes[b]));
    let mut position = vec![0usize; spikes.len()];
    for (rank, &i) in pos.iter().enumerate() {
        position[i] = rank;
    }
    for (rank, &i) in neg.iter().enumerate() {
        position[i] = p - 1 - rank;
    }
    let (all, sel) = dense_eigh_select(batch, &position)?;
    let mut degenerate = false;
    for w in pos.windows(2).chain(neg.windows(2)) {
        let (a, b) = (all[position[w[0]]], all[position[w[1]]]);
        if (a - b).abs() < DEGENERACY_GAP {
            degenerate = true;
        }
    }
    if degenerate {
        log::warn!("degenerate outlier pairing in overlap measurement");
    }
    let overlaps = true_vectors
        .iter()
        .enumerate()
        .map(|(k, theta)| dot(theta, sel.vector(k)).powi(2))
        .collect();
    Ok(OverlapMeasurement {
        overlaps,
        eigenvalues: sel.values,
        degenerate,
    })
}

/// Kolmogorov-Smirnov distance between the empirical spectral distribution
/// of `eigenvalues` and the law.
pub fn esd_ks_distance(eigenvalues: &[f64], law: &SemicircleLaw) -> Result<f64> {
    if eigenvalues.is_empty() {
        return Err(Error::invalid("empty spectrum"));
    }
    let mut xs = eigenvalues.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < xs.len() {
        let mut j = i;
        while j + 1 < xs.len() && xs[j + 1] == xs[i] {
            j += 1;
        }
        let f = law.cdf(xs[i]);
        d = d.max(f - i as f64 / n).max((j + 1) as f64 / n - f);
        i = j + 1;
    }
    Ok(d)
}

/// Monte-Carlo summary for one spike.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapSummary {
    pub nu: f64,
    pub s: f64,
    pub predicted: f64,
    pub measured_mean: f64,
    pub measured_std: f64,
    pub n_seeds: usize,
    pub degenerate_draws: usize,
}

/// Draws `n_seeds` spiked matrices (seeds `base_seed + i`) in parallel and
/// averages the measured overlap of every spike.
pub fn monte_carlo_overlap(
    spec: &SpikedEnsembleSpec,
    n_seeds: usize,
    base_seed: u64,
) -> Result<Vec<OverlapSummary>> {
    check_dense(spec)?;
    if n_seeds == 0 {
        return Err(Error::invalid("need at least one seed"));
    }
    let draws: Vec<OverlapMeasurement> = (0..n_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let sample = sample_spiked(spec, base_seed.wrapping_add(i))?;
            measure_overlap(&sample.batch, &sample.true_vectors, &spec.spikes)
        })
        .collect::<Result<_>>()?;
    let n = n_seeds as f64;
    let degenerate_draws = draws.iter().filter(|d| d.degenerate).count();
    Ok(spec
        .spikes
        .iter()
        .enumerate()
        .map(|(k, &nu)| {
            let vals: Vec<f64> = draws.iter().map(|d| d.overlaps[k]).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = if n_seeds > 1 {
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            OverlapSummary {
                nu,
                s: spec.scale(),
                predicted: overlap_prediction(nu, spec),
                measured_mean: mean,
                measured_std: var.sqrt(),
                n_seeds,
                degenerate_draws,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense_eigvalsh;

    #[test]
    fn semicircle_cdf_fixed_points() {
        let law = SemicircleLaw::new(1.7);
        assert!((law.cdf(0.0) - 0.5).abs() < 1e-15);
        assert_eq!(law.cdf(3.4), 1.0);
        assert_eq!(law.cdf(-3.4), 0.0);
        assert!((law.quantile(law.cdf(0.9)) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn semicircle_cdf_matches_quadrature() {
        let law = SemicircleLaw::new(1.3);
        // Simpson's rule on the density from -2s to s, after the substitution
        // x = 2s sin(t) that removes the square-root endpoint singularity.
        let (a, b) = (-PI / 2.0, (0.5f64).asin());
        let n = 20_000;
        let h = (b - a) / n as f64;
        let f = |t: f64| law.density(law.edge() * t.sin()) * law.edge() * t.cos();
        let mut sum = f(a) + f(b);
        for i in 1..n {
            sum += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let quad = sum * h / 3.0;
        assert!((quad - law.cdf(1.3)).abs() < 1e-8);
    }

    #[test]
    fn prediction_cases() {
        let spec = SpikedEnsembleSpec::new(1000, 100, 1.0, vec![]).unwrap();
        assert!((overlap_prediction(6.0, &spec) - (1.0 - 10.0 / 36.0)).abs() < 1e-12);
        assert_eq!(overlap_prediction(3.0, &spec), 0.0);
        assert_eq!(overlap_prediction(10f64.sqrt(), &spec), 0.0);
        assert!(overlap_prediction(10f64.sqrt() * (1.0 + 1e-9), &spec) < 1e-8);
        let quiet = SpikedEnsembleSpec::new(10, 1, 0.0, vec![]).unwrap();
        assert_eq!(overlap_prediction(0.3, &quiet), 1.0);
    }

    #[test]
    fn zero_noise_cases() {
        assert!(
            sample_fluctuation(&SpikedEnsembleSpec::new(6, 2, 0.0, vec![]).unwrap(), 1)
                .unwrap()
                .as_row_major()
                .iter()
                .all(|&x| x == 0.0)
        );
        let spec = SpikedEnsembleSpec::new(30, 10, 0.0, vec![4.0, 2.0, -1.0]).unwrap();
        let s = sample_spiked(&spec, 5).unwrap();
        let eig = dense_eigvalsh(&s.batch).unwrap();
        assert!((eig[0] - 4.0).abs() < 1e-12 && (eig[1] - 2.0).abs() < 1e-12);
        assert!((eig[29] + 1.0).abs() < 1e-12);
        assert!(eig[2..29].iter().all(|x| x.abs() < 1e-12));
        let m = measure_overlap(&s.batch, &s.true_vectors, &spec.spikes).unwrap();
        assert!(m.overlaps.iter().all(|&o| (o - 1.0).abs() < 1e-10));
        assert!(!m.degenerate);
    }

    #[test]
    fn trace_of_spiked_sample() {
        let spec = SpikedEnsembleSpec::new(40, 4, 1.0, vec![3.0, 5.0]).unwrap();
        let noise = sample_fluctuation(&spec, 11).unwrap();
        let s = sample_spiked(&spec, 11).unwrap();
        assert!((s.batch.trace() - (8.0 + noise.trace())).abs() < 1e-12);
    }

    #[test]
    fn ks_distance_constructions() {
        let law = SemicircleLaw::new(1.0);
        let n = 500;
        let q: Vec<f64> = (0..n)
            .map(|i| law.quantile((i as f64 + 0.5) / n as f64))
            .collect();
        assert!(esd_ks_distance(&q, &law).unwrap() <= 1.0 / n as f64);
        assert!((esd_ks_distance(&[0.0; 50], &law).unwrap() - 0.5).abs() < 1e-12);
        assert!(esd_ks_distance(&[], &law).is_err());
    }

    #[test]
    fn degenerate_pairing_is_flagged() {
        let m = SymMatrix::from_diagonal(&[3.0, 3.0, 0.0, 0.0]);
        let thetas = vec![ParamVector::basis(4, 0), ParamVector::basis(4, 1)];
        let r = measure_overlap(&m, &thetas, &[3.0, 3.0]).unwrap();
        assert!(r.degenerate);
    }

    #[test]
    fn invalid_specs() {
        assert!(SpikedEnsembleSpec::new(0, 1, 1.0, vec![]).is_err());
        assert!(SpikedEnsembleSpec::new(3, 1, -1.0, vec![]).is_err());
        assert!(SpikedEnsembleSpec::new(2, 1, 1.0, vec![1.0, 2.0]).is_err());
    }
}
