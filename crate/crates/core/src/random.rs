//! Seeded random streams and the random objects built from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{orthogonalize, ParamVector, SymMatrix};

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream index (splitmix64 finalizer), so that
/// `(seed, i)` pairs give unrelated streams.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> ParamVector {
    (0..dim).map(|_| gaussian(rng)).collect()
}

/// Uniformly distributed point on the unit sphere.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> ParamVector {
    loop {
        if let Some(v) = gaussian_vector(rng, dim).normalized() {
            return v;
        }
    }
}

/// `count` orthonormal vectors spanning a Haar-random subspace (Gram-Schmidt
/// QR of a Gaussian `dim x count` matrix).
pub fn random_orthonormal<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    count: usize,
) -> Vec<ParamVector> {
    assert!(
        count <= dim,
        "cannot draw {count} orthonormal vectors in dimension {dim}"
    );
    let mut basis: Vec<ParamVector> = Vec::with_capacity(count);
    while basis.len() < count {
        let g = gaussian_vector(rng, dim);
        if let Some(q) = orthogonalize(&g, &basis)
            .into_vector()
            .and_then(|q| q.normalized())
        {
            basis.push(q);
        }
    }
    basis
}

/// Symmetric matrix with independent standard normal upper-triangle entries.
pub fn random_symmetric<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> SymMatrix {
    SymMatrix::from_fn(dim, |_, _| gaussian(rng))
}
