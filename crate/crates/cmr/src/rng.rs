use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Matrix;
use crate::Scalar;

/// Deterministic generator for a given seed.
pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Independent deterministic streams derived from one experiment seed.
/// `domain` separates uses (init vs shuffling vs data synthesis) so streams
/// never collide; `stream` indexes within a domain (layer, epoch, ...).
pub fn stream_rng(seed: u64, domain: u64, stream: u64) -> ChaCha20Rng {
    let mut state = [0u8; 32];
    state[..8].copy_from_slice(&seed.to_le_bytes());
    state[8..16].copy_from_slice(&domain.to_le_bytes());
    state[16..24].copy_from_slice(&stream.to_le_bytes());
    state[24] = 0x9e;
    state[25] = 0x37;
    ChaCha20Rng::from_seed(state)
}

/// Stream domains used across the crate.
pub mod domains {
    /// Per-layer weight initialization.
    pub const INIT: u64 = 1;
    /// Per-epoch batch shuffling.
    pub const SHUFFLE: u64 = 2;
    /// Synthetic dataset generation.
    pub const SYNTH: u64 = 3;
}

/// Matrix with iid standard normal entries, filled in row-major order.
/// Entries are drawn as `f64` and narrowed, so the stream is identical for
/// every scalar type.
pub fn gaussian_matrix<T: Scalar>(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        let x: f64 = StandardNormal.sample(rng);
        *v = T::from_f64_lossy(x);
    }
    m
}

/// In-place Fisher-Yates shuffle with the classic descending sweep.
pub fn fisher_yates<R: Rng, X>(rng: &mut R, items: &mut [X]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
