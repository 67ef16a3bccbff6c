//! All randomness flows from one run seed. Each sampling site derives its own
//! generator from `(seed, operation, index)` so that adding or reordering
//! operations never shifts the streams of the others.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Stable 64-bit sub-seed for an operation.
pub fn derive(seed: u64, op: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((op.len() as u64).to_le_bytes());
    hasher.update(op.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64, op: &str, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, op, index))
}

/// Uniform sample of `k` items without replacement, returned in sample order.
pub fn sample<T: Clone>(items: &[T], k: usize, rng: &mut Rng) -> Vec<T> {
    let k = k.min(items.len());
    items.choose_multiple(rng, k).cloned().collect()
}

pub fn shuffled<T: Clone>(items: &[T], rng: &mut Rng) -> Vec<T> {
    let mut out = items.to_vec();
    out.shuffle(rng);
    out
}
