//! Deterministic random streams.
//!
//! One 64-bit seed feeds every run. Each consumer (a node's behaviour, the
//! initial placement, ...) gets its own ChaCha stream selected by a stable
//! FNV-1a hash of a label, so adding or reordering nodes never perturbs the
//! draws of another node.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stable_hash(label: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(label.as_bytes());
    h.finish()
}

pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stable_hash(label));
    rng
}
