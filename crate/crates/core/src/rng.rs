//! Keyed random streams.
//!
//! Every random quantity is drawn from its own ChaCha stream whose seed is a
//! hash of `(run seed, purpose, indices...)`. Nothing is pulled from a shared
//! sequential generator, so results do not depend on evaluation order or on
//! how many worker threads are in use.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag separating independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Scatterers = 1,
    /// RCS and measurement noise for one (AP, scatterer) pair.
    Measurement = 2,
    LsError = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit stream key from a run seed, a purpose and an index path.
pub fn derive_key(seed: u64, stream: Stream, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x6A09_E667_F3BC_C908);
    h = splitmix64(h ^ stream as u64);
    for &p in path {
        h = splitmix64(h ^ p);
    }
    h
}

/// Opens the random stream identified by `(seed, stream, path)`.
pub fn stream_rng(seed: u64, stream: Stream, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, stream, path))
}
