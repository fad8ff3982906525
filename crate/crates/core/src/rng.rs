//! Seeded random streams.
//!
//! Every stochastic choice in the simulator draws from a [`SeedStream`]
//! keyed by `(base seed, domain, id)`. Streams for distinct domains or
//! parties are independent, so a party's randomness never depends on how
//! many draws another party made or in which order parties ran.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream domains. The numeric values are part of the reproducibility
/// contract: changing them changes every generated model and dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Blobs = 1,
    Partition = 2,
    ClientInit = 3,
    ClientHeadInit = 4,
    ServerInit = 5,
    Dropout = 6,
    ClientShuffle = 7,
    ServerShuffle = 8,
    Anonymizer = 9,
    RoundRobinShuffle = 10,
    GradCheck = 11,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the 64-bit key for a `(seed, domain, id)` triple.
pub fn derive_key(seed: u64, domain: Domain, id: u64) -> u64 {
    let a = mix64(seed.wrapping_add(GOLDEN));
    let b = mix64(a ^ (domain as u64).wrapping_mul(GOLDEN));
    mix64(b ^ id.wrapping_add(GOLDEN.rotate_left(17)))
}

/// Deterministic generator: ChaCha8 seeded from a derived key.
#[derive(Debug, Clone)]
pub struct SeedStream {
    rng: ChaCha8Rng,
}

impl SeedStream {
    pub fn new(seed: u64, domain: Domain, id: u64) -> Self {
        Self::from_key(derive_key(seed, domain, id))
    }

    pub fn from_key(key: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(key) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-bound, bound)`.
    pub fn symmetric(&mut self, bound: f64) -> f64 {
        -bound + 2.0 * bound * self.uniform01()
    }

    /// Index in `[0, n)`; `n` must be nonzero.
    pub fn index(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// In-place Fisher–Yates shuffle, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// A fresh random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
