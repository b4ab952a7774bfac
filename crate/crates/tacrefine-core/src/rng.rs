//! Counter-based deterministic random stream.
//!
//! Every random draw in the crate comes from a `DetRng`, which is a SplitMix64
//! stream addressed by `(key, counter)`. The counter is the stream position:
//! persisting the pair and reconstructing the generator continues the stream
//! bit-exactly, which is what checkpoint/resume equivalence needs.

/// Deterministic random number generator with an explicit stream position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DetRng {
    key: u64,
    counter: u64,
}

const GOLDEN: u64 = 0x9e3779b97f4a7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from a base seed and a string tag.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, folded into the seed.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    mix(seed ^ h)
}

/// Derive a sub-seed indexed by an integer (per-pose, per-trial, ...).
pub fn derive_seed_indexed(seed: u64, tag: &str, index: u64) -> u64 {
    mix(derive_seed(seed, tag).wrapping_add(GOLDEN.wrapping_mul(index.wrapping_add(1))))
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng { key: seed, counter: 0 }
    }

    /// Rebuild a generator at a persisted stream position.
    pub fn from_state(key: u64, counter: u64) -> Self {
        DetRng { key, counter }
    }

    pub fn state(&self) -> (u64, u64) {
        (self.key, self.counter)
    }

    pub fn next_u64(&mut self) -> u64 {
        let z = self.key.wrapping_add(GOLDEN.wrapping_mul(self.counter.wrapping_add(1)));
        self.counter += 1;
        mix(z)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; returns exactly `lo` when `lo == hi`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.next_f64() * (hi - lo)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Multiply-shift; bias is negligible for the n used here (< 2^32).
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller. Always consumes exactly two draws.
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        mean + std * r * (std::f64::consts::TAU * u2).cos()
    }
}
