//! Seeded, splittable randomness.
//!
//! Built on ChaCha8, a counter-based generator: a (seed, stream) pair fully
//! determines the output sequence, so parallel sweep cells can each derive an
//! independent stream from a label without sharing mutable state.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// Stable 64-bit FNV-1a. `DefaultHasher` is not guaranteed stable across
/// toolchains, and stream derivation must never change.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn fnv1a_extend(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic random stream identified by `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        Rng::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng {
            seed,
            stream,
            inner,
        }
    }

    /// Derives an independent child stream from a label. Children of the
    /// same parent with distinct labels never overlap, and the parent's own
    /// sequence is unaffected.
    pub fn split(&self, label: &str) -> Rng {
        let h = fnv1a_extend(
            self.stream.wrapping_mul(FNV_PRIME) ^ FNV_OFFSET,
            label.as_bytes(),
        );
        Rng::with_stream(self.seed, h)
    }

    /// Indexed variant of [`split`](Self::split) for loop bodies.
    pub fn split_index(&self, label: &str, index: u64) -> Rng {
        let h = fnv1a_extend(
            self.stream.wrapping_mul(FNV_PRIME) ^ FNV_OFFSET,
            label.as_bytes(),
        );
        Rng::with_stream(self.seed, fnv1a_extend(h, &index.to_le_bytes()))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Consumed position within the stream, for exact state serialization.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Rebuilds an `Rng` at an exact saved position.
    pub fn restore(seed: u64, stream: u64, word_pos: u128) -> Self {
        let mut rng = Rng::with_stream(seed, stream);
        rng.inner.set_word_pos(word_pos);
        rng
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        self.inner.gen_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
