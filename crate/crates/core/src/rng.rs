//! Seedable, splittable simulation RNG.
//!
//! Backed by ChaCha8, a counter-based stream cipher generator. Splitting
//! derives a fresh key from the parent's key, stream and word position plus a
//! caller tag, without advancing the parent. Shadow simulations draw from a
//! split so the live stream is never perturbed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Well-known split tags.
pub mod streams {
    pub const SHADOW: u64 = 0x5348_4144_4f57;
    pub const MODERATOR: u64 = 0x4d4f_4445_5241;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SimRng {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derives an independent generator. `self` is not advanced.
    pub fn split(&self, tag: u64) -> SimRng {
        let parent_key = self.inner.get_seed();
        let pos = self.inner.get_word_pos();
        let mut acc = tag ^ self.inner.get_stream();
        for chunk in parent_key.chunks(8) {
            let mut b = [0u8; 8];
            b.copy_from_slice(chunk);
            acc ^= u64::from_le_bytes(b);
            splitmix64(&mut acc);
        }
        acc ^= pos as u64;
        acc ^= ((pos >> 64) as u64).rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut acc).to_le_bytes());
        }
        Self {
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// Number of 32-bit words consumed so far.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.uniform()
    }

    pub fn index(&mut self, len: usize) -> usize {
        debug_assert!(len > 0);
        self.inner.random_range(0..len)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}
