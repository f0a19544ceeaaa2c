//! Deterministic randomness as a pure function of (root seed, domain, index).
//!
//! Every consumer of randomness — parameter init, the per-step training draws,
//! per-image dataset synthesis, evaluation z vectors — opens its own keyed
//! stream instead of sharing one mutable generator. Two consequences fall out:
//! adding a consumer never perturbs any other consumer's draws, and resuming a
//! run needs no serialized generator state because the stream for step k is
//! reconstructed from (seed, Step, k) alone.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Independent randomness consumers. The numeric tags are part of the
/// reproducibility contract: renumbering them changes every derived stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    ParamInit = 1,
    Shuffle = 2,
    Step = 3,
    Trace = 4,
    Standing = 5,
    DataGen = 6,
    Classifier = 7,
    EvalZ = 8,
    Tsne = 9,
    Metrics = 10,
    TokenHash = 11,
    Projection = 12,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Expand (seed, domain, index) into a 256-bit ChaCha key via a splitmix64
/// chain. Mixing all three values before expansion keeps distinct keys from
/// colliding even when seeds are small integers like 0 and 1.
fn derive_key(seed: u64, domain: u64, index: u64) -> [u8; 32] {
    let mut s = seed;
    let a = splitmix64(&mut s);
    s ^= domain.wrapping_mul(0xd6e8_feb8_6659_fd93);
    let b = splitmix64(&mut s);
    s ^= index.wrapping_mul(0xca5a_8263_95121157);
    let c = splitmix64(&mut s);
    let d = splitmix64(&mut s);
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&c.to_le_bytes());
    key[24..32].copy_from_slice(&d.to_le_bytes());
    key
}

/// A single keyed stream. ChaCha8 is deliberate: cryptographic mixing at a
/// throughput that is irrelevant next to the GEMMs it feeds, with identical
/// output on every platform.
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64, domain: Domain, index: u64) -> Self {
        StreamRng {
            inner: ChaCha8Rng::from_seed(derive_key(seed, domain as u64, index)),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with the full 53 bits of double precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; the open lower end keeps `ln` finite in Box-Muller.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller. Each draw consumes exactly two u64s,
    /// which keeps the stream position a simple function of draw count.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Uniform integer in [0, n) by 128-bit multiplicative scaling.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates permutation of 0..n.
    pub fn permutation(&mut self, n: usize) -> alloc::vec::Vec<usize> {
        let mut p: alloc::vec::Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}
