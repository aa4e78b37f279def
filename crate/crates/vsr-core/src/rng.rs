//! Deterministic pseudo-random number generation.
//!
//! Every stochastic component in the engine (weight init, dropout, corpus
//! sampling, batch shuffling, augmentation) draws from its own named stream
//! derived from a single experiment seed.  Streams are independent: adding
//! draws to one never shifts another, which is what makes runs bit-identical
//! when only an unrelated component changes.
//!
//! The generator is xoshiro256** seeded through splitmix64, both standard
//! public-domain constructions.  We carry our own implementation because the
//! engine needs a guaranteed-stable sequence across versions and platforms;
//! the exact stream is part of the reproducibility contract.

use alloc::string::String;
use alloc::vec::Vec;

use crate::math;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// FNV-1a over the stream name; folded into the seed so distinct names give
/// unrelated streams.
fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// A single deterministic random stream.
#[derive(Debug, Clone)]
pub struct StreamRng {
    s: [u64; 4],
    /// Cached second output of the Box-Muller transform.
    spare_normal: Option<f64>,
}

impl StreamRng {
    /// Stream derived from a root seed and a stream name.
    pub fn named(seed: u64, name: &str) -> Self {
        Self::mixed(seed ^ name_hash(name))
    }

    /// Stream derived from a root seed, a name and an index (for per-item or
    /// per-epoch streams).
    pub fn named_indexed(seed: u64, name: &str, index: u64) -> Self {
        Self::mixed(seed ^ name_hash(name) ^ index.wrapping_mul(0x9E3779B97F4A7C15))
    }

    fn mixed(mut seed: u64) -> Self {
        let mut s = [0u64; 4];
        for slot in s.iter_mut() {
            *slot = splitmix64(&mut seed);
        }
        // xoshiro must not start from the all-zero state.
        if s == [0, 0, 0, 0] {
            s[0] = 0x9E3779B97F4A7C15;
        }
        StreamRng { s, spare_normal: None }
    }

    /// Raw state, for checkpointing.  `spare_normal` is deliberately dropped:
    /// restoring mid-pair is not supported and callers snapshot at step
    /// boundaries where no pair is in flight.
    pub fn state(&self) -> [u64; 4] {
        self.s
    }

    pub fn restore(state: [u64; 4]) -> Self {
        StreamRng { s: state, spare_normal: None }
    }

    /// xoshiro256** next value.
    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Unbiased integer in [0, n).  Rejection sampling on the top bits.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is undefined");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }

    /// Integer in [lo, hi] inclusive.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare_normal.take() {
            return v;
        }
        // u1 in (0, 1] so the log argument is never zero.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = math::sqrt(-2.0 * math::ln(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare_normal = Some(r * math::sin(theta));
        r * math::cos(theta)
    }

    pub fn normal_scaled(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.normal()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Sample an index proportional to the given non-negative weights.
    pub fn weighted_index(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        assert!(total > 0.0, "weighted_index needs positive total weight");
        let mut target = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            target -= w;
            if target < 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }
}

/// Factory for the named streams of one experiment.
#[derive(Debug, Clone)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> StreamRng {
        StreamRng::named(self.seed, name)
    }

    pub fn stream_indexed(&self, name: &str, index: u64) -> StreamRng {
        StreamRng::named_indexed(self.seed, name, index)
    }
}

/// Snapshot of a set of named streams, for checkpoints.
pub type RngStates = Vec<(String, [u64; 4])>;
