//! Deterministic pseudo-random numbers.
//!
//! The generator is xoshiro256** (Blackman & Vigna), seeded by expanding a
//! 64-bit seed through SplitMix64:
//!
//! ```text
//! splitmix64:  z += 0x9e3779b97f4a7c15
//!              z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//!              z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//!              out = z ^ (z >> 31)
//!
//! xoshiro256**: out = rotl(s1 * 5, 7) * 9
//!               t = s1 << 17
//!               s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3
//!               s2 ^= t; s3 = rotl(s3, 45)
//! ```
//!
//! Sub-streams are derived from the *seed* (not the current state) and a
//! text label, so `split("train")` is a pure function of `(seed, "train")`.

use std::f64::consts::PI;

use crate::checkpoint::fnv1a64;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a 64-bit value through one SplitMix64 round. A bijection on `u64`.
pub fn mix64(value: u64) -> u64 {
    let mut s = value;
    splitmix64(&mut s)
}

/// Seeded xoshiro256** generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
    state: [u64; 4],
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        SeededRng { seed, state }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent, reproducible sub-stream identified by `label`.
    pub fn split(&self, label: &str) -> SeededRng {
        let key = fnv1a64(label.as_bytes());
        SeededRng::new(mix64(self.seed ^ mix64(key)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let out = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        out
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal draw (Box-Muller, one output per two uniforms).
    pub fn normal(&mut self) -> f64 {
        // 1 - u lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
