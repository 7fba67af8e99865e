//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`Stream`]: a xoshiro256**
//! generator whose 256-bit state is filled by SplitMix64 from a single 64-bit
//! stream key. Stream keys are derived by folding `(seed, operator tag, index)`
//! through the SplitMix64 finalizer, so each (operator, band) pair owns an
//! independent stream and per-band work can run in any order.
//!
//! Constants (all public, and repeated in the book's reproducibility chapter):
//!
//! * SplitMix64 increment `0x9E3779B97F4A7C15`, mixers `0xBF58476D1CE4E5B9`
//!   and `0x94D049BB133111EB` with shifts 30, 27, 31.
//! * xoshiro256** output `rotl(s1 * 5, 7) * 9`, state update with shift 17
//!   and rotation 45.
//!
//! Derived variates use fixed, documented algorithms so a replay never
//! depends on a third-party sampler's internals:
//!
//! * uniform `[0,1)`: top 53 bits of the output times 2^-53;
//! * bounded integers: Lemire's multiply-shift with rejection;
//! * standard normal: Box-Muller, both outputs used in order;
//! * sampling without replacement: partial Fisher-Yates over `0..n`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
pub const SPLITMIX_MUL1: u64 = 0xBF58_476D_1CE4_E5B9;
pub const SPLITMIX_MUL2: u64 = 0x94D0_49BB_1331_11EB;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(SPLITMIX_MUL1);
    z = (z ^ (z >> 27)).wrapping_mul(SPLITMIX_MUL2);
    z ^ (z >> 31)
}

/// FNV-1a over the tag bytes; only used to turn operator names into integers.
fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Key for the stream owned by `(seed, tag, index)`.
pub fn stream_key(seed: u64, tag: &str, index: u64) -> u64 {
    let a = mix64(seed.wrapping_add(SPLITMIX_GAMMA));
    let b = mix64(a ^ tag_hash(tag).wrapping_add(SPLITMIX_GAMMA));
    mix64(b ^ index.wrapping_mul(SPLITMIX_GAMMA).wrapping_add(1))
}

#[derive(Debug, Clone)]
pub struct Stream {
    inner: Xoshiro256StarStar,
    spare_normal: Option<f64>,
}

impl Stream {
    pub fn from_key(key: u64) -> Self {
        Stream {
            inner: Xoshiro256StarStar::seed_from_u64(key),
            spare_normal: None,
        }
    }

    pub fn new(seed: u64, tag: &str, index: u64) -> Self {
        Self::from_key(stream_key(seed, tag, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer on `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Uniform integer on the half-open range `[lo, hi)`.
    pub fn int_in(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo < hi, "empty integer range [{lo}, {hi})");
        lo + self.below((hi - lo) as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// `k` distinct values from `0..n`, in draw order.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct values from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = Stream::new(42, "stripe", 3);
        let mut b = Stream::new(42, "stripe", 3);
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn streams_differ_by_band_and_tag() {
        let k = stream_key(7, "stripe", 0);
        assert_ne!(k, stream_key(7, "stripe", 1));
        assert_ne!(k, stream_key(7, "deadline", 0));
        assert_ne!(k, stream_key(8, "stripe", 0));
    }

    #[test]
    fn uniform_and_bounded_ranges() {
        let mut s = Stream::new(1, "t", 0);
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
            let k = s.int_in(30, 35);
            assert!((30..35).contains(&k));
        }
    }

    #[test]
    fn normal_moments() {
        let mut s = Stream::new(3, "n", 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn distinct_sample_is_distinct() {
        let mut s = Stream::new(9, "d", 0);
        let mut v = s.sample_distinct(40, 33);
        v.sort_unstable();
        v.dedup();
        assert_eq!(v.len(), 33);
        assert!(v.iter().all(|&x| x < 40));
    }
}
