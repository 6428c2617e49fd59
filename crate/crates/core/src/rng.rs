//! Seed derivation and random streams.
//!
//! Every random decision in the toolkit draws from a stream derived from
//! `(root_seed, domain_tag, index)`. The tuple is hashed with SHA-256 and the
//! digest seeds a ChaCha8 generator, so a stream depends only on its tuple and
//! never on the order in which work items are scheduled.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Root of a family of derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeededRng {
    pub root_seed: u64,
}

impl SeededRng {
    pub fn new(root_seed: u64) -> Self {
        SeededRng { root_seed }
    }

    pub fn stream(&self, domain_tag: &str, index: u64) -> RngStream {
        derive_stream(self.root_seed, domain_tag, index)
    }

    /// Derives a child seed, for components that take a plain `u64`.
    pub fn child_seed(&self, domain_tag: &str, index: u64) -> u64 {
        u64::from_le_bytes(digest(self.root_seed, domain_tag, index)[..8].try_into().unwrap())
    }
}

fn digest(root_seed: u64, domain_tag: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"occkit-stream-v1");
    h.update(root_seed.to_le_bytes());
    h.update((domain_tag.len() as u64).to_le_bytes());
    h.update(domain_tag.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

pub fn derive_stream(root_seed: u64, domain_tag: &str, index: u64) -> RngStream {
    RngStream {
        inner: ChaCha8Rng::from_seed(digest(root_seed, domain_tag, index)),
    }
}

/// A deterministic, platform-independent random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    /// Uniform real in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform real in `[lo, hi]` (returns `lo` when the interval is degenerate).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            lo
        } else {
            lo + (hi - lo) * self.uniform()
        }
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn coin(&mut self) -> bool {
        self.inner.gen::<bool>()
    }

    pub fn beta(&mut self, a: f64, b: f64) -> Result<f64> {
        let dist = Beta::new(a, b).map_err(|e| Error::param(format!("Beta({a}, {b}): {e}")))?;
        Ok(dist.sample(&mut self.inner))
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// `amount` distinct indices from `0..n`, in sampling order.
    pub fn sample_indices(&mut self, n: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, amount).into_vec()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(s: &mut RngStream) -> Vec<f64> {
        (0..100).map(|_| s.uniform()).collect()
    }

    #[test]
    fn same_tuple_same_stream() {
        let a = draws(&mut derive_stream(7, "mask", 0));
        let b = draws(&mut derive_stream(7, "mask", 0));
        assert_eq!(a, b);
    }

    #[test]
    fn different_index_differs() {
        let a = draws(&mut derive_stream(7, "mask", 0));
        let b = draws(&mut derive_stream(7, "mask", 1));
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
        let c = draws(&mut derive_stream(7, "img", 0));
        assert_ne!(a, c);
    }

    #[test]
    fn tag_and_index_are_not_confusable() {
        // "ab",1 must not collide with "a" followed by other bytes
        assert_ne!(
            SeededRng::new(1).child_seed("ab", 1),
            SeededRng::new(1).child_seed("a", 1)
        );
    }

    #[test]
    fn uniform_mean_within_bound() {
        // sd of the mean = sqrt(1/12 / 1e5) ~ 9.1e-4, so ±0.005 is > 5 sigma
        let mut s = derive_stream(7, "mask", 0);
        let n = 100_000;
        let mean = (0..n).map(|_| s.uniform()).sum::<f64>() / n as f64;
        assert!((0.495..=0.505).contains(&mean), "mean {mean}");
    }

    #[test]
    fn normal_moments() {
        let mut s = derive_stream(3, "n", 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn beta_rejects_bad_params() {
        let mut s = derive_stream(0, "b", 0);
        assert!(s.beta(0.0, 1.0).is_err());
        assert!(s.beta(1.0, -1.0).is_err());
        let x = s.beta(2.0, 1.0).unwrap();
        assert!((0.0..=1.0).contains(&x));
    }
}
