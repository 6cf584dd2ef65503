//! Portable seeded randomness.
//!
//! The generator is PCG XSL-RR 128/64 (`pcg64`): a 128-bit LCG with
//! multiplier `0x2360ed051fc65da44385df649fccf645`, output by xor-shift-low
//! and a 6-bit rotation. A seed `s` maps to state `s` and the fixed PCG
//! default stream `0xa02bdbf7bb3c0a7ac28fa16a64abf96`. Floats use the top
//! 53 bits: `(x >> 11) * 2^-53`. Nothing here depends on the platform RNG,
//! so fixtures are reproducible across machines and languages.

use rand_core::Rng as _;
use rand_pcg::Pcg64;

const STREAM: u128 = 0xa02b_dbf7_bb3c_0a7a_c28f_a16a_64ab_f96;

pub struct SeededRng(Pcg64);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng(Pcg64::new(seed as u128, STREAM))
    }

    /// Derives an independent generator for a named purpose.
    pub fn derive(seed: u64, salt: u64) -> Self {
        let mixed = (seed as u128) | ((salt as u128) << 64);
        SeededRng(Pcg64::new(mixed, STREAM))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform in `0..n` (`n > 0`), by rejection so there is no modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
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
    fn reproducible_and_distinct() {
        let a: Vec<u64> = {
            let mut r = SeededRng::new(7);
            (0..4).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = SeededRng::new(7);
            (0..4).map(|_| r.next_u64()).collect()
        };
        let c = SeededRng::new(8).next_u64();
        assert_eq!(a, b);
        assert_ne!(a[0], c);
    }

    #[test]
    fn floats_in_unit_interval() {
        let mut r = SeededRng::new(1);
        for _ in 0..1000 {
            let v = r.next_f64();
            assert!((0.0..1.0).contains(&v));
        }
    }
}
