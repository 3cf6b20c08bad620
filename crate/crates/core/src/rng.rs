//! Deterministic random streams.
//!
//! The generator is xoshiro256++ whose 256-bit state is expanded from the
//! 64-bit seed with splitmix64. Uniform reals use the top 24 bits of one
//! 32-bit draw, so the stream is identical on every platform.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Seed for an independent child stream. Children are a pure function of
    /// `(seed, stream)` and do not consume from the parent.
    pub fn child_seed(seed: u64, stream: u64) -> u64 {
        splitmix64(seed ^ splitmix64(stream.wrapping_add(1)))
    }

    pub fn child(&self, stream: u64) -> Rng {
        Rng::new(Self::child_seed(self.seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 24 bits of resolution.
    pub fn next_f32(&mut self) -> f32 {
        (self.inner.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_scalar(&mut self, lo: f32, hi: f32) -> f32 {
        let v = lo + (hi - lo) * self.next_f32();
        // lo + (hi - lo) * u can round up to hi
        if v >= hi {
            hi.next_down()
        } else {
            v
        }
    }

    pub fn normal(&mut self) -> f32 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn uniform(&mut self, shape: &[usize], lo: f32, hi: f32) -> Result<Tensor> {
        if shape.is_empty() {
            return Err(Error::EmptyShape);
        }
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidRange { lo, hi });
        }
        Tensor::from_fn(shape, |_| self.uniform_scalar(lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_uniform_seed0() {
        let t = Rng::new(0).uniform(&[4], 0.0, 1.0).unwrap();
        let bits: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, GOLDEN_SEED0);
    }

    // Matches an independent xoshiro256++ implementation.
    const GOLDEN_SEED0: [u32; 4] = [1051078330, 1053013214, 1052254142, 1010544576];

    #[test]
    fn degenerate_range_rejected() {
        assert!(matches!(
            Rng::new(1).uniform(&[3], 0.0, 0.0),
            Err(Error::InvalidRange { .. })
        ));
        assert!(Rng::new(1).uniform(&[3], 1.0, 0.0).is_err());
        assert!(matches!(
            Rng::new(1).uniform(&[], 0.0, 1.0),
            Err(Error::EmptyShape)
        ));
    }

    #[test]
    fn values_in_range() {
        let t = Rng::new(9).uniform(&[2, 3], -2.0, 5.0).unwrap();
        assert_eq!(t.len(), 6);
        assert!(t.data().iter().all(|&v| (-2.0..5.0).contains(&v)));
    }

    #[test]
    fn children_are_independent_of_parent_state() {
        let mut a = Rng::new(42);
        let c1 = a.child(3).next_u64();
        a.next_u64();
        let c2 = a.child(3).next_u64();
        assert_eq!(c1, c2);
        assert_ne!(Rng::new(42).child(3).next_u64(), Rng::new(42).child(4).next_u64());
    }
}
