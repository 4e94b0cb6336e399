//! Deterministic random streams.
//!
//! A [`RngStream`] names one independent pseudo-random sequence by
//! `(seed, stream_id)`. The generator behind it is ChaCha8, whose 64-bit
//! stream selector makes every stream addressable without shared state, so a
//! Monte-Carlo block draws the same numbers no matter which thread runs it
//! or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::matrix::C64;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub const fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Child stream addressed by `parts` below this one.
    pub fn derive(&self, parts: &[u64]) -> Self {
        let mut id = self.stream_id;
        for &p in parts {
            id = mix(id ^ mix(p));
        }
        Self {
            seed: self.seed,
            stream_id: id,
        }
    }

    /// Fresh generator positioned at the start of the stream.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// splitmix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream id for a tuple of indices, e.g. `(channel, snr, batch)`.
pub fn stream_id(parts: &[u64]) -> u64 {
    RngStream::new(0, 0).derive(parts).stream_id
}

pub fn rng_draw_gaussian(s: RngStream, n: usize) -> Vec<f64> {
    let mut rng = s.rng();
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[inline]
pub fn gaussian(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

/// One draw of `CN(0, var)`: independent real and imaginary parts of
/// variance `var / 2`.
#[inline]
pub fn complex_gaussian(rng: &mut StreamRng, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re = gaussian(rng);
    let im = gaussian(rng);
    C64::new(re * s, im * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_draw() {
        assert!(rng_draw_gaussian(RngStream::new(1, 2), 0).is_empty());
    }

    #[test]
    fn deterministic() {
        let s = RngStream::new(42, 7);
        assert_eq!(rng_draw_gaussian(s, 100), rng_draw_gaussian(s, 100));
        assert_ne!(
            rng_draw_gaussian(s, 10),
            rng_draw_gaussian(RngStream::new(42, 8), 10)
        );
    }

    #[test]
    fn moments() {
        let v = rng_draw_gaussian(RngStream::new(3, 0), 1_000_000);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn derived_streams_differ() {
        let base = RngStream::new(1, 0);
        assert_ne!(base.derive(&[0, 1]), base.derive(&[1, 0]));
        assert_eq!(base.derive(&[3, 4]), base.derive(&[3, 4]));
    }
}
