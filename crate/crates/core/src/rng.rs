//! Keyed random streams.
//!
//! Every stream is a ChaCha8 keystream whose 256-bit key is expanded from the
//! master seed and whose 64-bit stream id encodes `(realization, substream)`.
//! ChaCha is counter based, so a stream's output depends only on its key and
//! never on how many other streams were drawn from before it, or on which
//! thread draws it.

use std::f64::consts::PI;

use rand::distr::Open01;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Role of a stream inside one Monte Carlo realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Substream {
    /// Stable increments of the subordinator.
    Subordinator,
    /// Standard normals behind the time-changed Brownian increments.
    Brownian,
    /// Bridge fill-in draws used only by the duality cross-check.
    Bridge,
}

impl Substream {
    fn tag(self) -> u64 {
        match self {
            Substream::Subordinator => 0,
            Substream::Brownian => 1,
            Substream::Bridge => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub realization: u64,
    pub substream: Substream,
}

impl StreamKey {
    pub fn new(master_seed: u64, realization: u64, substream: Substream) -> Self {
        StreamKey {
            master_seed,
            realization,
            substream,
        }
    }
}

/// Uniform 64-bit words from a keyed generator, plus the handful of laws the
/// simulation needs.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
}

/// Builds the stream for `key`. Deterministic in the key.
pub fn derive_stream(key: StreamKey) -> RandomStream {
    let mut seed = [0u8; 32];
    let mut state = key.master_seed;
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    // Four tags fit in the low two bits; realizations above 2^62 wrap.
    rng.set_stream(key.realization.wrapping_shl(2) | key.substream.tag());
    RandomStream { rng }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomStream {
    /// Uniform on the open interval (0, 1); never returns either endpoint.
    pub fn uniform_open(&mut self) -> f64 {
        self.rng.sample(Open01)
    }

    /// Exponential(1) by inversion of an open uniform, so strictly positive.
    pub fn exponential_unit(&mut self) -> f64 {
        -self.uniform_open().ln()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on (-pi/2, pi/2), as pi * (u - 1/2).
    pub fn uniform_half_angle(&mut self) -> f64 {
        PI * (self.uniform_open() - 0.5)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_one_sample, normal_cdf, MeanAccumulator};

    fn key(seed: u64, realization: u64, substream: Substream) -> StreamKey {
        StreamKey::new(seed, realization, substream)
    }

    fn words(k: StreamKey, n: usize) -> Vec<u64> {
        let mut s = derive_stream(k);
        (0..n).map(|_| s.next_u64()).collect()
    }

    #[test]
    fn same_key_same_sequence() {
        let k = key(7, 3, Substream::Brownian);
        assert_eq!(words(k, 1000), words(k, 1000));
    }

    #[test]
    fn realization_index_separates_streams() {
        let a = words(key(7, 3, Substream::Brownian), 10);
        let b = words(key(7, 4, Substream::Brownian), 10);
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
    }

    #[test]
    fn substream_tag_separates_streams() {
        let a = words(key(7, 3, Substream::Subordinator), 10);
        let b = words(key(7, 3, Substream::Brownian), 10);
        let c = words(key(7, 3, Substream::Bridge), 10);
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
        assert!(b.iter().zip(&c).any(|(x, y)| x != y));
    }

    #[test]
    fn master_seed_separates_streams() {
        let a = words(key(0, 0, Substream::Subordinator), 10);
        let b = words(key(1, 0, Substream::Subordinator), 10);
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
    }

    #[test]
    fn replay_is_independent_of_interleaving() {
        let k = key(11, 5, Substream::Subordinator);
        let alone = words(k, 50);
        // Draw from a pile of other streams first; the replay must not notice.
        let mut others: Vec<_> = (0..8)
            .map(|i| derive_stream(key(11, i, Substream::Brownian)))
            .collect();
        for s in others.iter_mut() {
            for _ in 0..17 {
                s.next_u64();
            }
        }
        assert_eq!(alone, words(k, 50));
    }

    #[test]
    fn exponential_mean() {
        let mut s = derive_stream(key(1, 0, Substream::Subordinator));
        let mut acc = MeanAccumulator::default();
        for _ in 0..1_000_000 {
            acc.push(s.exponential_unit());
        }
        assert!((acc.mean() - 1.0).abs() < 0.01, "mean {}", acc.mean());
    }

    #[test]
    fn normal_variance() {
        let mut s = derive_stream(key(2, 0, Substream::Brownian));
        let mut acc = MeanAccumulator::default();
        for _ in 0..1_000_000 {
            acc.push(s.standard_normal());
        }
        assert!(
            (acc.variance() - 1.0).abs() < 0.02,
            "var {}",
            acc.variance()
        );
    }

    #[test]
    fn uniform_stays_open() {
        let mut s = derive_stream(key(3, 0, Substream::Subordinator));
        for _ in 0..1_000_000 {
            let u = s.uniform_open();
            assert!(u > 0.0 && u < 1.0);
        }
        for _ in 0..100_000 {
            let v = s.uniform_half_angle();
            assert!(v.cos() > 0.0);
        }
    }

    #[test]
    fn marginals_pass_ks() {
        let n = 100_000;
        let mut s = derive_stream(key(4, 9, Substream::Subordinator));
        let u: Vec<f64> = (0..n).map(|_| s.uniform_open()).collect();
        let e: Vec<f64> = (0..n).map(|_| s.exponential_unit()).collect();
        let z: Vec<f64> = (0..n).map(|_| s.standard_normal()).collect();
        assert!(ks_one_sample(&u, |x| x).p_value > 1e-3);
        assert!(ks_one_sample(&e, |x| 1.0 - (-x).exp()).p_value > 1e-3);
        assert!(ks_one_sample(&z, normal_cdf).p_value > 1e-3);
    }
}
