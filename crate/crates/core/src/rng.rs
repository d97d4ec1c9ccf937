//! Counter-based Gaussian noise.
//!
//! Every draw is a pure function of `(seed, stream, step, coordinate)`: a
//! ChaCha8 keystream is selected by the seed and the stream (path) index, and
//! each step owns a fixed block of keystream words, so the increment of any
//! step can be regenerated without replaying earlier steps. Thread scheduling
//! therefore cannot change results.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const TWO_POW_M53: f64 = 1.0 / 9_007_199_254_740_992.0;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for a named sub-experiment (e.g. the two sides
/// of a Harnack comparison).
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    mix64(seed ^ mix64(purpose.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

fn key_from_seed(seed: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut z = seed;
    for chunk in key.chunks_mut(8) {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        chunk.copy_from_slice(&mix64(z).to_le_bytes());
    }
    key
}

/// Uniform and Gaussian variates for one `(seed, stream)` pair.
#[derive(Clone)]
pub struct CounterRng {
    inner: ChaCha8Rng,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::from_seed(key_from_seed(seed));
        inner.set_stream(stream);
        Self { inner }
    }

    /// Moves to an absolute position measured in 32-bit keystream words.
    pub fn seek_words(&mut self, word: u128) {
        self.inner.set_word_pos(word);
    }

    /// Uniform on `[0, 1)` with 53 bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    /// Uniform on `(0, 1]`.
    fn uniform_open_low(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) + 1) as f64 * TWO_POW_M53
    }

    /// Two independent standard normals (Box–Muller, four keystream words).
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open_low();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }
}

/// Brownian increments `dB` of variance `h` for one path.
#[derive(Clone)]
pub struct NoiseStream {
    rng: CounterRng,
    dim: usize,
    sqrt_h: f64,
    next_step: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, path_index: u64, dim: usize, h: f64) -> Self {
        Self {
            rng: CounterRng::new(seed, path_index),
            dim,
            sqrt_h: h.sqrt(),
            next_step: 0,
        }
    }

    fn words_per_step(&self) -> u128 {
        4 * self.dim.div_ceil(2) as u128
    }

    /// Fills `out` with the increment of `step`, seeking if needed. Sequential
    /// calls (`step = 0, 1, 2, ...`) never seek.
    pub fn increment(&mut self, step: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        if step != self.next_step {
            self.rng.seek_words(step as u128 * self.words_per_step());
        }
        let mut k = 0;
        while k < self.dim {
            let (a, b) = self.rng.normal_pair();
            out[k] = a * self.sqrt_h;
            if k + 1 < self.dim {
                out[k + 1] = b * self.sqrt_h;
            }
            k += 2;
        }
        self.next_step = step + 1;
    }
}
