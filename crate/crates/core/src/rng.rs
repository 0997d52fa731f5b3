//! Seeded random streams.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A reproducible stream of random draws.
///
/// A stream is identified by `(seed, label)`. Forking by label gives
/// statistically independent streams (distinct ChaCha stream ids), so the
/// forward and backward solvers never share noise.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a, stable across platforms and releases.
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            seed,
            stream,
            counter: 0,
            rng,
        }
    }

    /// Derive an independent stream. Forking does not advance `self`.
    pub fn fork(&self, label: &str) -> Self {
        let stream = label_hash(label) ^ self.stream.rotate_left(17);
        Self::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of draws taken so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn normal(&mut self) -> f64 {
        self.counter += 1;
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.counter += 1;
        self.rng.gen::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.counter += 1;
        self.rng.gen_range(0..n)
    }

    pub fn normal_vec(&mut self, n: usize) -> Array1<f64> {
        Array1::from_shape_fn(n, |_| self.normal())
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| self.normal())
    }

    /// `n` times drawn uniformly from `[eps, 1 - eps]`.
    pub fn times(&mut self, n: usize, eps: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform_in(eps, 1.0 - eps)).collect()
    }
}
