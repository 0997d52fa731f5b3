//! Helpers shared by unit tests.

use ndarray::ArrayView2;

use crate::nn::{Architecture, ControlField, TimeEmbedding};
use crate::rng::RngStream;

/// A small field with random (not zero-initialized) weights.
pub(crate) fn random_field(seed: u64, input_dim: usize, output_dim: usize, timed: bool) -> ControlField {
    let embed = timed.then(|| TimeEmbedding::with_period(2, 2.0));
    let mut f = ControlField::init(seed, Architecture::silu(input_dim, &[6, 5], output_dim), embed).unwrap();
    let mut rng = RngStream::new(seed ^ 0x5eed);
    for p in f.params.iter_mut() {
        *p = 0.4 * rng.normal();
    }
    f
}

pub(crate) fn column_corr(a: ArrayView2<f64>, b: ArrayView2<f64>, col: usize) -> f64 {
    let (x, y) = (a.column(col), b.column(col));
    let n = x.len() as f64;
    let (mx, my) = (x.sum() / n, y.sum() / n);
    let cov: f64 = x.iter().zip(y.iter()).map(|(p, q)| (p - mx) * (q - my)).sum();
    let vx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

