//! Desk-scale datasets and the Gaussian prior.

use std::f64::consts::{PI, TAU};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::rng::RngStream;

pub const RING_RADIUS: f64 = 2.0;
pub const RING_STD: f64 = 0.1;
pub const RING_MODES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Eight Gaussians of std 0.1 on the circle of radius 2.
    GaussianRing8,
    TwoMoons,
    Checkerboard,
    IsotropicGaussian { scale: f64, dim: usize },
}

impl DatasetSpec {
    pub fn dim(&self) -> usize {
        match self {
            DatasetSpec::IsotropicGaussian { dim, .. } => *dim,
            _ => 2,
        }
    }

    /// Draw `n` samples as rows.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Array2<f64> {
        let mut out = Array2::zeros((n, self.dim()));
        for mut row in out.outer_iter_mut() {
            match self {
                DatasetSpec::GaussianRing8 => {
                    let k = rng.index(RING_MODES);
                    let a = TAU * k as f64 / RING_MODES as f64;
                    row[0] = RING_RADIUS * a.cos() + RING_STD * rng.normal();
                    row[1] = RING_RADIUS * a.sin() + RING_STD * rng.normal();
                }
                DatasetSpec::TwoMoons => {
                    let theta = PI * rng.uniform();
                    let (x, y) = if rng.uniform() < 0.5 {
                        (theta.cos(), theta.sin())
                    } else {
                        (1.0 - theta.cos(), 0.5 - theta.sin())
                    };
                    // centre the pair on the origin and stretch to roughly [-2, 2]
                    row[0] = 1.3 * (x - 0.5 + 0.05 * rng.normal());
                    row[1] = 1.3 * (y - 0.25 + 0.05 * rng.normal());
                }
                DatasetSpec::Checkerboard => {
                    let x = rng.uniform_in(-2.0, 2.0);
                    let y = rng.uniform() - 2.0 * rng.index(2) as f64;
                    row[0] = x;
                    row[1] = y + (x.floor().rem_euclid(2.0));
                }
                DatasetSpec::IsotropicGaussian { scale, .. } => {
                    for v in row.iter_mut() {
                        *v = scale * rng.normal();
                    }
                }
            }
        }
        out
    }

    /// Mode centres, for datasets that have them.
    pub fn modes(&self) -> Option<Array2<f64>> {
        match self {
            DatasetSpec::GaussianRing8 => Some(ring_modes()),
            _ => None,
        }
    }
}

pub fn ring_modes() -> Array2<f64> {
    Array2::from_shape_fn((RING_MODES, 2), |(k, d)| {
        let a = TAU * k as f64 / RING_MODES as f64;
        RING_RADIUS * if d == 0 { a.cos() } else { a.sin() }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    StandardGaussian,
}

/// The prior `p ∝ exp(−E)`; for the standard Gaussian `E(x) = ‖x‖²/2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub dim: usize,
}

impl PriorSpec {
    pub fn standard(dim: usize) -> Self {
        Self {
            kind: PriorKind::StandardGaussian,
            dim,
        }
    }

    pub fn energy(&self, x: ArrayView1<f64>) -> f64 {
        match self.kind {
            PriorKind::StandardGaussian => 0.5 * x.dot(&x),
        }
    }

    pub fn energy_grad(&self, x: ArrayView1<f64>) -> Array1<f64> {
        match self.kind {
            PriorKind::StandardGaussian => x.to_owned(),
        }
    }

    pub fn energy_grad_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match self.kind {
            PriorKind::StandardGaussian => x.to_owned(),
        }
    }

    /// Log density with the normalizing constant dropped.
    pub fn log_density(&self, x: ArrayView1<f64>) -> f64 {
        -self.energy(x)
    }

    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Array2<f64> {
        match self.kind {
            PriorKind::StandardGaussian => rng.normal_matrix(n, self.dim),
        }
    }
}
