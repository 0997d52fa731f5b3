//! Trajectory and distribution diagnostics.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{domain, Error, Result};
use crate::parallel::sum_chunks;
use crate::rng::RngStream;
use crate::schedule::ScheduleParams;
use crate::sde::{EulerMaruyama, Trajectory, VectorField};
use crate::stage1::CouplingBatch;

pub const DEFAULT_MODE_RADIUS: f64 = 0.5;

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-sample `Σ_i ‖X_{i+1} − X_i‖² / ‖X_1 − X_0‖²`.
///
/// Bounded below by `1/T` for `T` steps, with equality for a straight path
/// traversed at constant speed.
pub fn straightness(traj: &Trajectory) -> Result<Vec<f64>> {
    let steps = traj.steps();
    if steps < 1 {
        return Err(domain("straightness needs at least one step"));
    }
    (0..traj.batch())
        .map(|i| {
            let path = traj.states.index_axis(Axis(1), i);
            let net = sq_dist(path.row(steps), path.row(0));
            if net == 0.0 {
                return Err(Error::NonFinite {
                    index: i,
                    context: "zero net displacement".into(),
                });
            }
            let arc: f64 = (0..steps).map(|k| sq_dist(path.row(k + 1), path.row(k))).sum();
            Ok(arc / net)
        })
        .collect()
}

/// Mean distance of `reps` backward samples from the same `x1` to their
/// centroid, averaged over the batch.
pub fn trajectory_variance_with(
    solver: EulerMaruyama,
    params: &ScheduleParams,
    v: &dyn VectorField,
    x1: ArrayView2<f64>,
    reps: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if reps < 2 {
        return Err(domain("trajectory_variance needs reps >= 2"));
    }
    let (n, d) = x1.dim();
    // sample i, repetition r sits at row i * reps + r
    let tiled = Array2::from_shape_fn((n * reps, d), |(row, k)| x1[[row / reps, k]]);
    let out = solver.backward_terminal(params, v, tiled.view(), rng)?;
    let mut total = 0.0;
    for i in 0..n {
        let group = out.slice(ndarray::s![i * reps..(i + 1) * reps, ..]);
        let centroid = group.mean_axis(Axis(0)).expect("reps >= 2");
        let spread: f64 = group
            .outer_iter()
            .map(|row| sq_dist(row, centroid.view()).sqrt())
            .sum();
        total += spread / reps as f64;
    }
    Ok(total / n as f64)
}

pub fn trajectory_variance(
    params: &ScheduleParams,
    v: &dyn VectorField,
    x1: ArrayView2<f64>,
    reps: usize,
    nfe: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    trajectory_variance_with(EulerMaruyama::new(nfe), params, v, x1, reps, rng)
}

/// Mean `‖x̂_0 − x_0‖` after a forward pass with `u` and a backward pass
/// with `v`.
pub fn inversion_error_with(
    solver: EulerMaruyama,
    params: &ScheduleParams,
    u: &dyn VectorField,
    v: &dyn VectorField,
    x0: ArrayView2<f64>,
    rng: &mut RngStream,
) -> Result<f64> {
    let mut fwd = rng.fork("inversion/forward");
    let mut bwd = rng.fork("inversion/backward");
    let x1 = solver.forward_terminal(params, u, x0, &mut fwd)?;
    let back = solver.backward_terminal(params, v, x1.view(), &mut bwd)?;
    let total: f64 = back
        .outer_iter()
        .zip(x0.outer_iter())
        .map(|(a, b)| sq_dist(a, b).sqrt())
        .sum();
    Ok(total / x0.nrows() as f64)
}

pub fn inversion_error(
    params: &ScheduleParams,
    u: &dyn VectorField,
    v: &dyn VectorField,
    x0: ArrayView2<f64>,
    nfe: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    inversion_error_with(EulerMaruyama::new(nfe), params, u, v, x0, rng)
}

fn mean_cross_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let total = sum_chunks(a.nrows(), 64, |r| {
        let mut acc = 0.0;
        for i in r {
            let ai = a.row(i);
            for bj in b.outer_iter() {
                acc += sq_dist(ai, bj).sqrt();
            }
        }
        acc
    });
    total / (a.nrows() * b.nrows()) as f64
}

fn mean_within_distance(a: ArrayView2<f64>) -> f64 {
    let n = a.nrows();
    if n < 2 {
        return 0.0;
    }
    let total = sum_chunks(n, 64, |r| {
        let mut acc = 0.0;
        for i in r {
            let ai = a.row(i);
            for j in (i + 1)..n {
                acc += sq_dist(ai, a.row(j)).sqrt();
            }
        }
        acc
    });
    2.0 * total / (n * (n - 1)) as f64
}

/// Energy distance `2 E‖A − B‖ − E‖A − A′‖ − E‖B − B′‖`.
///
/// Within-sample terms are U-statistics (distinct pairs only); the cross term
/// averages all pairs. The unbiased estimate can dip slightly below zero when
/// the two distributions coincide; it is clamped at zero. Passing the same
/// sample set twice therefore gives a value of order `E‖A − A′‖ / n`, clamped
/// to zero.
pub fn energy_distance<'x>(a: ArrayView2<'x, f64>, b: ArrayView2<'x, f64>) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(domain("energy_distance needs non-empty samples"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    // fixed argument order so that swapping inputs gives the same bits
    let swap = (a.nrows(), a.ncols()).cmp(&(b.nrows(), b.ncols())).then_with(|| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let (a, b) = if swap.is_gt() { (b.view(), a.view()) } else { (a.view(), b.view()) };
    let value = 2.0 * mean_cross_distance(a, b) - mean_within_distance(a) - mean_within_distance(b);
    Ok(value.max(0.0))
}

/// Number of modes holding at least 1% of the samples within `radius`.
pub fn mode_coverage(samples: ArrayView2<f64>, modes: ArrayView2<f64>, radius: f64) -> usize {
    let need = (0.01 * samples.nrows() as f64).max(1.0);
    modes
        .outer_iter()
        .filter(|m| {
            let hits = samples
                .outer_iter()
                .filter(|s| sq_dist(*s, *m) <= radius * radius)
                .count();
            hits as f64 >= need
        })
        .count()
}

/// Pearson correlation between `x0[:, d]` and `x1[:, d]` for each dimension.
pub fn coupling_corr(coupling: &CouplingBatch) -> Vec<f64> {
    let n = coupling.len() as f64;
    (0..coupling.x0.ncols())
        .map(|d| {
            let a = coupling.x0.column(d);
            let b = coupling.x1.column(d);
            let (ma, mb) = (a.sum() / n, b.sum() / n);
            let mut sab = 0.0;
            let mut saa = 0.0;
            let mut sbb = 0.0;
            for (x, y) in a.iter().zip(b.iter()) {
                sab += (x - ma) * (y - mb);
                saa += (x - ma) * (x - ma);
                sbb += (y - mb) * (y - mb);
            }
            sab / (saa * sbb).sqrt()
        })
        .collect()
}

/// Per-dimension sample variance.
pub fn column_variance(x: ArrayView2<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    x.axis_iter(Axis(1))
        .map(|c| {
            let m = c.sum() / n;
            c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
        })
        .collect()
}
