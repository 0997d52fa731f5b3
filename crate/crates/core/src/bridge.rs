//! The VP reciprocal (bridge) kernel, conditional-score regression targets and
//! the Tweedie denoiser.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{domain, Error, Result};
use crate::schedule::ScheduleParams;

/// Loss times are drawn from `[T_EPS, 1 - T_EPS]`.
pub const T_EPS: f64 = 1e-4;

/// `X_t | X_0, X_1 ~ N(coeff0 X_0 + coeff1 X_1, var I)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct BridgeMoments {
    pub coeff0: f64,
    pub coeff1: f64,
    pub var: f64,
}

pub fn bridge_moments(params: &ScheduleParams, t: f64) -> Result<BridgeMoments> {
    let k = params.kappa(t)?;
    let kb = params.kappa_bar(t)?;
    let kb1 = params.kappa_bar(1.0)?;
    let denom = 1.0 - kb1 * kb1;
    if denom <= 0.0 {
        return Err(domain("degenerate schedule: kappa_bar(1) = 1"));
    }
    let (a, b) = (1.0 - k * k, 1.0 - kb * kb);
    Ok(BridgeMoments {
        coeff0: kb * a / denom,
        coeff1: k * b / denom,
        var: a * b / denom,
    })
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

pub fn sample_bridge(
    params: &ScheduleParams,
    t: f64,
    x0: ArrayView1<f64>,
    x1: ArrayView1<f64>,
    noise: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    check_dim(params.dim, x0.len())?;
    check_dim(params.dim, x1.len())?;
    check_dim(params.dim, noise.len())?;
    let m = bridge_moments(params, t)?;
    let sd = m.var.sqrt();
    Ok(Zip::from(&x0)
        .and(&x1)
        .and(&noise)
        .map_collect(|&a, &b, &z| m.coeff0 * a + m.coeff1 * b + sd * z))
}

/// Row-wise bridge samples with one time per row.
pub fn sample_bridge_batch(
    params: &ScheduleParams,
    ts: &[f64],
    x0: ArrayView2<f64>,
    x1: ArrayView2<f64>,
    noise: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_dim(x0.nrows(), ts.len())?;
    check_dim(x0.dim().0, x1.nrows())?;
    check_dim(x0.dim().0, noise.nrows())?;
    let mut out = Array2::zeros(x0.raw_dim());
    for (i, &t) in ts.iter().enumerate() {
        let row = sample_bridge(params, t, x0.row(i), x1.row(i), noise.row(i))?;
        out.row_mut(i).assign(&row);
    }
    Ok(out)
}

/// Slope and intercept weight of the affine score target
/// `sigma_t * grad log N(x_t; kb_t x0, 1 - kb_t²)`: returns `(-sigma/var, kb_t)`.
fn score_affine(params: &ScheduleParams, t: f64) -> Result<(f64, f64)> {
    let kb = params.kappa_bar(t)?;
    let var = 1.0 - kb * kb;
    if var <= 0.0 {
        return Err(domain(format!("score target needs t > 0, got t={t}")));
    }
    Ok((-params.sigma(t)? / var, kb))
}

/// Bridge-matching regression target `sigma_t ∇ log p_base(x_t | x0)`.
pub fn score_target(
    params: &ScheduleParams,
    t: f64,
    x0: ArrayView1<f64>,
    x_t: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    check_dim(x0.len(), x_t.len())?;
    let (slope, kb) = score_affine(params, t)?;
    Ok(Zip::from(&x0).and(&x_t).map_collect(|&a, &x| slope * (x - kb * a)))
}

pub fn score_target_batch(
    params: &ScheduleParams,
    ts: &[f64],
    x0: ArrayView2<f64>,
    x_t: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_dim(x0.nrows(), ts.len())?;
    check_dim(x0.nrows(), x_t.nrows())?;
    let mut out = Array2::zeros(x_t.raw_dim());
    for (i, &t) in ts.iter().enumerate() {
        out.row_mut(i).assign(&score_target(params, t, x0.row(i), x_t.row(i))?);
    }
    Ok(out)
}

/// One-step denoiser `(x1 + (1 - kb_1²) v_1 / sigma_1) / kb_1`.
pub fn tweedie_denoise(
    params: &ScheduleParams,
    x1: ArrayView1<f64>,
    v1_value: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    check_dim(x1.len(), v1_value.len())?;
    let (kb1, scale) = tweedie_coeffs(params)?;
    Ok(Zip::from(&x1).and(&v1_value).map_collect(|&x, &v| (x + scale * v) / kb1))
}

/// `(kb_1, (1 - kb_1²) / sigma_1)`.
pub(crate) fn tweedie_coeffs(params: &ScheduleParams) -> Result<(f64, f64)> {
    let kb1 = params.kappa_bar(1.0)?;
    if kb1 <= 0.0 {
        return Err(domain("tweedie_denoise needs kappa_bar(1) > 0"));
    }
    Ok((kb1, (1.0 - kb1 * kb1) / params.sigma(1.0)?))
}

pub fn tweedie_denoise_batch(
    params: &ScheduleParams,
    x1: ArrayView2<f64>,
    v1: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_dim(x1.ncols(), v1.ncols())?;
    check_dim(x1.nrows(), v1.nrows())?;
    let (kb1, scale) = tweedie_coeffs(params)?;
    Ok(Zip::from(&x1).and(&v1).map_collect(|&x, &v| (x + scale * v) / kb1))
}

/// How far the bridge forgets its terminal endpoint. With `X_1 ~ N(0, I)`
/// drawn independently of `X_0`, the bridge law of `X_t` given `X_0` is
/// `N(coeff0 X_0, (coeff1² + var) I)`; the base transition is
/// `N(κ̄_t X_0, (1 − κ̄_t²) I)`. Returns the largest gap in either the mean
/// coefficient or the variance over `t = k / grid`, `k = 1..grid`. A small gap
/// means bridge matching on the independent coupling regresses onto the same
/// conditional paths as denoising score matching.
pub fn memoryless_gap(params: &ScheduleParams, grid: usize) -> Result<f64> {
    let mut gap = 0.0f64;
    for k in 1..grid {
        let t = k as f64 / grid as f64;
        let m = bridge_moments(params, t)?;
        let kb = params.kappa_bar(t)?;
        gap = gap
            .max((m.coeff0 - kb).abs())
            .max((m.coeff1 * m.coeff1 + m.var - (1.0 - kb * kb)).abs());
    }
    Ok(gap)
}
