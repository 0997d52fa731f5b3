use crate::bridge::BridgeMoments;
use crate::error::Result;
use crate::schedule::ScheduleParams;

/// Posterior of `X_t` given `(X_0, X_1)` by conjugate Gaussian algebra.
///
/// With `X_t | X_0 ~ N(a x0, p)` and `X_1 | X_t ~ N(b x_t, q)`, the posterior is
/// `N((a q x0 + b p x1) / (q + b² p), p q / (q + b² p))`. Only the one-step
/// transition kernels are used.
pub fn gaussian_bridge_conditioning(params: &ScheduleParams, t: f64) -> Result<BridgeMoments> {
    let (a, p) = params.transition_coeffs(0.0, t)?;
    let (b, q) = params.transition_coeffs(t, 1.0)?;
    let denom = q + b * b * p;
    Ok(BridgeMoments {
        coeff0: a * q / denom,
        coeff1: b * p / denom,
        var: p * q / denom,
    })
}
