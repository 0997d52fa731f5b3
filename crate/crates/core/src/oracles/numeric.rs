/// Composite trapezoid rule on `n` equal panels.
pub fn quadrature<F: Fn(f64) -> f64>(f: F, s: f64, t: f64, n: usize) -> f64 {
    let n = n.max(1);
    let h = (t - s) / n as f64;
    let interior: f64 = (1..n).map(|i| f(s + i as f64 * h)).sum();
    h * (0.5 * f(s) + interior + 0.5 * f(t))
}

/// Central-difference gradient of a scalar function.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise relative error `|a − b| / max(|b|, floor)`. The floor
/// keeps components that are zero up to rounding from dominating.
pub fn max_rel_err(analytic: &[f64], reference: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), reference.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs() / b.abs().max(floor))
        .fold(0.0, f64::max)
}
