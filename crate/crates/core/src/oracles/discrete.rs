//! Exact static Schrödinger bridges on finite supports.
//!
//! The static bridge minimizes `KL(π ‖ P)` over couplings with marginals
//! `(mu, nu)`, where `P_ij = mu_i K_ij` is the base joint. Two independent
//! routes compute it: log-domain Sinkhorn scaling, and tilting the base joint
//! by a terminal cost through the SOC value function.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::schedule::ScheduleParams;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscreteBridgeProblem {
    pub x0_support: Vec<f64>,
    pub x1_support: Vec<f64>,
    pub mu: Array1<f64>,
    pub nu: Array1<f64>,
    /// Row `i` is `p_base(x1_j | x0_i)` over `j`.
    pub base_kernel: Array2<f64>,
}

fn check_distribution(name: &str, p: ArrayView1<f64>) -> Result<()> {
    if p.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(domain(format!("{name} has negative or non-finite entries")));
    }
    let s = p.sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(domain(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

impl DiscreteBridgeProblem {
    pub fn new(
        x0_support: Vec<f64>,
        x1_support: Vec<f64>,
        mu: Array1<f64>,
        nu: Array1<f64>,
        base_kernel: Array2<f64>,
    ) -> Result<Self> {
        let (m, n) = base_kernel.dim();
        if mu.len() != m || x0_support.len() != m {
            return Err(Error::Dimension { expected: m, got: mu.len() });
        }
        if nu.len() != n || x1_support.len() != n {
            return Err(Error::Dimension { expected: n, got: nu.len() });
        }
        check_distribution("mu", mu.view())?;
        check_distribution("nu", nu.view())?;
        for (i, row) in base_kernel.outer_iter().enumerate() {
            check_distribution(&format!("kernel row {i}"), row)?;
        }
        Ok(Self {
            x0_support,
            x1_support,
            mu,
            nu,
            base_kernel,
        })
    }

    /// Kernel from the VP transition `X_1 | X_0`, renormalized on the grid.
    pub fn from_vp(
        params: &ScheduleParams,
        x0_support: Vec<f64>,
        x1_support: Vec<f64>,
        mu: Array1<f64>,
        nu: Array1<f64>,
    ) -> Result<Self> {
        let (c, v) = params.transition_coeffs(0.0, 1.0)?;
        let mut k = Array2::from_shape_fn((x0_support.len(), x1_support.len()), |(i, j)| {
            -(x1_support[j] - c * x0_support[i]).powi(2) / (2.0 * v)
        });
        for mut row in k.outer_iter_mut() {
            let lse = logsumexp(row.view());
            row.mapv_inplace(|l| (l - lse).exp());
        }
        Self::new(x0_support, x1_support, mu, nu, k)
    }

    /// A kernel whose rows all equal `row`: `X_1` ignores `X_0`.
    pub fn memoryless(
        x0_support: Vec<f64>,
        x1_support: Vec<f64>,
        mu: Array1<f64>,
        nu: Array1<f64>,
        row: Array1<f64>,
    ) -> Result<Self> {
        let k = Array2::from_shape_fn((mu.len(), row.len()), |(_, j)| row[j]);
        Self::new(x0_support, x1_support, mu, nu, k)
    }

    pub fn log_base_joint(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.base_kernel.dim(), |(i, j)| {
            self.mu[i].ln() + self.base_kernel[[i, j]].ln()
        })
    }
}

pub(crate) fn logsumexp(xs: ArrayView1<f64>) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `P_ij = mu_i K_ij`.
pub fn base_joint(problem: &DiscreteBridgeProblem) -> Array2<f64> {
    Array2::from_shape_fn(problem.base_kernel.dim(), |(i, j)| {
        problem.mu[i] * problem.base_kernel[[i, j]]
    })
}

pub fn total_variation(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    0.5 * a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn tv1(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    0.5 * a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SinkhornSolution {
    /// `diag(scale0) P diag(scale1)`.
    pub coupling: Array2<f64>,
    pub scale0: Array1<f64>,
    pub scale1: Array1<f64>,
    pub iterations: usize,
    /// Largest marginal total-variation residual on exit.
    pub residual: f64,
}

/// Log-domain Sinkhorn scaling of the base joint onto `(mu, nu)`.
///
/// Each iteration fits rows then columns; convergence is declared when the
/// larger of the row and column total-variation residuals is at most `tol`.
pub fn sinkhorn_static_sb(problem: &DiscreteBridgeProblem, max_iters: usize, tol: f64) -> Result<SinkhornSolution> {
    let log_p = problem.log_base_joint();
    let (m, n) = log_p.dim();
    let log_mu = problem.mu.mapv(f64::ln);
    let log_nu = problem.nu.mapv(f64::ln);
    let mut log_a = Array1::<f64>::zeros(m);
    let mut log_b = Array1::<f64>::zeros(n);
    let mut residual = f64::INFINITY;
    let assemble = |la: &Array1<f64>, lb: &Array1<f64>| {
        Array2::from_shape_fn((m, n), |(i, j)| (la[i] + log_p[[i, j]] + lb[j]).exp())
    };
    for it in 1..=max_iters {
        for i in 0..m {
            if problem.mu[i] == 0.0 {
                log_a[i] = 0.0;
                continue;
            }
            let row = Array1::from_shape_fn(n, |j| log_p[[i, j]] + log_b[j]);
            log_a[i] = log_mu[i] - logsumexp(row.view());
        }
        for j in 0..n {
            if problem.nu[j] == 0.0 {
                log_b[j] = f64::NEG_INFINITY;
                continue;
            }
            let col = Array1::from_shape_fn(m, |i| {
                if problem.mu[i] == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    log_p[[i, j]] + log_a[i]
                }
            });
            log_b[j] = log_nu[j] - logsumexp(col.view());
        }
        let pi = assemble(&log_a, &log_b);
        let rows = pi.sum_axis(Axis(1));
        let cols = pi.sum_axis(Axis(0));
        residual = tv1(rows.view(), problem.mu.view()).max(tv1(cols.view(), problem.nu.view()));
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            return Ok(SinkhornSolution {
                coupling: pi,
                scale0: log_a.mapv(f64::exp),
                scale1: log_b.mapv(f64::exp),
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iters,
        residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TiltedJoint {
    pub coupling: Array2<f64>,
    /// `V_0(x0_i) = −log Σ_j K_ij exp(−g_j)`.
    pub value0: Array1<f64>,
}

/// Optimal SOC joint `P_ij exp(−g_j + V_0(i))` for terminal cost `g`.
///
/// Entries with `g_j = +∞` receive no mass.
pub fn soc_tilted_joint(problem: &DiscreteBridgeProblem, g: ArrayView1<f64>) -> Result<TiltedJoint> {
    let (m, n) = problem.base_kernel.dim();
    if g.len() != n {
        return Err(Error::Dimension { expected: n, got: g.len() });
    }
    if g.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
        return Err(domain("terminal cost must be finite or +inf"));
    }
    let log_k = problem.base_kernel.mapv(f64::ln);
    let mut value0 = Array1::zeros(m);
    let mut coupling = Array2::zeros((m, n));
    for i in 0..m {
        let tilt = Array1::from_shape_fn(n, |j| log_k[[i, j]] - g[j]);
        let lse = logsumexp(tilt.view());
        if lse == f64::NEG_INFINITY {
            return Err(domain(format!("row {i} has no mass after tilting")));
        }
        value0[i] = -lse;
        for j in 0..n {
            coupling[[i, j]] = problem.mu[i] * (tilt[j] - lse).exp();
        }
    }
    Ok(TiltedJoint { coupling, value0 })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TerminalCostCheck {
    /// TV distance between the tilted joint and the Sinkhorn coupling.
    pub residual: f64,
    pub terminal_cost: Array1<f64>,
    pub tilted: TiltedJoint,
}

/// Tilt the base joint with `g = log(φ̂_1 / nu)`, where `φ̂_1` is the
/// Sinkhorn row scaling propagated through the kernel, and compare with the
/// Sinkhorn coupling.
pub fn nonmemoryless_terminal_cost_check(
    problem: &DiscreteBridgeProblem,
    solution: &SinkhornSolution,
) -> Result<TerminalCostCheck> {
    let (m, n) = problem.base_kernel.dim();
    let phi_hat0 = Array1::from_shape_fn(m, |i| solution.scale0[i] * problem.mu[i]);
    let phi_hat1 = Array1::from_shape_fn(n, |j| {
        (0..m).map(|i| phi_hat0[i] * problem.base_kernel[[i, j]]).sum::<f64>()
    });
    let g = Array1::from_shape_fn(n, |j| {
        if problem.nu[j] == 0.0 {
            f64::INFINITY
        } else {
            phi_hat1[j].ln() - problem.nu[j].ln()
        }
    });
    let tilted = soc_tilted_joint(problem, g.view())?;
    Ok(TerminalCostCheck {
        residual: total_variation(tilted.coupling.view(), solution.coupling.view()),
        terminal_cost: g,
        tilted,
    })
}

/// `KL(π ‖ P)` with `0 log 0 = 0`.
pub fn kl_to_base(coupling: ArrayView2<f64>, base: ArrayView2<f64>) -> f64 {
    coupling
        .iter()
        .zip(base.iter())
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q).ln())
        .sum()
}

/// The product coupling `mu ⊗ nu`.
pub fn product_coupling(mu: ArrayView1<f64>, nu: ArrayView1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((mu.len(), nu.len()), |(i, j)| mu[i] * nu[j])
}

/// Random strictly positive problem: marginals and kernel rows are
/// normalized exponentials of standard normals.
pub fn random_problem(m: usize, n: usize, rng: &mut crate::rng::RngStream) -> Result<DiscreteBridgeProblem> {
    let mut simplex = |k: usize| {
        let w = Array1::from_shape_fn(k, |_| rng.normal().exp());
        let s = w.sum();
        w / s
    };
    let mu = simplex(m);
    let nu = simplex(n);
    let mut kernel = Array2::zeros((m, n));
    for i in 0..m {
        kernel.row_mut(i).assign(&simplex(n));
    }
    let grid = |k: usize| (0..k).map(|i| i as f64).collect();
    DiscreteBridgeProblem::new(grid(m), grid(n), mu, nu, kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use ndarray::array;
    use proptest::prelude::*;

    fn grid(k: usize) -> Vec<f64> {
        (0..k).map(|i| i as f64).collect()
    }

    #[test]
    fn consistent_base_joint_is_a_fixed_point() {
        let mu = array![0.3, 0.7];
        let k = array![[0.9, 0.1], [0.2, 0.8]];
        let nu = array![0.3 * 0.9 + 0.7 * 0.2, 0.3 * 0.1 + 0.7 * 0.8];
        let p = DiscreteBridgeProblem::new(grid(2), grid(2), mu, nu, k).unwrap();
        let sol = sinkhorn_static_sb(&p, 10, 1e-12).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(total_variation(sol.coupling.view(), base_joint(&p).view()) < 1e-14);
    }

    #[test]
    fn constant_rows_give_product_coupling() {
        let p = DiscreteBridgeProblem::memoryless(
            grid(3),
            grid(2),
            array![0.2, 0.5, 0.3],
            array![0.6, 0.4],
            array![0.25, 0.75],
        )
        .unwrap();
        let sol = sinkhorn_static_sb(&p, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        let prod = product_coupling(p.mu.view(), p.nu.view());
        assert!(total_variation(sol.coupling.view(), prod.view()) < 1e-12);
    }

    #[test]
    fn two_by_two_matches_brute_force_kl() {
        // Couplings with marginals (0.5, 0.5) and (0.6, 0.4) form the
        // one-parameter family [[a, .5-a], [.6-a, a-.1]], a in (.1, .5).
        let p = DiscreteBridgeProblem::new(
            grid(2),
            grid(2),
            array![0.5, 0.5],
            array![0.6, 0.4],
            array![[0.8, 0.2], [0.3, 0.7]],
        )
        .unwrap();
        let base = base_joint(&p);
        let family = |a: f64| array![[a, 0.5 - a], [0.6 - a, a - 0.1]];
        let kl = |a: f64| kl_to_base(family(a).view(), base.view());
        let (mut lo, mut hi) = (0.1 + 1e-12, 0.5 - 1e-12);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if kl(m1) < kl(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let a_star = 0.5 * (lo + hi);
        let sol = sinkhorn_static_sb(&p, DEFAULT_MAX_ITERS, 1e-13).unwrap();
        assert!((sol.coupling[[0, 0]] - a_star).abs() < 1e-6, "{} vs {a_star}", sol.coupling[[0, 0]]);
        assert!(total_variation(sol.coupling.view(), family(a_star).view()) < 1e-5);
    }

    #[test]
    fn identity_kernel_gives_diagonal() {
        let mu = array![0.1, 0.6, 0.3];
        let p = DiscreteBridgeProblem::new(grid(3), grid(3), mu.clone(), mu.clone(), Array2::eye(3)).unwrap();
        let sol = sinkhorn_static_sb(&p, 100, 1e-14).unwrap();
        assert!(total_variation(sol.coupling.view(), Array2::from_diag(&mu).view()) < 1e-15);
    }

    #[test]
    fn zero_cost_leaves_base_joint() {
        let mut rng = RngStream::new(3);
        let p = random_problem(5, 4, &mut rng).unwrap();
        let tilt = soc_tilted_joint(&p, Array1::zeros(4).view()).unwrap();
        assert!(total_variation(tilt.coupling.view(), base_joint(&p).view()) < 1e-15);
        assert!(tilt.value0.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn terminal_cost_is_minus_log_column_scale() {
        let mut rng = RngStream::new(4);
        let p = random_problem(6, 6, &mut rng).unwrap();
        let sol = sinkhorn_static_sb(&p, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        let check = nonmemoryless_terminal_cost_check(&p, &sol).unwrap();
        let offset: Vec<f64> = (0..6).map(|j| check.terminal_cost[j] + sol.scale1[j].ln()).collect();
        for o in &offset {
            assert!((o - offset[0]).abs() < 1e-12, "{offset:?}");
        }
    }

    #[test]
    fn sinkhorn_and_tilting_agree_on_random_problems() {
        let mut rng = RngStream::new(5);
        for _ in 0..20 {
            let p = random_problem(16, 16, &mut rng).unwrap();
            let sol = sinkhorn_static_sb(&p, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
            let check = nonmemoryless_terminal_cost_check(&p, &sol).unwrap();
            assert!(check.residual < 1e-8, "{}", check.residual);
        }
    }

    #[test]
    fn sinkhorn_beats_feasible_perturbations() {
        let mut rng = RngStream::new(6);
        let p = random_problem(4, 4, &mut rng).unwrap();
        let base = base_joint(&p);
        let sol = sinkhorn_static_sb(&p, DEFAULT_MAX_ITERS, 1e-13).unwrap();
        let best = kl_to_base(sol.coupling.view(), base.view());
        let mut tried = 0;
        while tried < 100 {
            // Moving mass around a 2x2 cycle keeps both marginals fixed.
            let (i, k) = (rng.index(4), rng.index(4));
            let (j, l) = (rng.index(4), rng.index(4));
            if i == k || j == l {
                continue;
            }
            let eps = rng.uniform_in(-0.05, 0.05);
            let mut q = sol.coupling.clone();
            q[[i, j]] += eps;
            q[[k, l]] += eps;
            q[[i, l]] -= eps;
            q[[k, j]] -= eps;
            if q.iter().any(|&v| v < 0.0) {
                continue;
            }
            tried += 1;
            assert!(kl_to_base(q.view(), base.view()) >= best - 1e-12);
        }
    }

    #[test]
    fn memoryless_tilt_is_product() {
        let mut rng = RngStream::new(7);
        let base = random_problem(8, 8, &mut rng).unwrap();
        let row = base.base_kernel.row(0).to_owned();
        let p = DiscreteBridgeProblem::memoryless(grid(8), grid(8), base.mu.clone(), base.nu.clone(), row).unwrap();
        let sol = sinkhorn_static_sb(&p, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        let check = nonmemoryless_terminal_cost_check(&p, &sol).unwrap();
        let prod = product_coupling(p.mu.view(), p.nu.view());
        assert!(total_variation(check.tilted.coupling.view(), prod.view()) < 1e-12);
    }

    #[test]
    fn vp_kernel_coupling_is_far_from_product() {
        let params = ScheduleParams::new(4.0, 0.1, 1).unwrap();
        let x: Vec<f64> = (0..8).map(|i| -2.0 + 4.0 * i as f64 / 7.0).collect();
        let w = Array1::from_shape_fn(8, |i| (-x[i] * x[i] / 2.0).exp());
        let w = &w / w.sum();
        let p = DiscreteBridgeProblem::from_vp(&params, x.clone(), x, w.clone(), w).unwrap();
        let sol = sinkhorn_static_sb(&p, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        let check = nonmemoryless_terminal_cost_check(&p, &sol).unwrap();
        let prod = product_coupling(p.mu.view(), p.nu.view());
        assert!(total_variation(check.tilted.coupling.view(), prod.view()) > 0.05);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let k = array![[0.5, 0.5]];
        assert!(DiscreteBridgeProblem::new(grid(1), grid(2), array![1.0], array![0.7, 0.7], k.clone()).is_err());
        assert!(DiscreteBridgeProblem::new(grid(1), grid(2), array![1.0], array![0.5], k.clone()).is_err());
        assert!(DiscreteBridgeProblem::new(grid(1), grid(2), array![1.0], array![0.5, 0.5], array![[0.5, 0.6]]).is_err());
        let p = DiscreteBridgeProblem::new(grid(1), grid(2), array![1.0], array![0.5, 0.5], k).unwrap();
        assert!(soc_tilted_joint(&p, array![0.0].view()).is_err());
        assert!(soc_tilted_joint(&p, array![f64::NEG_INFINITY, 0.0].view()).is_err());
    }

    #[test]
    fn infeasible_support_does_not_converge() {
        // Column 1 is unreachable but has target mass.
        let p = DiscreteBridgeProblem::new(grid(2), grid(2), array![0.5, 0.5], array![0.5, 0.5], array![[1.0, 0.0], [1.0, 0.0]])
            .unwrap();
        assert!(matches!(sinkhorn_static_sb(&p, 50, 1e-10), Err(Error::NotConverged { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sinkhorn_marginals_and_tilt_rows(seed in 0u64..10_000, m in 2usize..7, n in 2usize..7) {
            let mut rng = RngStream::new(seed);
            let p = random_problem(m, n, &mut rng).unwrap();
            let sol = sinkhorn_static_sb(&p, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
            let rows = sol.coupling.sum_axis(Axis(1));
            let cols = sol.coupling.sum_axis(Axis(0));
            prop_assert!(tv1(rows.view(), p.mu.view()) <= 1e-10);
            prop_assert!(tv1(cols.view(), p.nu.view()) <= 1e-10);
            let g = Array1::from_shape_fn(n, |_| rng.normal());
            let tilt = soc_tilted_joint(&p, g.view()).unwrap();
            prop_assert!(tv1(tilt.coupling.sum_axis(Axis(1)).view(), p.mu.view()) < 1e-14);
        }
    }
}
