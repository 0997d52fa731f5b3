//! Distillation of the backward control into a one-step generator.
//!
//! A fake control `v_xi` tracks the bridge-matching control of the
//! generator's own coupling `(G(x1, z), x1)`; the generator is then moved so
//! that `v_xi` agrees with the teacher `v_phi` along base bridges.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::bridge::{bridge_moments, sample_bridge_batch, tweedie_denoise_batch};
use crate::data::{DatasetSpec, PriorSpec};
use crate::error::{Error, Result};
use crate::metrics::{energy_distance, mode_coverage, DEFAULT_MODE_RADIUS};
use crate::nn::{scheduled_lr, Architecture, ControlField, LossGrad, Optimizer, OptimizerConfig};
use crate::rng::RngStream;
use crate::schedule::ScheduleParams;
use crate::stage1::{check_loss, BridgeDraws, CouplingBatch, Provenance};
use crate::stage2::bm_loss_grad;

/// One-step generator `G(x1, z)`: a field on the concatenation `[x1, z]`
/// with no time input.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorField {
    pub field: ControlField,
}

impl GeneratorField {
    pub fn init(seed: u64, dim: usize, hidden: &[usize]) -> Result<Self> {
        let field = ControlField::init(seed, Architecture::silu(2 * dim, hidden, dim), None)?;
        Ok(Self { field })
    }

    pub fn from_field(field: ControlField) -> Result<Self> {
        let dim = field.output_dim();
        if field.input_dim() != 2 * dim || field.time_embed.is_some() {
            return Err(Error::Config(
                "generator field needs input 2*dim, output dim and no time embedding".into(),
            ));
        }
        Ok(Self { field })
    }

    pub fn dim(&self) -> usize {
        self.field.output_dim()
    }

    fn inputs(x1: ArrayView2<f64>, z: ArrayView2<f64>) -> Array2<f64> {
        concatenate(Axis(1), &[x1.reborrow(), z.reborrow()]).expect("matching rows")
    }

    pub fn generate(&self, x1: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.field.forward(&[], Self::inputs(x1, z).view())
    }

    /// Draw `n` one-step samples from the prior.
    pub fn sample(&self, prior: &PriorSpec, n: usize, rng: &mut RngStream) -> Result<Array2<f64>> {
        let x1 = prior.sample(n, rng);
        let z = rng.normal_matrix(n, self.dim());
        self.generate(x1.view(), z.view())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupConfig {
    pub max_steps: usize,
    pub batch: usize,
    pub optimizer: OptimizerConfig,
    /// Target per-coordinate mean squared error.
    pub tol: f64,
    pub check_every: usize,
}

/// Tweedie one-step map from the teacher's terminal control.
pub fn tweedie_map(params: &ScheduleParams, v_phi: &ControlField, x1: ArrayView2<f64>) -> Result<Array2<f64>> {
    let v1 = v_phi.forward_at(1.0, x1)?;
    tweedie_denoise_batch(params, x1, v1.view())
}

/// Fit `gen` to the Tweedie map `x1 ↦ (x1 + (1 − κ̄_1²) v_phi(1, x1)/σ_1)/κ̄_1`
/// by regression, with `z` drawn but irrelevant to the target. Fails if the
/// held-out per-coordinate MSE does not reach `cfg.tol`.
pub fn init_generator(
    params: &ScheduleParams,
    v_phi: &ControlField,
    mut gen: GeneratorField,
    prior: &PriorSpec,
    cfg: &WarmupConfig,
    rng: &mut RngStream,
) -> Result<(GeneratorField, f64)> {
    let dim = gen.dim();
    let mut check_rng = rng.fork("warmup/check");
    let check_x1 = prior.sample(2048, &mut check_rng);
    let check_z = check_rng.normal_matrix(2048, dim);
    let check_target = tweedie_map(params, v_phi, check_x1.view())?;
    let check_in = GeneratorField::inputs(check_x1.view(), check_z.view());
    let held_out_mse = |g: &GeneratorField| -> Result<f64> {
        Ok(g.field.regression_loss(&[], check_in.view(), check_target.view())? / dim as f64)
    };
    let mut mse = held_out_mse(&gen)?;
    if mse < cfg.tol {
        return Ok((gen, mse));
    }
    let mut opt = Optimizer::new(cfg.optimizer.method, cfg.optimizer.lr, gen.field.num_params());
    let mut train_rng = rng.fork("warmup/train");
    for step in 0..cfg.max_steps {
        let x1 = prior.sample(cfg.batch, &mut train_rng);
        let z = train_rng.normal_matrix(cfg.batch, dim);
        let target = tweedie_map(params, v_phi, x1.view())?;
        let inputs = GeneratorField::inputs(x1.view(), z.view());
        let lg = gen.field.regression_loss_grad(&[], inputs.view(), target.view())?;
        check_loss(step, lg.loss)?;
        opt.lr = scheduled_lr(&cfg.optimizer, step, cfg.max_steps);
        opt.step(&mut gen.field, &lg.grad);
        if (step + 1) % cfg.check_every.max(1) == 0 || step + 1 == cfg.max_steps {
            mse = held_out_mse(&gen)?;
            if mse < cfg.tol {
                return Ok((gen, mse));
            }
        }
    }
    Err(Error::NotConverged {
        iterations: cfg.max_steps,
        residual: mse,
    })
}

/// One bridge-matching step of the fake control on the generator's coupling.
#[allow(clippy::too_many_arguments)]
pub fn fake_control_step(
    params: &ScheduleParams,
    v_xi: &mut ControlField,
    opt: &mut Optimizer,
    gen: &GeneratorField,
    prior: &PriorSpec,
    batch: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let x1 = prior.sample(batch, rng);
    let z = rng.normal_matrix(batch, gen.dim());
    let x0 = gen.generate(x1.view(), z.view())?;
    let coupling = CouplingBatch::new(x0, x1, Provenance::LearnedForward)?;
    let draws = BridgeDraws::sample(batch, gen.dim(), rng);
    let lg = bm_loss_grad(params, v_xi, &coupling, &draws)?;
    opt.step(v_xi, &lg.grad);
    Ok(lg.loss)
}

/// Control-matching loss `mean ‖v_xi(t, X_t) − v_phi(t, X_t)‖²` with
/// `X_t ~ bridge(G(x1, z), x1)`, and the generator gradient obtained with
/// both control outputs held fixed: the residual `v_xi − v_phi` is treated
/// as a constant direction on `X_t` and pulled back through
/// `∂X_t/∂X_0 = coeff0`. Dividing by `σ_t` turns the control residual into a
/// score residual, so the update is the path-space KL gradient.
pub fn generator_loss_grad(
    params: &ScheduleParams,
    gen: &GeneratorField,
    v_xi: &ControlField,
    v_phi: &ControlField,
    x1: ArrayView2<f64>,
    z: ArrayView2<f64>,
    draws: &BridgeDraws,
) -> Result<LossGrad> {
    let inputs = GeneratorField::inputs(x1, z);
    let gen_pass = gen.field.forward_cached(&[], inputs.view())?;
    let x0 = &gen_pass.output;
    let xt = sample_bridge_batch(params, &draws.ts, x0.view(), x1, draws.noise.view())?;
    let resid = v_xi.forward(&draws.ts, xt.view())? - v_phi.forward(&draws.ts, xt.view())?;
    let loss = crate::nn::mean_row_sq_norm(resid.view())?;
    let mut d_x0 = resid;
    let n = x1.nrows() as f64;
    for (mut row, &t) in d_x0.outer_iter_mut().zip(&draws.ts) {
        let w = bridge_moments(params, t)?.coeff0 / (params.sigma(t)? * n);
        row.mapv_inplace(|g| g * w);
    }
    let (grad, _) = gen.field.backward(&gen_pass, d_x0.view())?;
    Ok(LossGrad { loss, grad })
}

/// One generator update. Only `gen` changes.
#[allow(clippy::too_many_arguments)]
pub fn generator_step(
    params: &ScheduleParams,
    gen: &mut GeneratorField,
    opt: &mut Optimizer,
    v_xi: &ControlField,
    v_phi: &ControlField,
    prior: &PriorSpec,
    batch: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let x1 = prior.sample(batch, rng);
    let z = rng.normal_matrix(batch, gen.dim());
    let draws = BridgeDraws::sample(batch, gen.dim(), rng);
    let lg = generator_loss_grad(params, gen, v_xi, v_phi, x1.view(), z.view(), &draws)?;
    opt.step(&mut gen.field, &lg.grad);
    Ok(lg.loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub iterations: usize,
    pub batch: usize,
    /// Fake-control updates per generator update.
    #[serde(default = "default_fake_steps")]
    pub fake_steps: usize,
    pub generator_optimizer: OptimizerConfig,
    pub fake_optimizer: OptimizerConfig,
    pub warmup: WarmupConfig,
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
}

fn default_fake_steps() -> usize {
    5
}

fn default_eval_samples() -> usize {
    2000
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DistillRecord {
    pub iteration: usize,
    pub fake_loss: f64,
    pub generator_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DistillEval {
    pub iteration: usize,
    pub energy_distance: f64,
    pub mode_coverage: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub generator: GeneratorField,
    pub initial_generator: GeneratorField,
    pub warmup_mse: f64,
    pub fake_control: ControlField,
    pub history: Vec<DistillRecord>,
    pub evals: Vec<DistillEval>,
}

fn evaluate_generator(
    gen: &GeneratorField,
    data: &DatasetSpec,
    prior: &PriorSpec,
    n: usize,
    iteration: usize,
    seed_rng: &RngStream,
) -> Result<DistillEval> {
    let mut rng = seed_rng.fork("distill/eval");
    let reference = data.sample(n, &mut rng);
    let samples = gen.sample(prior, n, &mut rng)?;
    Ok(DistillEval {
        iteration,
        energy_distance: energy_distance(samples.view(), reference.view())?,
        mode_coverage: data
            .modes()
            .map(|m| mode_coverage(samples.view(), m.view(), DEFAULT_MODE_RADIUS)),
    })
}

/// Tweedie warm-up, then `iterations` rounds of `fake_steps` fake-control
/// updates followed by one generator update. The fake control starts from
/// the teacher.
#[allow(clippy::too_many_arguments)]
pub fn distill_train(
    params: &ScheduleParams,
    cfg: &DistillConfig,
    data: &DatasetSpec,
    prior: &PriorSpec,
    v_phi: &ControlField,
    gen_init: GeneratorField,
    rng: &mut RngStream,
) -> Result<DistillOutcome> {
    let (mut gen, warmup_mse) = init_generator(params, v_phi, gen_init, prior, &cfg.warmup, &mut rng.fork("distill/warmup"))?;
    let initial_generator = gen.clone();
    let mut v_xi = v_phi.clone();
    let mut opt_gen = Optimizer::new(cfg.generator_optimizer.method, cfg.generator_optimizer.lr, gen.field.num_params());
    let mut opt_fake = Optimizer::new(cfg.fake_optimizer.method, cfg.fake_optimizer.lr, v_xi.num_params());
    let mut fake_rng = rng.fork("distill/fake");
    let mut gen_rng = rng.fork("distill/generator");
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut evals = Vec::new();
    if cfg.eval_every > 0 {
        evals.push(evaluate_generator(&gen, data, prior, cfg.eval_samples, 0, rng)?);
    }
    for it in 0..cfg.iterations {
        opt_fake.lr = scheduled_lr(&cfg.fake_optimizer, it, cfg.iterations);
        opt_gen.lr = scheduled_lr(&cfg.generator_optimizer, it, cfg.iterations);
        let mut fake_loss = 0.0;
        for _ in 0..cfg.fake_steps {
            fake_loss = fake_control_step(params, &mut v_xi, &mut opt_fake, &gen, prior, cfg.batch, &mut fake_rng)?;
            check_loss(it, fake_loss)?;
        }
        let generator_loss = generator_step(params, &mut gen, &mut opt_gen, &v_xi, v_phi, prior, cfg.batch, &mut gen_rng)?;
        check_loss(it, generator_loss)?;
        history.push(DistillRecord {
            iteration: it,
            fake_loss,
            generator_loss,
        });
        if cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0 {
            evals.push(evaluate_generator(&gen, data, prior, cfg.eval_samples, it + 1, rng)?);
        }
    }
    Ok(DistillOutcome {
        generator: gen,
        initial_generator,
        warmup_mse,
        fake_control: v_xi,
        history,
        evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::memoryless_gap;
    use crate::oracles::{finite_diff_grad, max_rel_err};
    use crate::stage2::bm_loss;
    use crate::testutil::random_field;

    fn desk() -> ScheduleParams {
        ScheduleParams::new(4.0, 0.1, 2).unwrap()
    }

    /// Linear time-free field `x ↦ a x + b` in two dimensions.
    fn affine(a: f64, b: [f64; 2]) -> ControlField {
        let mut f = ControlField::init(0, Architecture::silu(2, &[], 2), None).unwrap();
        f.params = vec![a, 0.0, 0.0, a, b[0], b[1]];
        f
    }

    /// Exact terminal control for data concentrated at `c`.
    fn point_mass_control(params: &ScheduleParams, c: [f64; 2]) -> ControlField {
        let kb = params.kappa_bar(1.0).unwrap();
        let s = params.sigma(1.0).unwrap() / (1.0 - kb * kb);
        affine(-s, [s * kb * c[0], s * kb * c[1]])
    }

    fn warmup(max_steps: usize, tol: f64) -> WarmupConfig {
        WarmupConfig {
            max_steps,
            batch: 128,
            optimizer: OptimizerConfig::adam(3e-3).with_decay(0.01),
            tol,
            check_every: 100,
        }
    }

    #[test]
    fn tweedie_of_gaussian_optimum_is_kappa_bar_scaling() {
        let params = desk();
        let v = affine(-params.sigma(1.0).unwrap(), [0.0, 0.0]);
        let x1 = RngStream::new(1).normal_matrix(10, 2);
        let g = tweedie_map(&params, &v, x1.view()).unwrap();
        let kb = params.kappa_bar(1.0).unwrap();
        assert!((kb - 0.3588).abs() < 1e-3);
        assert!(g.iter().zip(x1.iter()).all(|(a, b)| (a - kb * b).abs() < 1e-12));
    }

    #[test]
    fn warmup_fits_point_mass_and_is_deterministic() {
        let params = desk();
        let c = [1.5, -0.5];
        let v = point_mass_control(&params, c);
        let x1 = RngStream::new(2).normal_matrix(5, 2);
        let exact = tweedie_map(&params, &v, x1.view()).unwrap();
        assert!(exact.outer_iter().all(|r| (r[0] - c[0]).abs() < 1e-12 && (r[1] - c[1]).abs() < 1e-12));
        let prior = PriorSpec::standard(2);
        let run = || {
            let gen = GeneratorField::init(3, 2, &[16, 16]).unwrap();
            init_generator(&params, &v, gen, &prior, &warmup(2000, 1e-3), &mut RngStream::new(4)).unwrap()
        };
        let (g, mse) = run();
        assert!(mse < 1e-3);
        let (g2, mse2) = run();
        assert_eq!(g, g2);
        assert_eq!(mse, mse2);
        let out = g.sample(&prior, 500, &mut RngStream::new(5)).unwrap();
        let err: f64 = out.outer_iter().map(|r| (r[0] - c[0]).powi(2) + (r[1] - c[1]).powi(2)).sum::<f64>() / 1000.0;
        assert!(err < 2e-3);
    }

    #[test]
    fn warmup_failure_is_reported() {
        let params = desk();
        let v = point_mass_control(&params, [1.0, 1.0]);
        let gen = GeneratorField::init(3, 2, &[4]).unwrap();
        let err = init_generator(&params, &v, gen, &PriorSpec::standard(2), &warmup(5, 1e-12), &mut RngStream::new(0)).unwrap_err();
        assert!(matches!(err, Error::NotConverged { iterations: 5, .. }));
    }

    #[test]
    fn generator_field_shape_checks() {
        let timed = random_field(1, 4, 2, true);
        assert!(GeneratorField::from_field(timed).is_err());
        let wrong = random_field(1, 3, 2, false);
        assert!(GeneratorField::from_field(wrong).is_err());
        let ok = random_field(1, 4, 2, false);
        assert_eq!(GeneratorField::from_field(ok).unwrap().dim(), 2);
    }

    fn fixture(seed: u64, n: usize) -> (Array2<f64>, Array2<f64>, BridgeDraws) {
        let mut rng = RngStream::new(seed);
        let x1 = rng.normal_matrix(n, 2);
        let z = rng.normal_matrix(n, 2);
        (x1, z, BridgeDraws::sample(n, 2, &mut rng))
    }

    #[test]
    fn matched_controls_give_zero_loss_and_gradient() {
        let params = desk();
        let gen = GeneratorField::from_field(random_field(2, 4, 2, false)).unwrap();
        let v = random_field(3, 2, 2, true);
        let (x1, z, draws) = fixture(4, 32);
        let lg = generator_loss_grad(&params, &gen, &v, &v, x1.view(), z.view(), &draws).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grad.iter().all(|&g| g == 0.0));
        assert_eq!(lg.grad.len(), gen.field.num_params());
    }

    /// `Σ_i ⟨r_i, X_t,i(ψ)⟩ / (n σ_{t_i})` with the residuals `r` frozen at
    /// the current parameters; its gradient is the generator update.
    fn surrogate(params: &ScheduleParams, gen: &GeneratorField, resid: &Array2<f64>, x1: &Array2<f64>, z: &Array2<f64>, draws: &BridgeDraws) -> f64 {
        let x0 = gen.generate(x1.view(), z.view()).unwrap();
        let xt = sample_bridge_batch(params, &draws.ts, x0.view(), x1.view(), draws.noise.view()).unwrap();
        let n = x1.nrows() as f64;
        draws
            .ts
            .iter()
            .enumerate()
            .map(|(i, &t)| xt.row(i).dot(&resid.row(i)) / (params.sigma(t).unwrap() * n))
            .sum()
    }

    #[test]
    fn generator_gradient_matches_finite_differences() {
        let params = desk();
        let gen = GeneratorField::from_field(random_field(5, 4, 2, false)).unwrap();
        let v_xi = random_field(6, 2, 2, true);
        let v_phi = random_field(7, 2, 2, true);
        let (x1, z, draws) = fixture(8, 24);
        let lg = generator_loss_grad(&params, &gen, &v_xi, &v_phi, x1.view(), z.view(), &draws).unwrap();
        let x0 = gen.generate(x1.view(), z.view()).unwrap();
        let xt = sample_bridge_batch(&params, &draws.ts, x0.view(), x1.view(), draws.noise.view()).unwrap();
        let resid = v_xi.forward(&draws.ts, xt.view()).unwrap() - v_phi.forward(&draws.ts, xt.view()).unwrap();
        assert!((lg.loss - crate::nn::mean_row_sq_norm(resid.view()).unwrap()).abs() < 1e-12);
        let fd = finite_diff_grad(
            |p| {
                let mut g = gen.clone();
                g.field.params.copy_from_slice(p);
                surrogate(&params, &g, &resid, &x1, &z, &draws)
            },
            &gen.field.params,
            1e-5,
        );
        assert!(max_rel_err(&lg.grad, &fd, 1e-6) < 1e-4);
        let before = surrogate(&params, &gen, &resid, &x1, &z, &draws);
        let mut stepped = gen.clone();
        Optimizer::sgd(1e-3, gen.field.num_params()).step(&mut stepped.field, &lg.grad);
        assert!(surrogate(&params, &stepped, &resid, &x1, &z, &draws) < before);
    }

    #[test]
    fn generator_step_leaves_controls_untouched() {
        let params = desk();
        let mut gen = GeneratorField::from_field(random_field(9, 4, 2, false)).unwrap();
        let v_xi = random_field(10, 2, 2, true);
        let v_phi = random_field(11, 2, 2, true);
        let (xi0, phi0) = (v_xi.clone(), v_phi.clone());
        let mut opt = Optimizer::adam(1e-3, gen.field.num_params());
        let before = gen.clone();
        generator_step(&params, &mut gen, &mut opt, &v_xi, &v_phi, &PriorSpec::standard(2), 16, &mut RngStream::new(0)).unwrap();
        assert_eq!(v_xi, xi0);
        assert_eq!(v_phi, phi0);
        assert_ne!(gen, before);
    }

    #[test]
    fn fake_control_descends_and_is_deterministic() {
        let params = desk();
        let v = point_mass_control(&params, [1.0, 0.0]);
        let gen = GeneratorField::from_field(affine_generator([1.0, 0.0])).unwrap();
        let prior = PriorSpec::standard(2);
        let run = || {
            let mut v_xi = random_field(12, 2, 2, true);
            let mut opt = Optimizer::adam(3e-3, v_xi.num_params());
            let mut rng = RngStream::new(13);
            let losses: Vec<f64> = (0..400)
                .map(|_| fake_control_step(&params, &mut v_xi, &mut opt, &gen, &prior, 128, &mut rng).unwrap())
                .collect();
            (v_xi, losses)
        };
        let (v_xi, losses) = run();
        let (v_xi2, losses2) = run();
        assert_eq!(v_xi, v_xi2);
        assert_eq!(losses, losses2);
        let head: f64 = losses[..20].iter().sum();
        let tail: f64 = losses[380..].iter().sum();
        assert!(tail < 0.5 * head);
        // the generator is exact, so the fake control should be as good as the teacher
        let mut rng = RngStream::new(14);
        let x0 = Array2::from_shape_fn((2000, 2), |(_, k)| [1.0, 0.0][k]);
        let coupling = CouplingBatch::new(x0, prior.sample(2000, &mut rng), Provenance::LearnedForward).unwrap();
        let draws = BridgeDraws::sample(2000, 2, &mut rng);
        let teacher = bm_loss(&params, &v, &coupling, &draws).unwrap();
        let fake = bm_loss(&params, &v_xi, &coupling, &draws).unwrap();
        assert!(fake < teacher * 1.5 + 0.05, "fake {fake} teacher {teacher}");
    }

    /// Generator that ignores its inputs and returns `c`.
    fn affine_generator(c: [f64; 2]) -> ControlField {
        let mut f = ControlField::init(0, Architecture::silu(4, &[], 2), None).unwrap();
        f.params = vec![0.0; 10];
        f.params[8] = c[0];
        f.params[9] = c[1];
        f
    }

    fn tiny_config(iterations: usize) -> DistillConfig {
        DistillConfig {
            iterations,
            batch: 32,
            fake_steps: 2,
            generator_optimizer: OptimizerConfig::adam(1e-4),
            fake_optimizer: OptimizerConfig::adam(1e-3),
            warmup: warmup(3000, 1e-3),
            eval_every: 2,
            eval_samples: 100,
        }
    }

    #[test]
    fn zero_iterations_return_tweedie_generator() {
        let params = desk();
        let v = point_mass_control(&params, [0.5, 0.5]);
        let gen = GeneratorField::init(1, 2, &[16]).unwrap();
        let out = distill_train(&params, &tiny_config(0), &DatasetSpec::GaussianRing8, &PriorSpec::standard(2), &v, gen, &mut RngStream::new(2)).unwrap();
        assert_eq!(out.generator, out.initial_generator);
        assert!(out.warmup_mse < 1e-3);
        assert_eq!(out.fake_control, v);
        assert_eq!(out.evals.len(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let params = desk();
        let v = point_mass_control(&params, [0.5, 0.5]);
        let run = || {
            let gen = GeneratorField::init(1, 2, &[16]).unwrap();
            distill_train(&params, &tiny_config(4), &DatasetSpec::GaussianRing8, &PriorSpec::standard(2), &v, gen, &mut RngStream::new(3)).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.generator, b.generator);
        assert_eq!(a.history, b.history);
        assert_eq!(a.evals, b.evals);
        assert_eq!(a.history.len(), 4);
        assert_eq!(a.evals.iter().map(|e| e.iteration).collect::<Vec<_>>(), vec![0, 2, 4]);
        assert_ne!(a.generator, a.initial_generator);
    }

    #[test]
    fn memoryless_schedule_collapses_to_score_distillation_paths() {
        let memoryless = ScheduleParams::new(20.0, 0.1, 2).unwrap();
        assert!(memoryless_gap(&memoryless, 200).unwrap() < 1e-2);
    }
}
