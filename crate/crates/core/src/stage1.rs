//! Stage 1: the forward control as a data-to-energy sampler.
//!
//! Each iteration simulates endpoint pairs with the current (frozen) forward
//! control, takes one adjoint-matching step on `u` and one corrector-matching
//! step on the terminal corrector.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::bridge::{sample_bridge_batch, score_target_batch, T_EPS};
use crate::data::{DatasetSpec, PriorSpec};
use crate::error::{Error, Result};
use crate::nn::{ControlField, LossGrad, Optimizer, OptimizerConfig};
use crate::rng::RngStream;
use crate::schedule::ScheduleParams;
use crate::sde::{EulerMaruyama, VectorField};

/// Losses above this abort training.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    LearnedForward,
    Independent,
    BaseJoint,
}

/// Paired endpoint samples `(X_0, X_1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBatch {
    pub x0: Array2<f64>,
    pub x1: Array2<f64>,
    pub provenance: Provenance,
}

impl CouplingBatch {
    pub fn new(x0: Array2<f64>, x1: Array2<f64>, provenance: Provenance) -> Result<Self> {
        if x0.dim() != x1.dim() {
            return Err(Error::Dimension {
                expected: x0.len(),
                got: x1.len(),
            });
        }
        Ok(Self { x0, x1, provenance })
    }

    pub fn len(&self) -> usize {
        self.x0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x0: self.x0.select(Axis(0), idx),
            x1: self.x1.select(Axis(0), idx),
            provenance: self.provenance,
        }
    }
}

/// Interior times and standard-normal bridge noise for one loss evaluation.
#[derive(Clone, Debug)]
pub struct BridgeDraws {
    pub ts: Vec<f64>,
    pub noise: Array2<f64>,
}

impl BridgeDraws {
    pub fn sample(n: usize, dim: usize, rng: &mut RngStream) -> Self {
        let ts = rng.times(n, T_EPS);
        let noise = rng.normal_matrix(n, dim);
        Self { ts, noise }
    }
}

/// Endpoints of the forward SDE driven by `u`, which is only read.
pub fn simulate_coupling(
    params: &ScheduleParams,
    u: &dyn VectorField,
    x0: ArrayView2<f64>,
    forward_nfe: usize,
    rng: &mut RngStream,
) -> Result<CouplingBatch> {
    let x1 = EulerMaruyama::new(forward_nfe).forward_terminal(params, u, x0, rng)?;
    CouplingBatch::new(x0.to_owned(), x1, Provenance::LearnedForward)
}

/// Regression target for `u(t, X_t)` in adjoint matching.
///
/// With `kappa_weight` the target is `−κ_t σ_t (∇E(X_1) + v̄_1(X_1) / σ_1)`,
/// the lean-adjoint form for the linear VP drift. Without it the target is
/// `−(σ_t ∇E(X_1) + v̄_1(X_1))`, read literally off the unweighted objective.
pub fn am_target(
    params: &ScheduleParams,
    corrector: &dyn VectorField,
    prior: &PriorSpec,
    x1: ArrayView2<f64>,
    ts: &[f64],
    kappa_weight: bool,
) -> Result<Array2<f64>> {
    let v1 = corrector.eval(1.0, x1)?;
    let grad_e = prior.energy_grad_batch(x1);
    let sigma1 = params.sigma(1.0)?;
    let mut target = Array2::zeros(x1.raw_dim());
    for (i, &t) in ts.iter().enumerate() {
        let sigma = params.sigma(t)?;
        let mut row = target.row_mut(i);
        if kappa_weight {
            let w = params.kappa(t)? * sigma;
            for d in 0..row.len() {
                row[d] = -w * (grad_e[[i, d]] + v1[[i, d]] / sigma1);
            }
        } else {
            for d in 0..row.len() {
                row[d] = -(sigma * grad_e[[i, d]] + v1[[i, d]]);
            }
        }
    }
    Ok(target)
}

/// Adjoint-matching loss `mean ‖u(t, X_t) − target‖²` with `X_t` drawn from
/// the base bridge. Gradient flows only through `u(t, X_t)`.
pub fn am_loss_grad(
    params: &ScheduleParams,
    u: &ControlField,
    corrector: &dyn VectorField,
    prior: &PriorSpec,
    coupling: &CouplingBatch,
    draws: &BridgeDraws,
    kappa_weight: bool,
) -> Result<LossGrad> {
    let xt = sample_bridge_batch(params, &draws.ts, coupling.x0.view(), coupling.x1.view(), draws.noise.view())?;
    let target = am_target(params, corrector, prior, coupling.x1.view(), &draws.ts, kappa_weight)?;
    u.regression_loss_grad(&draws.ts, xt.view(), target.view())
}

pub fn am_loss(
    params: &ScheduleParams,
    u: &ControlField,
    corrector: &dyn VectorField,
    prior: &PriorSpec,
    coupling: &CouplingBatch,
    draws: &BridgeDraws,
    kappa_weight: bool,
) -> Result<f64> {
    let xt = sample_bridge_batch(params, &draws.ts, coupling.x0.view(), coupling.x1.view(), draws.noise.view())?;
    let target = am_target(params, corrector, prior, coupling.x1.view(), &draws.ts, kappa_weight)?;
    u.regression_loss(&draws.ts, xt.view(), target.view())
}

/// Corrector regression target: the bridge-matching score target at `t = 1`.
pub fn cm_target(params: &ScheduleParams, coupling: &CouplingBatch) -> Result<Array2<f64>> {
    let ones = vec![1.0; coupling.len()];
    score_target_batch(params, &ones, coupling.x0.view(), coupling.x1.view())
}

/// Corrector-matching loss `mean ‖v(1, X_1) − σ_1 ∇ log p_base(X_1 | X_0)‖²`.
pub fn cm_loss_grad(
    params: &ScheduleParams,
    corrector: &ControlField,
    coupling: &CouplingBatch,
) -> Result<LossGrad> {
    let target = cm_target(params, coupling)?;
    let ones = vec![1.0; coupling.len()];
    corrector.regression_loss_grad(&ones, coupling.x1.view(), target.view())
}

pub fn cm_loss(params: &ScheduleParams, corrector: &ControlField, coupling: &CouplingBatch) -> Result<f64> {
    let target = cm_target(params, coupling)?;
    let ones = vec![1.0; coupling.len()];
    corrector.regression_loss(&ones, coupling.x1.view(), target.view())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Config {
    pub iterations: usize,
    pub batch: usize,
    pub forward_nfe: usize,
    pub optimizer: OptimizerConfig,
    pub corrector_optimizer: OptimizerConfig,
    #[serde(default = "default_true")]
    pub am_kappa_weight: bool,
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Record {
    pub iteration: usize,
    pub am_loss: f64,
    pub cm_loss: f64,
}

#[derive(Clone, Debug)]
pub struct Stage1Outcome {
    pub u: ControlField,
    pub corrector: ControlField,
    pub history: Vec<Stage1Record>,
}

pub(crate) fn check_loss(iteration: usize, loss: f64) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LOSS {
        Err(Error::Divergence { iteration, loss })
    } else {
        Ok(())
    }
}

/// Alternate adjoint matching on `u` with corrector matching on the terminal
/// corrector. `on_checkpoint` runs every `checkpoint_every` iterations.
#[allow(clippy::too_many_arguments)]
pub fn stage1_train(
    params: &ScheduleParams,
    cfg: &Stage1Config,
    data: &DatasetSpec,
    prior: &PriorSpec,
    mut u: ControlField,
    mut corrector: ControlField,
    rng: &mut RngStream,
    mut on_checkpoint: impl FnMut(usize, &ControlField, &ControlField) -> Result<()>,
) -> Result<Stage1Outcome> {
    if cfg.forward_nfe == 0 || cfg.batch == 0 {
        return Err(Error::Config("stage1 needs forward_nfe >= 1 and batch >= 1".into()));
    }
    let mut opt_u = Optimizer::new(cfg.optimizer.method, cfg.optimizer.lr, u.num_params());
    let mut opt_c = Optimizer::new(cfg.corrector_optimizer.method, cfg.corrector_optimizer.lr, corrector.num_params());
    let mut data_rng = rng.fork("stage1/data");
    let mut sde_rng = rng.fork("stage1/forward");
    let mut bridge_rng = rng.fork("stage1/bridge");
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let x0 = data.sample(cfg.batch, &mut data_rng);
        let coupling = simulate_coupling(params, &u, x0.view(), cfg.forward_nfe, &mut sde_rng)?;
        let draws = BridgeDraws::sample(cfg.batch, params.dim, &mut bridge_rng);
        let am = am_loss_grad(params, &u, &corrector, prior, &coupling, &draws, cfg.am_kappa_weight)?;
        let cm = cm_loss_grad(params, &corrector, &coupling)?;
        check_loss(it, am.loss)?;
        check_loss(it, cm.loss)?;
        opt_u.lr = crate::nn::scheduled_lr(&cfg.optimizer, it, cfg.iterations);
        opt_c.lr = crate::nn::scheduled_lr(&cfg.corrector_optimizer, it, cfg.iterations);
        opt_u.step(&mut u, &am.grad);
        opt_c.step(&mut corrector, &cm.grad);
        history.push(Stage1Record {
            iteration: it,
            am_loss: am.loss,
            cm_loss: cm.loss,
        });
        if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
            on_checkpoint(it + 1, &u, &corrector)?;
        }
    }
    Ok(Stage1Outcome {
        u,
        corrector,
        history,
    })
}
