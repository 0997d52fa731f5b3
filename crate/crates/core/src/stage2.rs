//! Stage 2: bridge matching of the backward control under a fixed coupling.
//!
//! The same code path trains the memoryless score-SDE baseline: independent
//! coupling with a large `beta_max`.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::bridge::{sample_bridge_batch, score_target_batch};
use crate::data::{DatasetSpec, PriorSpec};
use crate::error::{Error, Result};
use crate::nn::{scheduled_lr, ControlField, LossGrad, Optimizer, OptimizerConfig};
use crate::rng::RngStream;
use crate::schedule::ScheduleParams;
use crate::sde::VectorField;
use crate::stage1::{check_loss, simulate_coupling, BridgeDraws, CouplingBatch, Provenance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    /// Endpoints of the trained forward SDE.
    LearnedForward,
    /// `X_0 ~ data`, `X_1 ~ prior`, independently.
    Independent,
    /// `X_1 ~ p_base(· | X_0)`, the uncontrolled forward process.
    BaseJoint,
}

/// Everything needed to draw coupling batches.
pub struct CouplingSource<'a> {
    pub mode: CouplingMode,
    pub params: &'a ScheduleParams,
    pub data: &'a DatasetSpec,
    pub prior: &'a PriorSpec,
    pub u: Option<&'a dyn VectorField>,
    pub forward_nfe: usize,
}

impl CouplingSource<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.mode == CouplingMode::LearnedForward && self.u.is_none() {
            return Err(Error::Config("learned-forward coupling needs a forward control".into()));
        }
        Ok(())
    }
}

/// Draw `n` endpoint pairs. Data, prior and solver noise come from separate
/// forks of `rng`.
pub fn make_coupling(source: &CouplingSource<'_>, n: usize, rng: &mut RngStream) -> Result<CouplingBatch> {
    source.validate()?;
    let x0 = source.data.sample(n, rng);
    match source.mode {
        CouplingMode::LearnedForward => {
            let u = source.u.expect("validated");
            simulate_coupling(source.params, u, x0.view(), source.forward_nfe, rng)
        }
        CouplingMode::Independent => {
            let x1 = source.prior.sample(n, rng);
            CouplingBatch::new(x0, x1, Provenance::Independent)
        }
        CouplingMode::BaseJoint => {
            let (c, v) = source.params.transition_coeffs(0.0, 1.0)?;
            let sd = v.sqrt();
            let z = rng.normal_matrix(n, x0.ncols());
            let x1 = Zip::from(&x0).and(&z).map_collect(|&a, &z| c * a + sd * z);
            CouplingBatch::new(x0, x1, Provenance::BaseJoint)
        }
    }
}

/// Bridge-matching regression pairs `(X_t, σ_t ∇ log p_base(X_t | X_0))`.
pub fn bm_regression_pairs(
    params: &ScheduleParams,
    coupling: &CouplingBatch,
    draws: &BridgeDraws,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let xt = sample_bridge_batch(params, &draws.ts, coupling.x0.view(), coupling.x1.view(), draws.noise.view())?;
    let target = score_target_batch(params, &draws.ts, coupling.x0.view(), xt.view())?;
    Ok((xt, target))
}

pub fn bm_loss_grad(
    params: &ScheduleParams,
    v: &ControlField,
    coupling: &CouplingBatch,
    draws: &BridgeDraws,
) -> Result<LossGrad> {
    let (xt, target) = bm_regression_pairs(params, coupling, draws)?;
    v.regression_loss_grad(&draws.ts, xt.view(), target.view())
}

pub fn bm_loss(params: &ScheduleParams, v: &ControlField, coupling: &CouplingBatch, draws: &BridgeDraws) -> Result<f64> {
    let (xt, target) = bm_regression_pairs(params, coupling, draws)?;
    v.regression_loss(&draws.ts, xt.view(), target.view())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Config {
    pub iterations: usize,
    pub batch: usize,
    pub optimizer: OptimizerConfig,
    pub coupling: CouplingMode,
    pub forward_nfe: usize,
    /// Pairs drawn once and resampled from; 0 draws a fresh coupling per step.
    #[serde(default)]
    pub coupling_cache_size: usize,
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Initialize `v` from the stage-1 corrector (architectures must match).
    #[serde(default)]
    pub warm_start_from_corrector: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage2Record {
    pub iteration: usize,
    pub bm_loss: f64,
}

#[derive(Clone, Debug)]
pub struct Stage2Outcome {
    pub v: ControlField,
    pub history: Vec<Stage2Record>,
}

#[allow(clippy::too_many_arguments)]
pub fn stage2_train(
    params: &ScheduleParams,
    cfg: &Stage2Config,
    data: &DatasetSpec,
    prior: &PriorSpec,
    u: Option<&ControlField>,
    mut v: ControlField,
    rng: &mut RngStream,
    mut on_checkpoint: impl FnMut(usize, &ControlField) -> Result<()>,
) -> Result<Stage2Outcome> {
    if cfg.batch == 0 {
        return Err(Error::Config("stage2 needs batch >= 1".into()));
    }
    let source = CouplingSource {
        mode: cfg.coupling,
        params,
        data,
        prior,
        u: u.map(|f| f as &dyn VectorField),
        forward_nfe: cfg.forward_nfe,
    };
    source.validate()?;
    let mut opt = Optimizer::new(cfg.optimizer.method, cfg.optimizer.lr, v.num_params());
    let mut coupling_rng = rng.fork("stage2/coupling");
    let mut bridge_rng = rng.fork("stage2/bridge");
    let cache = if cfg.coupling_cache_size > 0 {
        Some(make_coupling(&source, cfg.coupling_cache_size, &mut coupling_rng)?)
    } else {
        None
    };
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let coupling = match &cache {
            Some(pool) => {
                let idx: Vec<usize> = (0..cfg.batch).map(|_| coupling_rng.index(pool.len())).collect();
                pool.select(&idx)
            }
            None => make_coupling(&source, cfg.batch, &mut coupling_rng)?,
        };
        let draws = BridgeDraws::sample(cfg.batch, params.dim, &mut bridge_rng);
        let lg = bm_loss_grad(params, &v, &coupling, &draws)?;
        check_loss(it, lg.loss)?;
        opt.lr = scheduled_lr(&cfg.optimizer, it, cfg.iterations);
        opt.step(&mut v, &lg.grad);
        history.push(Stage2Record {
            iteration: it,
            bm_loss: lg.loss,
        });
        if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
            on_checkpoint(it + 1, &v)?;
        }
    }
    Ok(Stage2Outcome { v, history })
}
