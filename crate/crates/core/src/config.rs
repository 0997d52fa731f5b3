//! Run configuration: one JSON document per run directory.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetSpec, PriorSpec};
use crate::distill::{DistillConfig, WarmupConfig};
use crate::error::{Error, Result};
use crate::nn::{Architecture, OptimizerConfig, OutputScale, TimeEmbedding};
use crate::schedule::ScheduleParams;
use crate::stage1::Stage1Config;
use crate::stage2::{CouplingMode, Stage2Config};

pub const SEED_ENV: &str = "BRIDGELAB_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architectures {
    pub forward_hidden: Vec<usize>,
    pub corrector_hidden: Vec<usize>,
    pub backward_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
    pub time_frequencies: usize,
    #[serde(default = "unit_period")]
    pub time_period: f64,
    /// Parameterize the backward control as `σ_t · MLP(t, x)`.
    #[serde(default)]
    pub backward_sigma_scale: bool,
}

fn unit_period() -> f64 {
    1.0
}

impl Architectures {
    pub fn time_embedding(&self) -> TimeEmbedding {
        TimeEmbedding::with_period(self.time_frequencies, self.time_period)
    }

    pub fn forward(&self, dim: usize) -> Architecture {
        Architecture::silu(dim, &self.forward_hidden, dim)
    }

    pub fn corrector(&self, dim: usize) -> Architecture {
        Architecture::silu(dim, &self.corrector_hidden, dim)
    }

    pub fn backward(&self, dim: usize) -> Architecture {
        Architecture::silu(dim, &self.backward_hidden, dim)
    }

    pub fn backward_scale(&self, schedule: &ScheduleParams) -> Option<OutputScale> {
        self.backward_sigma_scale.then_some(OutputScale::Sigma {
            beta_max: schedule.beta_max,
            beta_min: schedule.beta_min,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Em,
    Heun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Backward solver step counts at which energy distance is reported.
    pub nfe: Vec<usize>,
    /// Generated and reference sample count per energy distance.
    pub samples: usize,
    /// Evaluation seeds; metrics are averaged over them.
    pub seeds: Vec<u64>,
    /// Trajectories for straightness (and CSV dumps).
    pub trajectories: usize,
    /// Solver steps for trajectory diagnostics.
    pub trajectory_steps: usize,
    /// Distinct `x1` for trajectory variance; each is repeated `reps` times.
    pub variance_starts: usize,
    pub variance_reps: usize,
    /// Trajectories written to `trajectories/*.csv`.
    #[serde(default)]
    pub dump_trajectories: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub prior: PriorSpec,
    pub schedule: ScheduleParams,
    pub architectures: Architectures,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub distill: DistillConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replace the seed from `BRIDGELAB_SEED` when set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return cfg(format!("run name {:?} is not a plain directory name", self.name));
        }
        self.schedule.validate().map_err(|e| Error::Config(e.to_string()))?;
        let dim = self.schedule.dim;
        if self.dataset.dim() != dim || self.prior.dim != dim {
            return cfg(format!(
                "dimension mismatch: schedule {dim}, dataset {}, prior {}",
                self.dataset.dim(),
                self.prior.dim
            ));
        }
        let a = &self.architectures;
        for (name, h) in [
            ("forward_hidden", &a.forward_hidden),
            ("corrector_hidden", &a.corrector_hidden),
            ("backward_hidden", &a.backward_hidden),
            ("generator_hidden", &a.generator_hidden),
        ] {
            if h.contains(&0) {
                return cfg(format!("{name} has a zero-width layer"));
            }
        }
        if !(a.time_period > 0.0 && a.time_period.is_finite()) {
            return cfg("time_period must be positive".into());
        }
        if self.stage2.warm_start_from_corrector && a.corrector_hidden != a.backward_hidden {
            return cfg("warm_start_from_corrector needs corrector_hidden == backward_hidden".into());
        }
        for (name, o) in [
            ("stage1.optimizer", &self.stage1.optimizer),
            ("stage1.corrector_optimizer", &self.stage1.corrector_optimizer),
            ("stage2.optimizer", &self.stage2.optimizer),
            ("distill.generator_optimizer", &self.distill.generator_optimizer),
            ("distill.fake_optimizer", &self.distill.fake_optimizer),
            ("distill.warmup.optimizer", &self.distill.warmup.optimizer),
        ] {
            if !(o.lr > 0.0 && o.lr.is_finite()) || !(0.0..=1.0).contains(&o.final_lr_fraction) {
                return cfg(format!("{name}: lr must be positive and final_lr_fraction in [0, 1]"));
            }
        }
        if self.stage1.batch == 0 || self.stage1.forward_nfe == 0 {
            return cfg("stage1 batch and forward_nfe must be positive".into());
        }
        if self.stage2.batch == 0 || self.stage2.forward_nfe == 0 {
            return cfg("stage2 batch and forward_nfe must be positive".into());
        }
        if self.distill.batch == 0 || self.distill.warmup.batch == 0 {
            return cfg("distill batches must be positive".into());
        }
        let e = &self.eval;
        if e.nfe.is_empty() || e.nfe.contains(&0) {
            return cfg("eval.nfe must list positive step counts".into());
        }
        if e.seeds.is_empty() {
            return cfg("eval.seeds must not be empty".into());
        }
        if e.samples < 2 || e.trajectories == 0 || e.trajectory_steps == 0 {
            return cfg("eval needs samples >= 2 and positive trajectory counts".into());
        }
        if e.variance_starts == 0 || e.variance_reps < 2 {
            return cfg("eval needs variance_starts >= 1 and variance_reps >= 2".into());
        }
        Ok(())
    }

    /// Ring data, learned coupling, `β_max = 4`.
    pub fn ring_asbm(name: &str) -> Self {
        Self {
            name: name.into(),
            seed: 0,
            dataset: DatasetSpec::GaussianRing8,
            prior: PriorSpec::standard(2),
            schedule: ScheduleParams {
                beta_max: 4.0,
                beta_min: 0.1,
                dim: 2,
            },
            architectures: Architectures {
                forward_hidden: vec![64, 64],
                corrector_hidden: vec![64, 64],
                backward_hidden: vec![128, 128, 128],
                generator_hidden: vec![128, 128, 128],
                time_frequencies: 8,
                time_period: 2.0,
                backward_sigma_scale: true,
            },
            stage1: Stage1Config {
                iterations: 1000,
                batch: 256,
                forward_nfe: 20,
                optimizer: OptimizerConfig::adam(2e-3).with_decay(0.1),
                corrector_optimizer: OptimizerConfig::adam(2e-3).with_decay(0.1),
                am_kappa_weight: true,
                checkpoint_every: 250,
            },
            stage2: Stage2Config {
                iterations: 2000,
                batch: 512,
                optimizer: OptimizerConfig::adam(2e-3).with_decay(0.05),
                coupling: CouplingMode::LearnedForward,
                forward_nfe: 20,
                coupling_cache_size: 0,
                checkpoint_every: 500,
                warm_start_from_corrector: false,
            },
            distill: DistillConfig {
                iterations: 1000,
                batch: 256,
                fake_steps: 5,
                generator_optimizer: OptimizerConfig::adam(1e-4),
                fake_optimizer: OptimizerConfig::adam(1e-3),
                warmup: WarmupConfig {
                    max_steps: 3000,
                    batch: 256,
                    optimizer: OptimizerConfig::adam(3e-3).with_decay(0.01),
                    tol: 1e-3,
                    check_every: 250,
                },
                eval_every: 250,
                eval_samples: 2000,
            },
            eval: EvalConfig {
                nfe: vec![20, 50, 100, 200],
                samples: 2000,
                seeds: vec![0],
                trajectories: 1000,
                trajectory_steps: 100,
                variance_starts: 100,
                variance_reps: 10,
                dump_trajectories: 16,
            },
        }
    }

    /// Ring data, independent coupling, `β_max = 20`: the score-SDE baseline.
    pub fn ring_score_sde(name: &str) -> Self {
        let mut cfg = Self::ring_asbm(name);
        cfg.schedule.beta_max = 20.0;
        cfg.stage1.iterations = 0;
        cfg.stage2.coupling = CouplingMode::Independent;
        cfg
    }

    /// Two-dimensional standard Gaussian data against a standard Gaussian prior.
    pub fn identical_gaussian(name: &str) -> Self {
        let mut cfg = Self::ring_asbm(name);
        cfg.dataset = DatasetSpec::IsotropicGaussian { scale: 1.0, dim: 2 };
        cfg.architectures.backward_hidden = vec![64, 64];
        cfg.architectures.generator_hidden = vec![64, 64];
        cfg.stage1.iterations = 1000;
        cfg.stage1.forward_nfe = 100;
        cfg.stage2.iterations = 4000;
        cfg.stage2.optimizer = OptimizerConfig::adam(2e-3).with_decay(0.002);
        cfg.stage2.forward_nfe = 100;
        cfg.stage2.coupling_cache_size = 100_000;
        cfg.distill.iterations = 2000;
        cfg.distill.batch = 1024;
        cfg.distill.generator_optimizer = OptimizerConfig::adam(1e-4).with_decay(0.05);
        cfg.distill.fake_optimizer = OptimizerConfig::adam(1e-3).with_decay(0.05);
        cfg
    }
}
