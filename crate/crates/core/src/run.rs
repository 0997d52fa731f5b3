//! Run directories and the train / distill / evaluate / sample pipelines.
//!
//! A run lives in `<runs_root>/<name>/` and holds `config.json`, field
//! checkpoints, loss CSVs, `metrics.json`, `samples.csv`,
//! `trajectories/*.csv` and `plots/*.svg`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Solver};
use crate::distill::{distill_train, DistillOutcome, GeneratorField};
use crate::error::{Error, Result};
use crate::metrics::{
    column_variance, energy_distance, inversion_error, mode_coverage, straightness, trajectory_variance,
    DEFAULT_MODE_RADIUS,
};
use crate::nn::ControlField;
use crate::plot::emit_plots;
use crate::rng::RngStream;
use crate::sde::{fmt17, pf_ode_heun_terminal, EulerMaruyama, VectorField, ZeroField};
use crate::stage1::{stage1_train, Stage1Outcome};
use crate::stage2::{stage2_train, CouplingMode, Stage2Outcome};

pub const CONFIG_FILE: &str = "config.json";
pub const U_CKPT: &str = "u.ckpt.json";
pub const CORRECTOR_CKPT: &str = "corrector.ckpt.json";
pub const V_CKPT: &str = "v.ckpt.json";
pub const GEN_CKPT: &str = "gen.ckpt.json";
pub const GEN_INIT_CKPT: &str = "gen_init.ckpt.json";
pub const METRICS_FILE: &str = "metrics.json";

/// Write `bytes` to `path`, first moving any existing file to `<path>.prev`.
pub fn write_rotating(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.exists() {
        let mut prev = path.as_os_str().to_owned();
        prev.push(".prev");
        fs::rename(path, PathBuf::from(prev))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Per-field initialization seed derived from the run seed.
fn init_seed(seed: u64, slot: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(slot.wrapping_mul(0xbf58_476d_1ce4_e5b9))
}

#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
    pub config: RunConfig,
}

impl RunDir {
    /// Create `<runs_root>/<name>` for `config`, or reopen it when it already
    /// holds the same configuration.
    pub fn create(runs_root: &Path, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let root = runs_root.join(&config.name);
        let path = root.join(CONFIG_FILE);
        if path.exists() {
            let existing = RunConfig::load(&path)?;
            if existing != config {
                return Err(Error::Config(format!(
                    "{} holds a different configuration",
                    root.display()
                )));
            }
        } else {
            fs::create_dir_all(&root)?;
            fs::write(&path, config.to_json())?;
        }
        let mut config = config;
        config.apply_seed_env()?;
        Ok(Self { root, config })
    }

    /// Open an existing run directory.
    pub fn open(root: &Path) -> Result<Self> {
        let mut config = RunConfig::load(&root.join(CONFIG_FILE))?;
        config.apply_seed_env()?;
        Ok(Self {
            root: root.to_path_buf(),
            config,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn save_field(&self, name: &str, field: &ControlField) -> Result<()> {
        write_rotating(&self.path(name), serde_json::to_string(field)?.as_bytes())
    }

    pub fn load_field(&self, name: &str) -> Result<ControlField> {
        ControlField::load(&self.path(name))
    }

    fn write_csv(&self, name: &str, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        Ok(())
    }

    fn rng(&self, label: &str) -> RngStream {
        RngStream::new(self.config.seed).fork(label)
    }

    /// Forward control for inversion and PF-ODE sampling: the stage-1 field
    /// when the run uses a learned coupling, the zero control otherwise.
    fn forward_field(&self) -> Result<Box<dyn VectorField>> {
        match self.config.stage2.coupling {
            CouplingMode::LearnedForward => Ok(Box::new(self.load_field(U_CKPT)?)),
            _ => Ok(Box::new(ZeroField)),
        }
    }
}

pub fn train_stage1(run: &RunDir) -> Result<Stage1Outcome> {
    let cfg = &run.config;
    let dim = cfg.schedule.dim;
    let te = Some(cfg.architectures.time_embedding());
    let u = ControlField::init(init_seed(cfg.seed, 1), cfg.architectures.forward(dim), te)?;
    let corrector = ControlField::init(init_seed(cfg.seed, 2), cfg.architectures.corrector(dim), te)?;
    let mut rng = run.rng("stage1");
    let out = stage1_train(
        &cfg.schedule,
        &cfg.stage1,
        &cfg.dataset,
        &cfg.prior,
        u,
        corrector,
        &mut rng,
        |_, u, c| {
            run.save_field(U_CKPT, u)?;
            run.save_field(CORRECTOR_CKPT, c)
        },
    )?;
    run.save_field(U_CKPT, &out.u)?;
    run.save_field(CORRECTOR_CKPT, &out.corrector)?;
    run.write_csv(
        "stage1_loss.csv",
        &["iter", "am_loss", "cm_loss"],
        out.history
            .iter()
            .map(|r| vec![r.iteration.to_string(), fmt17(r.am_loss), fmt17(r.cm_loss)]),
    )?;
    Ok(out)
}

pub fn train_stage2(run: &RunDir) -> Result<Stage2Outcome> {
    let cfg = &run.config;
    let dim = cfg.schedule.dim;
    let u = match cfg.stage2.coupling {
        CouplingMode::LearnedForward => Some(run.load_field(U_CKPT)?),
        _ => None,
    };
    let mut v = if cfg.stage2.warm_start_from_corrector {
        run.load_field(CORRECTOR_CKPT)?
    } else {
        ControlField::init(
            init_seed(cfg.seed, 3),
            cfg.architectures.backward(dim),
            Some(cfg.architectures.time_embedding()),
        )?
    };
    v.output_scale = cfg.architectures.backward_scale(&cfg.schedule);
    let mut rng = run.rng("stage2");
    let out = stage2_train(
        &cfg.schedule,
        &cfg.stage2,
        &cfg.dataset,
        &cfg.prior,
        u.as_ref(),
        v,
        &mut rng,
        |_, v| run.save_field(V_CKPT, v),
    )?;
    run.save_field(V_CKPT, &out.v)?;
    run.write_csv(
        "stage2_loss.csv",
        &["iter", "bm_loss"],
        out.history.iter().map(|r| vec![r.iteration.to_string(), fmt17(r.bm_loss)]),
    )?;
    Ok(out)
}

#[derive(Serialize)]
struct DistillReport<'a> {
    warmup_mse: f64,
    evals: &'a [crate::distill::DistillEval],
    config_hash: String,
    seed: u64,
}

pub fn distill(run: &RunDir) -> Result<DistillOutcome> {
    let cfg = &run.config;
    let v_phi = run.load_field(V_CKPT)?;
    let gen = GeneratorField::init(init_seed(cfg.seed, 4), cfg.schedule.dim, &cfg.architectures.generator_hidden)?;
    let mut rng = run.rng("distill");
    let out = distill_train(&cfg.schedule, &cfg.distill, &cfg.dataset, &cfg.prior, &v_phi, gen, &mut rng)?;
    run.save_field(GEN_INIT_CKPT, &out.initial_generator.field)?;
    run.save_field(GEN_CKPT, &out.generator.field)?;
    run.save_field("fake.ckpt.json", &out.fake_control)?;
    run.write_csv(
        "distill_loss.csv",
        &["iter", "fake_loss", "generator_loss"],
        out.history
            .iter()
            .map(|r| vec![r.iteration.to_string(), fmt17(r.fake_loss), fmt17(r.generator_loss)]),
    )?;
    let report = DistillReport {
        warmup_mse: out.warmup_mse,
        evals: &out.evals,
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    fs::write(run.path("distill_metrics.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(out)
}

/// `{metric → value, config hash, seed}` as written to `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub metrics: BTreeMap<String, f64>,
    pub config_hash: String,
    pub seed: u64,
}

impl Metrics {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Replaces the configured NFE list.
    pub nfe: Option<Vec<usize>>,
    pub plots: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn write_samples(path: &Path, sets: &[(&str, ArrayView2<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = sets.first().map(|s| s.1.ncols()).unwrap_or(0);
    let mut header = vec!["source".to_string()];
    header.extend((0..dim).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for (name, x) in sets {
        for row in x.outer_iter() {
            let mut rec = vec![name.to_string()];
            rec.extend(row.iter().map(|&v| fmt17(v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sample quality and trajectory diagnostics of the trained backward field
/// (and of the generator when one exists), written to `metrics.json`.
pub fn evaluate(run: &RunDir, opts: &EvalOptions) -> Result<Metrics> {
    let cfg = &run.config;
    let e = &cfg.eval;
    let nfes = opts.nfe.clone().unwrap_or_else(|| e.nfe.clone());
    if nfes.is_empty() || nfes.contains(&0) {
        return Err(Error::Config("nfe values must be positive".into()));
    }
    let v = run.load_field(V_CKPT)?;
    let u = run.forward_field()?;
    let gen_path = run.path(GEN_CKPT);
    let gen = if gen_path.exists() {
        Some(GeneratorField::from_field(ControlField::load(&gen_path)?)?)
    } else {
        None
    };
    let params = &cfg.schedule;
    let modes = cfg.dataset.modes();
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut push = |k: String, x: f64| acc.entry(k).or_default().push(x);

    for (si, &seed) in e.seeds.iter().enumerate() {
        let base = run.rng(&format!("eval/{seed}"));
        let reference = cfg.dataset.sample(e.samples, &mut base.fork("reference"));
        for &nfe in &nfes {
            let mut rng = base.fork(&format!("sample/{nfe}"));
            let x1 = cfg.prior.sample(e.samples, &mut rng);
            let x0 = EulerMaruyama::new(nfe).backward_terminal(params, &v, x1.view(), &mut rng)?;
            push(format!("energy_distance_nfe{nfe}"), energy_distance(x0.view(), reference.view())?);
            push(format!("variance_nfe{nfe}"), mean(&column_variance(x0.view())));
            if let Some(m) = &modes {
                push(
                    format!("mode_coverage_nfe{nfe}"),
                    mode_coverage(x0.view(), m.view(), DEFAULT_MODE_RADIUS) as f64,
                );
            }
            if si == 0 && nfe == nfes[0] {
                write_samples(
                    &run.path("samples.csv"),
                    &[("generated", x0.view()), ("data", reference.view())],
                )?;
            }
        }

        let steps = e.trajectory_steps;
        let mut rng = base.fork("trajectories");
        let x1 = cfg.prior.sample(e.trajectories, &mut rng);
        let traj = EulerMaruyama::new(steps).backward(params, &v, x1.view(), &mut rng)?;
        push("straightness".into(), mean(&straightness(&traj)?));
        if si == 0 && e.dump_trajectories > 0 {
            let dir = run.path("trajectories");
            fs::create_dir_all(&dir)?;
            let keep = e.dump_trajectories.min(traj.batch());
            let head = crate::sde::Trajectory {
                times: traj.times.clone(),
                states: traj.states.slice(ndarray::s![.., ..keep, ..]).to_owned(),
                direction: traj.direction,
            };
            head.write_csv(fs::File::create(dir.join(format!("backward_em_nfe{steps}.csv")))?)?;
        }
        let mut rng = base.fork("variance");
        let starts = cfg.prior.sample(e.variance_starts, &mut rng);
        push(
            "trajectory_variance".into(),
            trajectory_variance(params, &v, starts.view(), e.variance_reps, steps, &mut rng)?,
        );
        let mut rng = base.fork("inversion");
        let x0 = cfg.dataset.sample(e.trajectories, &mut rng);
        push(
            "inversion_error".into(),
            inversion_error(params, u.as_ref(), &v, x0.view(), steps, &mut rng)?,
        );

        if let Some(g) = &gen {
            let mut rng = base.fork("generator");
            let x = g.sample(&cfg.prior, e.samples, &mut rng)?;
            push("generator_energy_distance".into(), energy_distance(x.view(), reference.view())?);
            push("generator_variance".into(), mean(&column_variance(x.view())));
            if let Some(m) = &modes {
                push(
                    "generator_mode_coverage".into(),
                    mode_coverage(x.view(), m.view(), DEFAULT_MODE_RADIUS) as f64,
                );
            }
        }
    }

    let mut metrics: BTreeMap<String, f64> = acc.into_iter().map(|(k, xs)| (k, mean(&xs))).collect();
    let first = nfes[0];
    metrics.insert("energy_distance".into(), metrics[&format!("energy_distance_nfe{first}")]);
    metrics.insert("nfe".into(), first as f64);
    let out = Metrics {
        metrics,
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    fs::write(run.path(METRICS_FILE), serde_json::to_string_pretty(&out)? + "\n")?;
    if opts.plots {
        emit_plots(&run.root)?;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SampleOptions {
    pub nfe: usize,
    pub solver: Solver,
    /// Overrides the run seed for this draw.
    pub seed: Option<u64>,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleSummary {
    pub path: PathBuf,
    pub n: usize,
    pub nfe: usize,
    pub solver: Solver,
    pub seed: u64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Draw `n` samples with the chosen backward solver and write them to
/// `samples/<solver>_nfe<N>_seed<S>.csv`.
pub fn sample(run: &RunDir, opts: &SampleOptions) -> Result<(SampleSummary, Array2<f64>)> {
    if opts.nfe == 0 || opts.n == 0 {
        return Err(Error::Config("sample needs nfe >= 1 and n >= 1".into()));
    }
    let cfg = &run.config;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let v = run.load_field(V_CKPT)?;
    let mut rng = RngStream::new(seed).fork("sample");
    let x1 = cfg.prior.sample(opts.n, &mut rng);
    let x0 = match opts.solver {
        Solver::Em => EulerMaruyama::new(opts.nfe).backward_terminal(&cfg.schedule, &v, x1.view(), &mut rng)?,
        Solver::Heun => {
            let u = run.forward_field()?;
            pf_ode_heun_terminal(&cfg.schedule, u.as_ref(), &v, x1.view(), opts.nfe)?
        }
    };
    let dir = run.path("samples");
    fs::create_dir_all(&dir)?;
    let tag = match opts.solver {
        Solver::Em => "em",
        Solver::Heun => "heun",
    };
    let path = dir.join(format!("{tag}_nfe{}_seed{seed}.csv", opts.nfe));
    write_samples(&path, &[("generated", x0.view())])?;
    let n = x0.nrows() as f64;
    let summary = SampleSummary {
        path,
        n: opts.n,
        nfe: opts.nfe,
        solver: opts.solver,
        seed,
        mean: x0.columns().into_iter().map(|c| c.sum() / n).collect(),
        variance: column_variance(x0.view()),
    };
    Ok((summary, x0))
}
