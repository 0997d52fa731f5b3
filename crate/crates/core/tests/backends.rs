//! The sequential and rayon backends must agree bit for bit, whatever the
//! size of the thread pool.
#![cfg(feature = "parallel")]

use bridgelab::data::{DatasetSpec, PriorSpec};
use bridgelab::metrics::energy_distance;
use bridgelab::nn::{Architecture, ControlField, OptimizerConfig, TimeEmbedding};
use bridgelab::parallel::{set_backend, Backend};
use bridgelab::rng::RngStream;
use bridgelab::sde::em_backward;
use bridgelab::stage2::{stage2_train, CouplingMode, Stage2Config};
use bridgelab::ScheduleParams;

fn field() -> ControlField {
    let mut f = ControlField::init(1, Architecture::silu(2, &[32, 32], 2), Some(TimeEmbedding::with_period(4, 2.0))).unwrap();
    let mut rng = RngStream::new(2);
    for p in f.params.iter_mut() {
        *p = 0.3 * rng.normal();
    }
    f
}

/// Everything below in one pass so the global backend switch is never raced.
fn workload() -> Vec<u64> {
    let params = ScheduleParams::new(4.0, 0.1, 2).unwrap();
    let f = field();
    let mut rng = RngStream::new(3);
    let x = rng.normal_matrix(1000, 2);
    let y = rng.normal_matrix(1000, 2);
    let ts = rng.times(1000, 1e-4);
    let mut bits = Vec::new();
    let lg = f.regression_loss_grad(&ts, x.view(), y.view()).unwrap();
    bits.push(lg.loss.to_bits());
    bits.extend(lg.grad.iter().map(|g| g.to_bits()));
    bits.push(energy_distance(x.view(), (&y + 0.5).view()).unwrap().to_bits());
    let traj = em_backward(&params, &f, x.view(), 10, &mut RngStream::new(4)).unwrap();
    bits.extend(traj.states.iter().map(|v| v.to_bits()));
    let cfg = Stage2Config {
        iterations: 5,
        batch: 300,
        optimizer: OptimizerConfig::adam(1e-3),
        coupling: CouplingMode::BaseJoint,
        forward_nfe: 1,
        coupling_cache_size: 0,
        checkpoint_every: 0,
        warm_start_from_corrector: false,
    };
    let out = stage2_train(&params, &cfg, &DatasetSpec::GaussianRing8, &PriorSpec::standard(2), None, f, &mut RngStream::new(5), |_, _| Ok(())).unwrap();
    bits.extend(out.v.params.iter().map(|p| p.to_bits()));
    bits
}

#[test]
fn backends_agree_bitwise() {
    set_backend(Backend::Sequential);
    let sequential = workload();
    set_backend(Backend::Parallel);
    let parallel = workload();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let pooled = pool.install(workload);
    assert_eq!(sequential, parallel);
    assert_eq!(sequential, pooled);
}
