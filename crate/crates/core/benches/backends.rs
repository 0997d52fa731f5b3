use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bridgelab::metrics::energy_distance;
use bridgelab::nn::{Architecture, ControlField, TimeEmbedding};
use bridgelab::parallel::{set_backend, Backend};
use bridgelab::rng::RngStream;
use bridgelab::sde::EulerMaruyama;
use bridgelab::ScheduleParams;

fn backends() -> Vec<(&'static str, Backend)> {
    let mut all = vec![("sequential", Backend::Sequential)];
    #[cfg(feature = "parallel")]
    all.push(("parallel", Backend::Parallel));
    all
}

fn field() -> ControlField {
    ControlField::init(1, Architecture::silu(2, &[128, 128, 128], 2), Some(TimeEmbedding::with_period(8, 2.0))).unwrap()
}

fn bench_loss_grad(c: &mut Criterion) {
    let f = field();
    let mut rng = RngStream::new(0);
    let x = rng.normal_matrix(512, 2);
    let y = rng.normal_matrix(512, 2);
    let ts = rng.times(512, 1e-4);
    let mut group = c.benchmark_group("mlp_loss_grad_512");
    for (name, backend) in backends() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_backend(backend);
            b.iter(|| f.regression_loss_grad(&ts, x.view(), y.view()).unwrap())
        });
    }
    group.finish();
}

fn bench_energy_distance(c: &mut Criterion) {
    let mut rng = RngStream::new(1);
    let a = rng.normal_matrix(2000, 2);
    let b = rng.normal_matrix(2000, 2);
    let mut group = c.benchmark_group("energy_distance_2000");
    group.sample_size(10);
    for (name, backend) in backends() {
        group.bench_function(BenchmarkId::from_parameter(name), |bch| {
            set_backend(backend);
            bch.iter(|| energy_distance(a.view(), b.view()).unwrap())
        });
    }
    group.finish();
}

fn bench_em(c: &mut Criterion) {
    let params = ScheduleParams::new(4.0, 0.1, 2).unwrap();
    let f = field();
    let x1 = RngStream::new(2).normal_matrix(1000, 2);
    let mut group = c.benchmark_group("em_backward_1000x20");
    group.sample_size(10);
    for (name, backend) in backends() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_backend(backend);
            b.iter(|| {
                EulerMaruyama::new(20)
                    .backward_terminal(&params, &f, x1.view(), &mut RngStream::new(3))
                    .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_loss_grad, bench_energy_distance, bench_em);
criterion_main!(benches);
