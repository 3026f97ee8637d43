//! Hot-path benchmarks: matrix exponential, certificate verification, the
//! LoRa airtime formula, one gateway round, and a short end-to-end run.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nalgebra::DMatrix;

use ctrlsim_core::ctrlmac::GatewaySchedule;
use ctrlsim_core::engine::run_scenario;
use ctrlsim_core::linalg::expm;
use ctrlsim_core::phy::time_on_air_at;
use ctrlsim_core::scenario::{Protocol, ScenarioSpec, TrafficPattern};
use ctrlsim_core::stability::{
    search_certificate, verify_certificate, AugmentedSystem, DpetcSystem,
};

fn bench_expm(c: &mut Criterion) {
    let m = DMatrix::<f64>::from_fn(12, 12, |i, j| {
        if i == j {
            -0.5
        } else {
            0.01 * ((i * 13 + j * 7) % 11) as f64
        }
    });
    c.bench_function("expm_12x12", |b| b.iter(|| expm(black_box(&m))));
}

fn bench_toa(c: &mut Criterion) {
    c.bench_function("time_on_air_222B", |b| {
        b.iter(|| time_on_air_at(black_box(222), 125_000.0, 7).unwrap())
    });
}

fn bench_verify(c: &mut Criterion) {
    let sys = DpetcSystem {
        a: DMatrix::from_element(1, 1, 1.0),
        b: DMatrix::from_element(1, 1, 1.0),
        k_gain: DMatrix::from_element(1, 1, -2.0),
        sigma: 0.0,
        rho: 0.001,
        h: 0.1,
        tau_d: 0.0,
    };
    let cert = search_certificate(&sys).unwrap().expect("benchmark system certifies");
    let aug = AugmentedSystem::from_system(&sys).unwrap();
    c.bench_function("verify_certificate_scalar", |b| {
        b.iter(|| verify_certificate(black_box(&cert), black_box(&aug)).unwrap())
    });
}

fn bench_gateway_round(c: &mut Criterion) {
    c.bench_function("gateway_round_5_requests", |b| {
        b.iter(|| {
            let mut sched = GatewaySchedule::new(5, 16, 3, 0.045);
            for slot in 1..=5 {
                sched.record_request(slot, slot);
            }
            black_box(sched.close_round(0.5, 0.036))
        })
    });
}

fn bench_short_run(c: &mut Criterion) {
    let spec = ScenarioSpec::traffic_benchmark(
        Protocol::Ctrlmac,
        20,
        TrafficPattern::Periodic,
        10.0,
        120.0,
        1,
    );
    c.bench_function("run_scenario_traffic_20n_120s", |b| {
        b.iter(|| run_scenario(black_box(&spec)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_expm,
    bench_toa,
    bench_verify,
    bench_gateway_round,
    bench_short_run
);
criterion_main!(benches);
