use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use e91_core::optics::{simulate_session, OpticsConfig, SessionOutput};
use e91_core::par::{self, Execution};
use e91_core::protocol::{analyze_streams, ProtocolParams};
use e91_core::quantum::SettingSet;
use e91_core::tags::{estimate_delay_times, window_sweep, ChshLayout, DelaySearch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn field_config(duration_s: f64) -> OpticsConfig {
    let mut cfg = OpticsConfig::ideal(2e7, duration_s);
    cfg.source.reference_phase = 2.5;
    cfg.channel.alice.transmittance = 0.05;
    cfg.channel.bob.transmittance = 0.05;
    cfg.channel.bob.delay_ps = 100_000_000;
    cfg.detector.alice.efficiency = 0.55;
    cfg.detector.bob.efficiency = 0.65;
    cfg.detector.alice.jitter_fwhm_ps = 400.0;
    cfg.detector.bob.jitter_fwhm_ps = 70.0;
    cfg.detector.alice.dark_rate = 3000.0;
    cfg.detector.bob.dark_rate = 100.0;
    cfg
}

fn streams(cfg: &OpticsConfig, seed: u64) -> SessionOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_session(cfg, &SettingSet::standard(), false, &mut rng).unwrap()
}

fn bench_window_sweep(c: &mut Criterion) {
    let out = streams(&field_config(1.0), 1);
    let layout = ChshLayout::from_settings(&SettingSet::standard().chsh());
    let windows = [16, 32, 64, 128, 256, 512, 800, 1024];
    let mut group = c.benchmark_group("window_sweep");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| window_sweep(&out.alice, &out.bob, &windows, 100_000_000, &layout, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_delay_search(c: &mut Criterion) {
    let out = streams(&field_config(1.0), 2);
    let (a, b) = (out.alice.times(), out.bob.times());
    let search = DelaySearch::symmetric(200_000_000, 16);
    let mut group = c.benchmark_group("delay_search");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| estimate_delay_times(&a, &b, &search, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_phase_sweep(c: &mut Criterion) {
    let params = ProtocolParams {
        block_s: 0.2,
        delay_search_ps: 1_000_000,
        ..ProtocolParams::default()
    };
    let settings = SettingSet::standard();
    let mut group = c.benchmark_group("phase_sweep");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::map_range(exec, 16, |i| {
                    let mut cfg = OpticsConfig::ideal(1e5, 0.2);
                    cfg.source.reference_phase = std::f64::consts::TAU * i as f64 / 16.0;
                    let out = streams(&cfg, i as u64);
                    analyze_streams(&out.alice, &out.bob, &settings, &params, 0).unwrap().report
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_window_sweep, bench_delay_search, bench_phase_sweep);
criterion_main!(benches);
