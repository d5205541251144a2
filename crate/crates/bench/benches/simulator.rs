use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uavnet::cache::{run_caching_experiment, CachePolicy, CachingConfig};
use uavnet::channel::{associate_users, expected_gain_matrix, sum_rate};
use uavnet::harness::{build_scenario, parse_config_str, ExperimentConfig};
use uavnet::qtable::{select_action, update_q, QTable};
use uavnet::reservoir::{init_reservoir, ReservoirConfig};
use uavnet::trajectory::{train, HyperParams};

fn trajectory_config(n_uavs: usize, n_users: usize) -> ExperimentConfig {
    let text = format!(
        "[experiment]\nname = \"bench\"\n[scenario]\nn_uavs = {n_uavs}\nn_users = {n_users}\ncell_size = 100.0\n[trajectory]\n"
    );
    parse_config_str(&text, Path::new(".")).unwrap()
}

fn channel(c: &mut Criterion) {
    for (uavs, users) in [(2, 20), (5, 100)] {
        let cfg = trajectory_config(uavs, users);
        let s = build_scenario(&cfg, 0).unwrap();
        let assoc = associate_users(&s).unwrap();
        c.bench_function(&format!("sum_rate/{uavs}x{users}"), |b| {
            b.iter(|| sum_rate(black_box(&s), &assoc, None).unwrap())
        });
        c.bench_function(&format!("gain_matrix/{uavs}x{users}"), |b| {
            b.iter(|| expected_gain_matrix(black_box(&s)).unwrap())
        });
    }
}

fn reservoir(c: &mut Criterion) {
    for size in [100, 400] {
        let cfg = ReservoirConfig {
            reservoir_size: size,
            ..ReservoirConfig::default()
        };
        let mut m = init_reservoir(&cfg, 40, 40).unwrap();
        let u = DVector::from_element(40, 0.1);
        c.bench_function(&format!("reservoir_update/{size}"), |b| {
            b.iter(|| {
                m.update_state(black_box(&u)).unwrap();
            })
        });
    }
}

fn qlearning(c: &mut Criterion) {
    let mut q: QTable<u32> = QTable::new(21);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut s = 0u32;
    c.bench_function("q_select_update", |b| {
        b.iter(|| {
            let a = select_action(&q, &s, 0.1, &mut rng);
            let next = (s * 31 + a as u32) % 4096;
            update_q(&mut q, &s, a, 0.5, &next, 0.1, 0.9);
            s = next;
        })
    });
}

fn training(c: &mut Criterion) {
    let cfg = trajectory_config(2, 20);
    let s = build_scenario(&cfg, 0).unwrap();
    let mobility = cfg.mobility().unwrap();
    let hp = HyperParams {
        episodes: 1,
        slots_per_episode: 200,
        ..HyperParams::default()
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(20);
    group.bench_function("episode_2x20_200_slots", |b| {
        b.iter_batched(|| s.clone(), |s| train(&s, &hp, &mobility, None, 0).unwrap(), BatchSize::SmallInput)
    });
    group.finish();
}

fn caching(c: &mut Criterion) {
    let text = "[experiment]\nname = \"bench\"\n[scenario]\nn_users = 50\n[caching]\n";
    let cfg = parse_config_str(text, Path::new(".")).unwrap();
    let base = build_scenario(&cfg, 0).unwrap();
    let cc = CachingConfig {
        slots: 100,
        ..cfg.caching_section()
    };
    let mut group = c.benchmark_group("caching");
    group.sample_size(10);
    for policy in CachePolicy::ALL {
        group.bench_function(format!("{}_5_uavs_100_slots", policy.name()), |b| {
            b.iter(|| run_caching_experiment(&base, &cc, &cfg.lsm, 5, policy, 0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, channel, reservoir, qlearning, training, caching);
criterion_main!(benches);
