//! Throughput of the hot paths: dense products with their backward pass,
//! environment steps, and whole meta-updates.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lifereward_core::autodiff::{Tape, Tensor};
use lifereward_core::env::{sample_task, Action, Env, EnvPreset};
use lifereward_core::inner::InnerConfig;
use lifereward_core::meta::{MetaConfig, TrainSetup, Trainer};
use lifereward_core::nets::Arch;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random(&[20, 64], &mut rng);
    let b = random(&[64, 256], &mut rng);
    c.bench_function("matmul 20x64x256 forward+backward", |bench| {
        bench.iter(|| {
            let tape = Tape::new();
            let x = tape.leaf(a.clone());
            let w = tape.leaf(b.clone());
            let y = x.matmul(&w).sum();
            tape.gradients(&y, &[&x, &w]).unwrap()
        })
    });
}

fn env_steps(c: &mut Criterion) {
    let preset = EnvPreset::by_name("random_abc").unwrap();
    let task = sample_task(&preset, &mut ChaCha8Rng::seed_from_u64(1));
    c.bench_function("random_abc 1000 steps", |bench| {
        bench.iter_batched(
            || (Env::new(task.clone()), ChaCha8Rng::seed_from_u64(2)),
            |(mut env, mut rng)| {
                for _ in 0..1000 {
                    if env.lifetime_done() {
                        break;
                    }
                    let r = env.step(Action::BASE[rng.random_range(0..4)]);
                    if r.episode_done && !r.lifetime_done {
                        env.next_episode();
                    }
                }
                env
            },
            BatchSize::SmallInput,
        )
    });
}

fn meta_update(c: &mut Criterion) {
    let preset = EnvPreset::by_name("fixed_abc").unwrap();
    let setup = TrainSetup {
        arch: Arch {
            obs_shape: preset.observation_shape(),
            num_actions: 4,
            conv_filters: 16,
            hidden: 64,
            lstm: 64,
        },
        preset,
        inner: InnerConfig::default(),
        meta: MetaConfig::default(),
    };
    let mut trainer = Trainer::new(setup, 0).unwrap();
    let mut group = c.benchmark_group("meta");
    group.sample_size(10);
    group.bench_function("fixed_abc meta-update, batch 8", |bench| bench.iter(|| trainer.step().unwrap()));
    group.finish();
}

criterion_group!(benches, matmul, env_steps, meta_update);
criterion_main!(benches);
