use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fcf_bts::data::{self, SyntheticSpec};
use fcf_bts::eval;
use fcf_bts::exec::{self, Execution};
use fcf_bts::federation::{self, ClientView, RoundContext, SelectionPolicy, TrainingConfig, TrainingSeeds};
use fcf_bts::{BanditConfig, FactorMatrix, HyperParams};

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn dataset() -> data::SplitDataset {
    let spec = SyntheticSpec {
        users: 400,
        items: 1000,
        mean_interactions: 40.0,
        ..SyntheticSpec::default()
    };
    data::split(&spec.generate().unwrap(), 0.8, 11).unwrap()
}

fn client_rounds(c: &mut Criterion) {
    let split = dataset();
    let hp = HyperParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = FactorMatrix::random_normal(hp.k, split.n_items(), 0.01, &mut rng).unwrap();
    let positions: Vec<usize> = (0..split.n_items()).step_by(10).collect();
    let payload = q.subset(&positions).unwrap();
    let gram = payload.gram();
    let best = eval::best_table(&split, 5);
    let users: Vec<u32> = (0..100).collect();

    let mut group = c.benchmark_group("client_rounds_100");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let ctx = RoundContext {
                    payload: &payload,
                    payload_gram: &gram,
                    global: &q,
                    hp: &hp,
                    evaluate: true,
                };
                exec::try_map_slice(mode, &users, |&u| {
                    let view = ClientView {
                        user_id: u,
                        train_items: split.train.row(u as usize),
                        test_items: split.test.row(u as usize),
                        best: best[u as usize],
                    };
                    federation::client_round(&view, &ctx)
                })
                .unwrap()
            })
        });
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let split = dataset();
    let best = eval::best_table(&split, 5);
    let cfg = TrainingConfig {
        hp: HyperParams::default(),
        bandit: BanditConfig::default(),
        policy: SelectionPolicy::Bandit,
        m_s: split.n_items() / 10,
        theta: 100,
        iterations: 10,
        optimizer: Default::default(),
        aggregation: Default::default(),
        init_std: 0.01,
        keep_selection_log: false,
    };
    let seeds = TrainingSeeds {
        init: 1,
        clients: 2,
        selection: 3,
    };
    let mut group = c.benchmark_group("training_10_iterations");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| federation::run_training(&cfg, &split, &best, seeds, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, client_rounds, training);
criterion_main!(benches);
