mod common;

use common::{bits_digest, synthetic_split, training_config, SEEDS};
use fcf_bts::eval;
use fcf_bts::exec::Execution;
use fcf_bts::federation::{self, payload_bytes, ClientView, Optimizer, RoundContext, SelectionPolicy};
use fcf_bts::{Error, FactorMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn unselected_columns_never_move() {
    let split = synthetic_split(80, 60, 10.0, 1);
    let best = eval::best_table(&split, 2);
    let cfg = training_config(SelectionPolicy::Bandit, 6, 12, 25);
    let mut before: Option<FactorMatrix> = None;
    let mut checked = 0;
    federation::run_training_with(&cfg, &split, &best, SEEDS, Execution::Sequential, |server, _| {
        if let Some(prev) = &before {
            let selected = server.selection().unwrap();
            for j in 0..prev.n_items() {
                if selected.binary_search(&(j as u32)).is_err() {
                    assert_eq!(prev.column(j), server.q().column(j), "item {j} moved");
                    checked += 1;
                }
            }
        }
        before = Some(server.q().clone());
    })
    .unwrap();
    assert_eq!(checked, 24 * (split.n_items() - 6));
}

#[test]
fn exactly_theta_submissions_per_update_and_exact_bytes() {
    let split = synthetic_split(70, 50, 10.0, 3);
    let best = eval::best_table(&split, 4);
    let (m_s, theta, iterations) = (7, 9, 15);
    let cfg = training_config(SelectionPolicy::Random, m_s, theta, iterations);
    let k = cfg.hp.k;
    let trace = federation::run_training_with(&cfg, &split, &best, SEEDS, Execution::Parallel, |server, rec| {
        assert_eq!(server.updates_received(), 0);
        assert_eq!(server.iteration(), rec.iteration);
        assert_eq!(rec.clients, theta);
    })
    .unwrap();
    let per_round = theta as u64 * payload_bytes(m_s, k);
    for e in trace.ledger.entries() {
        assert_eq!(e.download_bytes, per_round);
        assert_eq!(e.upload_bytes, per_round);
    }
    assert_eq!(trace.ledger.total_download(), iterations * theta as u64 * m_s as u64 * k as u64 * 8);
    assert_eq!(trace.ledger.total_upload(), trace.ledger.total_download());
}

#[test]
fn full_bandit_payload_matches_full_policy() {
    let split = synthetic_split(60, 40, 8.0, 5);
    let best = eval::best_table(&split, 6);
    let run = |policy| {
        let mut digests = Vec::new();
        let cfg = training_config(policy, split.n_items(), 10, 20);
        let trace = federation::run_training_with(&cfg, &split, &best, SEEDS, Execution::Sequential, |s, _| {
            digests.push(bits_digest(s.q().as_item_major()))
        })
        .unwrap();
        (digests, trace.records, trace.final_q)
    };
    let full = run(SelectionPolicy::Full);
    let bts = run(SelectionPolicy::Bandit);
    assert_eq!(full.0, bts.0);
    assert_eq!(full.1, bts.1);
    assert_eq!(full.2, bts.2);
}

#[test]
fn parallel_and_sequential_runs_are_identical() {
    let split = synthetic_split(90, 70, 12.0, 7);
    let best = eval::best_table(&split, 8);
    let cfg = training_config(SelectionPolicy::Bandit, 14, 40, 10);
    let a = federation::run_training(&cfg, &split, &best, SEEDS, Execution::Parallel).unwrap();
    let b = federation::run_training(&cfg, &split, &best, SEEDS, Execution::Sequential).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.final_q, b.final_q);
    let c = federation::run_training(&cfg, &split, &best, SEEDS, Execution::Parallel).unwrap();
    assert_eq!(a.records, c.records);
}

#[test]
fn sgd_step_subtracts_the_summed_client_gradients() {
    let split = synthetic_split(30, 20, 6.0, 9);
    let best = eval::best_table(&split, 10);
    let n = split.n_users();
    let mut cfg = training_config(SelectionPolicy::Full, split.n_items(), n, 1);
    cfg.optimizer = Optimizer::Sgd;
    let trace = federation::run_training(&cfg, &split, &best, SEEDS, Execution::Parallel).unwrap();

    let q0 = FactorMatrix::random_normal(cfg.hp.k, split.n_items(), cfg.init_std, &mut ChaCha8Rng::seed_from_u64(SEEDS.init))
        .unwrap();
    let gram = q0.gram();
    let ctx = RoundContext {
        payload: &q0,
        payload_gram: &gram,
        global: &q0,
        hp: &cfg.hp,
        evaluate: false,
    };
    let mut sum = vec![0.0; q0.as_item_major().len()];
    for u in 0..n {
        let view = ClientView {
            user_id: u as u32,
            train_items: split.train.row(u),
            test_items: split.test.row(u),
            best: None,
        };
        let out = federation::client_round(&view, &ctx).unwrap();
        for (s, g) in sum.iter_mut().zip(out.gradients.as_item_major()) {
            *s += g;
        }
    }
    for (i, (q1, (q, g))) in trace.final_q.as_item_major().iter().zip(q0.as_item_major().iter().zip(&sum)).enumerate() {
        assert_eq!(*q1, q - cfg.hp.eta * g, "entry {i}");
    }
}

#[test]
fn config_errors_surface_before_training() {
    let split = synthetic_split(20, 15, 5.0, 11);
    let best = eval::best_table(&split, 12);
    let too_many = training_config(SelectionPolicy::Bandit, 3, 21, 5);
    assert!(matches!(
        federation::run_training(&too_many, &split, &best, SEEDS, Execution::Sequential),
        Err(Error::Config(_))
    ));
    let partial_full = training_config(SelectionPolicy::Full, 3, 5, 5);
    assert!(matches!(
        federation::run_training(&partial_full, &split, &best, SEEDS, Execution::Sequential),
        Err(Error::Config(_))
    ));
}
