use fcf_bts::bandit::{self, BanditConfig, ItemPosterior};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fold(rewards: &[f64], cfg: &BanditConfig) -> ItemPosterior {
    rewards
        .iter()
        .try_fold(ItemPosterior::prior(cfg), |p, &r| bandit::update_posterior(&p, r, cfg))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sequential_updates_equal_the_batch_posterior(
        rewards in prop::collection::vec(-2.0f64..2.0, 1..10_000),
        shuffle_seed in any::<u64>(),
    ) {
        let cfg = BanditConfig::default();
        let mut permuted = rewards.clone();
        permuted.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let z = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let (mu, tau) = bandit::batch_posterior(rewards.len() as u64, z, &cfg);
        for post in [fold(&rewards, &cfg), fold(&permuted, &cfg)] {
            prop_assert!((post.mu_hat - mu).abs() < 1e-12);
            prop_assert!((post.tau_hat - tau).abs() <= 1e-12 * tau);
        }
    }

    #[test]
    fn precision_grows_by_one_per_reward(n in 1usize..500) {
        let cfg = BanditConfig::default();
        let post = fold(&vec![0.3; n], &cfg);
        prop_assert_eq!(post.tau_hat, cfg.tau_prior + n as f64);
        prop_assert_eq!(post.n, n as u64);
    }

    #[test]
    fn selection_is_deterministic_and_distinct(seed in any::<u64>(), m in 2usize..60, frac in 0.05f64..1.0) {
        let cfg = BanditConfig::default();
        let posts = vec![ItemPosterior::prior(&cfg); m];
        let m_s = ((frac * m as f64).ceil() as usize).clamp(1, m);
        let a = bandit::sample_items(&posts, m_s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = bandit::sample_items(&posts, m_s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), m_s);
    }
}

#[test]
fn confident_leader_is_always_selected() {
    let cfg = BanditConfig::default();
    let mut posts = vec![ItemPosterior::prior(&cfg); 50];
    posts[17] = fold(&vec![1.0; 2000], &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..2000 {
        assert_eq!(bandit::sample_items(&posts, 1, &mut rng).unwrap(), vec![17]);
    }
}

#[test]
fn fresh_posteriors_select_uniformly() {
    let cfg = BanditConfig::default();
    let posts = vec![ItemPosterior::prior(&cfg); 10];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let draws = 20_000;
    let mut counts = [0usize; 10];
    for _ in 0..draws {
        counts[bandit::sample_items(&posts, 1, &mut rng).unwrap()[0] as usize] += 1;
    }
    let expected = draws as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 0.1% critical value with 9 degrees of freedom
    assert!(chi2 < 27.88, "chi-square {chi2}, counts {counts:?}");
}
