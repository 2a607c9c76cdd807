#![allow(dead_code)]

use fcf_bts::data::{self, SplitDataset, SyntheticSpec};
use fcf_bts::federation::{SelectionPolicy, TrainingConfig, TrainingSeeds};
use fcf_bts::{BanditConfig, HyperParams};

pub fn synthetic_split(users: usize, items: usize, mean_interactions: f64, seed: u64) -> SplitDataset {
    let spec = SyntheticSpec {
        users,
        items,
        mean_interactions,
        seed,
        ..SyntheticSpec::default()
    };
    data::split(&spec.generate().unwrap(), 0.8, seed ^ 0x5eed).unwrap()
}

pub fn training_config(policy: SelectionPolicy, m_s: usize, theta: usize, iterations: u64) -> TrainingConfig {
    TrainingConfig {
        hp: HyperParams::default(),
        bandit: BanditConfig::default(),
        policy,
        m_s,
        theta,
        iterations,
        optimizer: Default::default(),
        aggregation: Default::default(),
        init_std: 0.01,
        keep_selection_log: false,
    }
}

pub const SEEDS: TrainingSeeds = TrainingSeeds {
    init: 11,
    clients: 12,
    selection: 13,
};

/// Bit-level fingerprint of a float slice.
pub fn bits_digest(values: &[f64]) -> u64 {
    use std::hash::{DefaultHasher, Hash, Hasher};
    let mut h = DefaultHasher::new();
    for v in values {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

pub mod oracle {
    use fcf_bts::cf::{self, FactorMatrix, HyperParams, UserFactor};
    use fcf_bts::data::InteractionMatrix;

    pub fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Relative error between `item_gradients` and central differences of
    /// the single-user cost.
    pub fn gradient_fd_error(p: &UserFactor, x: &[bool], q: &FactorMatrix, hp: &HyperParams) -> f64 {
        let row = x.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j as u32).collect();
        let data = InteractionMatrix::from_rows(vec![row], x.len()).unwrap();
        let analytic = cf::item_gradients(p, x, q, hp).unwrap();
        let h = 1e-5;
        let (k, m) = (q.k(), q.n_items());
        let mut diff = vec![0.0; k * m];
        for j in 0..m {
            for r in 0..k {
                let shifted = |d: f64| {
                    let mut values = q.as_item_major().to_vec();
                    values[j * k + r] += d;
                    let qq = FactorMatrix::new(k, q.item_ids().to_vec(), values).unwrap();
                    cf::cost(std::slice::from_ref(p), &qq, &data, hp).unwrap()
                };
                let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
                diff[j * k + r] = numeric - analytic.as_item_major()[j * k + r];
            }
        }
        norm(&diff) / norm(analytic.as_item_major()).max(1e-3)
    }

    /// Norm of the single-user cost gradient in `p` at the closed-form solve.
    pub fn stationarity_residual(x: &[bool], q: &FactorMatrix, hp: &HyperParams) -> f64 {
        let p = cf::solve_user_factor(x, q, hp).unwrap();
        let p = p.as_slice();
        let mut g: Vec<f64> = p.iter().map(|v| 2.0 * hp.lambda * v).collect();
        for (j, &obs) in x.iter().enumerate() {
            let col = q.column(j);
            let pred: f64 = col.iter().zip(p).map(|(a, b)| a * b).sum();
            let target = if obs { 1.0 } else { 0.0 };
            let coef = -2.0 * cf::confidence(obs, hp.alpha) * (target - pred);
            for (gi, c) in g.iter_mut().zip(col) {
                *gi += coef * c;
            }
        }
        norm(&g)
    }
}
