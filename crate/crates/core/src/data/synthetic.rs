use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::InteractionMatrix;

/// Generator for clustered, popularity-skewed implicit feedback.
///
/// Item popularity follows a Zipf-like law over a random rank permutation.
/// Users belong to one of `clusters` taste groups and pick items of their
/// own group `affinity` times more often.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub mean_interactions: f64,
    pub clusters: usize,
    pub zipf_exponent: f64,
    pub affinity: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            users: 500,
            items: 400,
            mean_interactions: 20.0,
            clusters: 8,
            zipf_exponent: 0.9,
            affinity: 8.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<InteractionMatrix> {
        if self.users == 0 || self.items < 2 || self.clusters == 0 {
            return Err(Error::invalid("synthetic data needs users, >= 2 items and >= 1 cluster"));
        }
        if !(self.mean_interactions >= 2.0) || !(self.affinity >= 1.0) {
            return Err(Error::invalid("mean_interactions must be >= 2 and affinity >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut ranks: Vec<usize> = (0..self.items).collect();
        for i in (1..ranks.len()).rev() {
            ranks.swap(i, rng.random_range(0..=i));
        }
        let base: Vec<f64> = ranks
            .iter()
            .map(|&r| 1.0 / ((r + 1) as f64).powf(self.zipf_exponent))
            .collect();
        let item_cluster: Vec<usize> = (0..self.items).map(|_| rng.random_range(0..self.clusters)).collect();
        let extra = Exp::new(1.0 / (self.mean_interactions - 2.0).max(1e-9))
            .map_err(|e| Error::invalid(e.to_string()))?;

        let mut rows = Vec::with_capacity(self.users);
        for _ in 0..self.users {
            let cluster = rng.random_range(0..self.clusters);
            let n = (2 + extra.sample(&mut rng).floor() as usize).min(self.items);
            let weight = |j: usize| {
                if item_cluster[j] == cluster {
                    base[j] * self.affinity
                } else {
                    base[j]
                }
            };
            let picked = index::sample_weighted(&mut rng, self.items, weight, n)
                .map_err(|e| Error::invalid(e.to_string()))?;
            rows.push(picked.iter().map(|j| j as u32).collect());
        }
        // Items nobody picked are dropped so M counts observed items only.
        Ok(InteractionMatrix::from_rows(rows, self.items)?.retain_users(|_| true))
    }
}
