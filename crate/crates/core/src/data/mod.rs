//! Binary implicit-feedback datasets and per-user train/test splits.

mod io;
mod loaders;
mod synthetic;

pub use io::{read_pairs, read_split, write_pairs, write_split, SPLIT_FILE, STATS_FILE};
pub use loaders::{load_lastfm, load_mind, load_movielens, MIND_MIN_CLICKS};
pub use synthetic::SyntheticSpec;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse binary user×item matrix with contiguous 0-based ids.
///
/// Each row holds the sorted, de-duplicated item ids a user interacted with.
/// Labels map internal ids back to the identifiers found in the source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionMatrix {
    rows: Vec<Vec<u32>>,
    n_items: usize,
    user_labels: Vec<String>,
    item_labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    /// Percentage of unobserved user×item cells.
    pub sparsity_pct: f64,
}

impl DatasetStats {
    pub fn from_counts(users: usize, items: usize, interactions: usize) -> Self {
        let cells = (users as f64) * (items as f64);
        let sparsity_pct = if cells > 0.0 {
            100.0 * (1.0 - interactions as f64 / cells)
        } else {
            100.0
        };
        Self {
            users,
            items,
            interactions,
            sparsity_pct,
        }
    }
}

impl InteractionMatrix {
    /// Rows of internal item ids; labels default to the ids themselves.
    pub fn from_rows(rows: Vec<Vec<u32>>, n_items: usize) -> Result<Self> {
        let user_labels = (0..rows.len()).map(|u| u.to_string()).collect();
        let item_labels = (0..n_items).map(|i| i.to_string()).collect();
        Self::with_labels(rows, n_items, user_labels, item_labels)
    }

    pub fn with_labels(
        mut rows: Vec<Vec<u32>>,
        n_items: usize,
        user_labels: Vec<String>,
        item_labels: Vec<String>,
    ) -> Result<Self> {
        if user_labels.len() != rows.len() || item_labels.len() != n_items {
            return Err(Error::invalid("label maps do not match matrix dimensions"));
        }
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            if row.last().is_some_and(|&i| i as usize >= n_items) {
                return Err(Error::invalid("item id out of range"));
            }
        }
        Ok(Self {
            rows,
            n_items,
            user_labels,
            item_labels,
        })
    }

    /// Builds a matrix from external (user, item) label pairs, assigning
    /// internal ids in order of first appearance. Duplicate pairs collapse.
    pub fn from_labeled_pairs<I, U, T>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (U, T)>,
        U: AsRef<str>,
        T: AsRef<str>,
    {
        let mut users: HashMap<String, u32> = HashMap::new();
        let mut items: HashMap<String, u32> = HashMap::new();
        let mut user_labels = Vec::new();
        let mut item_labels = Vec::new();
        let mut rows: Vec<Vec<u32>> = Vec::new();
        for (u, i) in pairs {
            let uid = *users.entry(u.as_ref().to_owned()).or_insert_with(|| {
                user_labels.push(u.as_ref().to_owned());
                rows.push(Vec::new());
                (user_labels.len() - 1) as u32
            });
            let iid = *items.entry(i.as_ref().to_owned()).or_insert_with(|| {
                item_labels.push(i.as_ref().to_owned());
                (item_labels.len() - 1) as u32
            });
            rows[uid as usize].push(iid);
        }
        let n_items = item_labels.len();
        Self::with_labels(rows, n_items, user_labels, item_labels).expect("ids assigned contiguously")
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn row(&self, user: usize) -> &[u32] {
        &self.rows[user]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn contains(&self, user: usize, item: u32) -> bool {
        self.rows[user].binary_search(&item).is_ok()
    }

    pub fn interaction_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn user_labels(&self) -> &[String] {
        &self.user_labels
    }

    pub fn item_labels(&self) -> &[String] {
        &self.item_labels
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::from_counts(self.n_users(), self.n_items, self.interaction_count())
    }

    /// Every (user, item) pair in row order.
    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&i| (u as u32, i)))
    }

    /// Drops users failing `keep`, then drops items left without interactions,
    /// reindexing both contiguously while preserving relative order.
    pub fn retain_users(self, keep: impl Fn(&[u32]) -> bool) -> Self {
        let mut rows = Vec::new();
        let mut user_labels = Vec::new();
        for (row, label) in self.rows.into_iter().zip(self.user_labels) {
            if keep(&row) {
                rows.push(row);
                user_labels.push(label);
            }
        }
        let mut used = vec![false; self.n_items];
        for &i in rows.iter().flatten() {
            used[i as usize] = true;
        }
        let mut remap = vec![u32::MAX; self.n_items];
        let mut item_labels = Vec::new();
        for (old, label) in self.item_labels.into_iter().enumerate() {
            if used[old] {
                remap[old] = item_labels.len() as u32;
                item_labels.push(label);
            }
        }
        for row in &mut rows {
            for i in row.iter_mut() {
                *i = remap[*i as usize];
            }
        }
        let n_items = item_labels.len();
        Self::with_labels(rows, n_items, user_labels, item_labels).expect("remap keeps ids in range")
    }

    /// Interaction count per item.
    pub fn item_frequencies(&self) -> Vec<u32> {
        let mut f = vec![0u32; self.n_items];
        for &i in self.rows.iter().flatten() {
            f[i as usize] += 1;
        }
        f
    }

    fn empty_like(&self) -> Self {
        Self {
            rows: vec![Vec::new(); self.n_users()],
            n_items: self.n_items,
            user_labels: self.user_labels.clone(),
            item_labels: self.item_labels.clone(),
        }
    }
}

/// Train/test partition of one dataset. Both halves share ids and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: InteractionMatrix,
    pub test: InteractionMatrix,
    pub seed: u64,
}

impl SplitDataset {
    /// Users without test items take part in training but not in metrics.
    pub fn is_metric_exempt(&self, user: usize) -> bool {
        self.test.row(user).is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.train.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.train.n_items()
    }

    /// Training-set statistics; sparsity here is the figure usually reported
    /// for these benchmarks.
    pub fn train_stats(&self) -> DatasetStats {
        let full = self.train.interaction_count() + self.test.interaction_count();
        let mut s = self.train.stats();
        s.interactions = full;
        s.sparsity_pct = DatasetStats::from_counts(s.users, s.items, self.train.interaction_count()).sparsity_pct;
        s
    }
}

/// Training item count for a user with `count` interactions.
pub fn train_size(count: usize, train_frac: f64) -> usize {
    let n = (train_frac * count as f64).floor() as usize;
    match count {
        0 => 0,
        1 => 1,
        _ => n.clamp(1, count - 1),
    }
}

/// Per-user uniform random partition with `floor(train_frac·count)` training items.
pub fn split(data: &InteractionMatrix, train_frac: f64, seed: u64) -> Result<SplitDataset> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::invalid(format!("train fraction {train_frac} not in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = data.empty_like();
    let mut test = data.empty_like();
    for (u, row) in data.rows.iter().enumerate() {
        let mut items = row.clone();
        items.shuffle(&mut rng);
        let n_train = train_size(items.len(), train_frac);
        let (tr, te) = items.split_at(n_train);
        let mut tr = tr.to_vec();
        let mut te = te.to_vec();
        tr.sort_unstable();
        te.sort_unstable();
        train.rows[u] = tr;
        test.rows[u] = te;
    }
    Ok(SplitDataset { train, test, seed })
}
