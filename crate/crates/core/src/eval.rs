//! Top-N ranking metrics, per-user normalization and summary statistics.

use std::cmp::Ordering;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cf::{predict_scores, FactorMatrix, UserFactor};
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub const LIST_LEN: usize = 100;
pub const TOP_N: usize = 10;
pub const WINDOW: usize = 10;

/// One value per ranking metric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerMetric<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub map: T,
}

pub type Metrics = PerMetric<f64>;

impl<T: Copy> PerMetric<T> {
    pub const NAMES: [&'static str; 4] = ["precision", "recall", "f1", "map"];

    pub fn from_array([precision, recall, f1, map]: [T; 4]) -> Self {
        Self {
            precision,
            recall,
            f1,
            map,
        }
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.precision, self.recall, self.f1, self.map]
    }

    pub fn map_each<U: Copy>(&self, f: impl Fn(T) -> U) -> PerMetric<U> {
        PerMetric::from_array(self.to_array().map(f))
    }

    pub fn zip_with<U: Copy, V: Copy>(&self, other: &PerMetric<U>, f: impl Fn(T, U) -> V) -> PerMetric<V> {
        let (a, b) = (self.to_array(), other.to_array());
        PerMetric::from_array([f(a[0], b[0]), f(a[1], b[1]), f(a[2], b[2]), f(a[3], b[3])])
    }
}

fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Aggregated metrics for one iteration (or one evaluation pass).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    /// Users that contributed to the averages.
    pub users: usize,
    pub raw: Metrics,
    pub normalized: Metrics,
}

/// Ranked items for one user, training items excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecommendationList(Vec<u32>);

impl RecommendationList {
    pub fn new(items: Vec<u32>) -> Self {
        Self(items)
    }

    pub fn items(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn by_score_then_id(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Ranks items by score (descending, smaller id first on ties), skipping the
/// sorted `train_items`, and keeps the first `list_len`.
pub fn rank_scores(scores: &[f64], item_ids: &[u32], train_items: &[u32], list_len: usize) -> RecommendationList {
    let mut cand: Vec<(f64, u32)> = scores
        .iter()
        .zip(item_ids)
        .filter(|(_, id)| train_items.binary_search(id).is_err())
        .map(|(&s, &id)| (s, id))
        .collect();
    if list_len == 0 {
        return RecommendationList(Vec::new());
    }
    if list_len < cand.len() {
        cand.select_nth_unstable_by(list_len - 1, by_score_then_id);
        cand.truncate(list_len);
    }
    cand.sort_unstable_by(by_score_then_id);
    RecommendationList(cand.into_iter().map(|(_, id)| id).collect())
}

/// Scores every column of `q` for user `p` and ranks the non-training items.
pub fn recommend(p: &UserFactor, q: &FactorMatrix, train_items: &[u32], list_len: usize) -> Result<RecommendationList> {
    let scores = predict_scores(p, q)?;
    Ok(rank_scores(&scores, q.item_ids(), train_items, list_len))
}

/// Precision, recall, F1 and average precision over the first `n` entries.
///
/// `test_items` must be sorted. Recall and AP divide by `min(|test|, n)` so a
/// perfect list scores 1. Returns `None` for a user without test items.
pub fn metrics_at_n(rec: &RecommendationList, test_items: &[u32], n: usize) -> Option<Metrics> {
    if test_items.is_empty() || n == 0 {
        return None;
    }
    let hit_ranks: Vec<usize> = rec
        .items()
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, item)| test_items.binary_search(item).is_ok())
        .map(|(rank, _)| rank + 1)
        .collect();
    let hits = hit_ranks.len();
    let denom = test_items.len().min(n);
    let precision = hits as f64 / n as f64;
    let recall = hits as f64 / denom as f64;
    Some(Metrics {
        precision,
        recall,
        f1: f1_score(precision, recall),
        map: average_precision(&hit_ranks, denom),
    })
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `(1/denom)·Σ_i i/rank_i`, summed over a common denominator so the
/// result is the correctly rounded rational whenever it fits in `u128`.
fn average_precision(hit_ranks: &[usize], denom: usize) -> f64 {
    let lcm = hit_ranks.iter().try_fold(1u128, |l, &r| {
        let r = r as u128;
        (l / gcd(l, r)).checked_mul(r)
    });
    let exact = lcm.and_then(|lcm| {
        let num = hit_ranks.iter().enumerate().try_fold(0u128, |acc, (i, &r)| {
            acc.checked_add((i as u128 + 1).checked_mul(lcm / r as u128)?)
        })?;
        Some((num, lcm.checked_mul(denom as u128)?))
    });
    match exact {
        Some((num, den)) if num < 1 << 53 && den < 1 << 53 => num as f64 / den as f64,
        _ => hit_ranks.iter().enumerate().map(|(i, &r)| (i + 1) as f64 / r as f64).sum::<f64>() / denom as f64,
    }
}

/// Oracle list: the user's test items first, then random items the user
/// never interacted with, up to `list_len`; evaluated at `n`.
pub fn theoretical_best_list(
    train_items: &[u32],
    test_items: &[u32],
    n_items: usize,
    list_len: usize,
    rng: &mut ChaCha8Rng,
) -> RecommendationList {
    let mut list: Vec<u32> = test_items.iter().copied().take(list_len).collect();
    let seen = |i: &u32| train_items.binary_search(i).is_ok() || test_items.binary_search(i).is_ok();
    let free = n_items - train_items.len() - test_items.len();
    let want = list_len.saturating_sub(list.len()).min(free);
    if want > 0 {
        let unseen: Vec<u32> = (0..n_items as u32).filter(|i| !seen(i)).collect();
        list.extend(index::sample(rng, unseen.len(), want).iter().map(|p| unseen[p]));
    }
    RecommendationList(list)
}

pub fn theoretical_best(
    train_items: &[u32],
    test_items: &[u32],
    n_items: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Metrics> {
    if test_items.is_empty() {
        return None;
    }
    let list = theoretical_best_list(train_items, test_items, n_items, LIST_LEN, rng);
    metrics_at_n(&list, test_items, TOP_N)
}

/// Per-user best metrics; `None` for metric-exempt users. Each user draws its
/// padding from its own seeded stream, so the table does not depend on order.
pub fn best_table(split: &SplitDataset, seed: u64) -> Vec<Option<Metrics>> {
    (0..split.n_users())
        .map(|u| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u as u64));
            theoretical_best(split.train.row(u), split.test.row(u), split.n_items(), &mut rng)
        })
        .collect()
}

/// Ratio of each metric to its per-user best; `None` where the best is 0.
pub fn normalize(raw: &Metrics, best: &Metrics) -> PerMetric<Option<f64>> {
    raw.zip_with(best, |r, b| (b > 0.0).then(|| r / b))
}

/// Running means of raw and normalized per-user metrics.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    users: usize,
    raw_sum: [f64; 4],
    norm_sum: [f64; 4],
    norm_count: [usize; 4],
}

impl MetricsAccumulator {
    pub fn add(&mut self, raw: &Metrics, best: &Metrics) {
        self.users += 1;
        for (s, v) in self.raw_sum.iter_mut().zip(raw.to_array()) {
            *s += v;
        }
        for (i, v) in normalize(raw, best).to_array().into_iter().enumerate() {
            if let Some(v) = v {
                self.norm_sum[i] += v;
                self.norm_count[i] += 1;
            }
        }
    }

    pub fn finish(&self, iteration: u64) -> MetricsRecord {
        let mean = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 };
        let raw = self.raw_sum.map(|s| mean(s, self.users));
        let norm = std::array::from_fn(|i| mean(self.norm_sum[i], self.norm_count[i]));
        MetricsRecord {
            iteration,
            users: self.users,
            raw: Metrics::from_array(raw),
            normalized: Metrics::from_array(norm),
        }
    }
}

/// Popularity ranking of all items by training frequency, ties by smaller id.
pub fn popularity_ranking(split: &SplitDataset) -> Vec<u32> {
    let freq = split.train.item_frequencies();
    let mut items: Vec<u32> = (0..split.n_items() as u32).collect();
    items.sort_by(|a, b| freq[*b as usize].cmp(&freq[*a as usize]).then(a.cmp(b)));
    items
}

/// The shared popularity list evaluated for every non-exempt user.
///
/// Each user's list is the global ranking with that user's training items
/// skipped, cut to [`LIST_LEN`].
pub fn toplist_metrics(split: &SplitDataset, best: &[Option<Metrics>]) -> Result<MetricsRecord> {
    if best.len() != split.n_users() {
        return Err(Error::invalid("best-metric table does not match the split"));
    }
    let ranking = popularity_ranking(split);
    let mut acc = MetricsAccumulator::default();
    for (u, best) in best.iter().enumerate() {
        let Some(best) = best else { continue };
        let train = split.train.row(u);
        let list: Vec<u32> = ranking
            .iter()
            .filter(|i| train.binary_search(i).is_err())
            .take(LIST_LEN)
            .copied()
            .collect();
        if let Some(raw) = metrics_at_n(&RecommendationList(list), split.test.row(u), TOP_N) {
            acc.add(&raw, best);
        }
    }
    Ok(acc.finish(0))
}

/// Mean of the last `window` records that had contributing users.
pub fn aggregate_global(history: &[MetricsRecord], window: usize) -> Result<MetricsRecord> {
    let last = history.last().ok_or_else(|| Error::invalid("empty metric history"))?;
    let tail: Vec<&MetricsRecord> = history[history.len().saturating_sub(window.max(1))..]
        .iter()
        .filter(|r| r.users > 0)
        .collect();
    let n = tail.len();
    if n == 0 {
        return Ok(MetricsRecord {
            iteration: last.iteration,
            ..MetricsRecord::default()
        });
    }
    let mut raw = [0.0; 4];
    let mut norm = [0.0; 4];
    for r in &tail {
        for i in 0..4 {
            raw[i] += r.raw.to_array()[i];
            norm[i] += r.normalized.to_array()[i];
        }
    }
    Ok(MetricsRecord {
        iteration: last.iteration,
        users: tail.iter().map(|r| r.users).sum::<usize>() / n,
        raw: Metrics::from_array(raw.map(|v| v / n as f64)),
        normalized: Metrics::from_array(norm.map(|v| v / n as f64)),
    })
}

/// `|a − b| / b · 100`; `None` when `b` is zero.
pub fn relative_change_pct(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| ((a - b) / b).abs() * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImprDiff {
    /// Improvement over the baseline.
    pub impr_pct: PerMetric<Option<f64>>,
    /// Degradation against the full-payload model.
    pub diff_pct: PerMetric<Option<f64>>,
}

pub fn impr_diff(bts: &Metrics, baseline: &Metrics, original: &Metrics) -> ImprDiff {
    ImprDiff {
        impr_pct: bts.zip_with(baseline, relative_change_pct),
        diff_pct: bts.zip_with(original, relative_change_pct),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, InteractionMatrix};

    fn list(v: &[u32]) -> RecommendationList {
        RecommendationList(v.to_vec())
    }

    #[test]
    fn zero_user_ranks_by_item_id() {
        let q = FactorMatrix::zeros(3, 8);
        let r = recommend(&UserFactor::zeros(3), &q, &[2], 5).unwrap();
        assert_eq!(r.items(), &[0, 1, 3, 4, 5]);
    }

    #[test]
    fn ranking_matches_sort_and_excludes_train() {
        let q = FactorMatrix::from_rows(&[vec![0.5, 3.0, -1.0, 2.0, 0.1]]).unwrap();
        let p = UserFactor::new(vec![1.0]).unwrap();
        assert_eq!(recommend(&p, &q, &[], 100).unwrap().items(), &[1, 3, 0, 4, 2]);
        assert_eq!(recommend(&p, &q, &[1], 100).unwrap().items(), &[3, 0, 4, 2]);
        assert_eq!(recommend(&p, &q, &[1], 2).unwrap().items(), &[3, 0]);
    }

    #[test]
    fn perfect_and_empty_lists() {
        let test: Vec<u32> = (0..15).collect();
        let m = metrics_at_n(&list(&(0..10).collect::<Vec<_>>()), &test, 10).unwrap();
        assert_eq!(m, Metrics::from_array([1.0; 4]));
        let m = metrics_at_n(&list(&(20..30).collect::<Vec<_>>()), &test, 10).unwrap();
        assert_eq!(m, Metrics::default());
        assert!(metrics_at_n(&list(&[1, 2]), &[], 10).is_none());
    }

    #[test]
    fn hand_computed_average_precision() {
        let rec = list(&[5, 9, 7, 1, 2, 3, 4, 6, 8, 10]);
        let m = metrics_at_n(&rec, &[5, 7], 10).unwrap();
        assert_eq!(m.precision, 0.2);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.map, 5.0 / 6.0);
    }

    #[test]
    fn moving_a_hit_down_lowers_map() {
        let test = [1, 2, 3];
        let top = metrics_at_n(&list(&[1, 2, 9, 8, 7, 6, 5, 4, 0, 3]), &test, 10).unwrap();
        let low = metrics_at_n(&list(&[11, 2, 9, 8, 7, 6, 5, 4, 0, 1]), &test, 10).unwrap();
        assert!(low.map < top.map);
    }

    #[test]
    fn oracle_list_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let test: Vec<u32> = (0..12).collect();
        let b = theoretical_best(&[50], &test, 200, &mut rng).unwrap();
        assert_eq!(b.precision, 1.0);

        let b = theoretical_best(&[50], &[3, 4, 5], 200, &mut rng).unwrap();
        assert_eq!(b.precision, 0.3);
        assert_eq!(b.recall, 1.0);
        assert_eq!(b.map, 1.0);

        let train = [0, 1, 2];
        let test = [3, 4];
        let l = theoretical_best_list(&train, &test, 150, LIST_LEN, &mut rng);
        assert_eq!(l.len(), 100);
        assert_eq!(&l.items()[..2], &test);
        let mut sorted = l.items().to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
        assert!(l.items()[2..].iter().all(|i| !train.contains(i) && !test.contains(i)));
    }

    #[test]
    fn oracle_list_shorter_when_catalogue_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = theoretical_best_list(&[0, 1], &[2], 6, LIST_LEN, &mut rng);
        assert_eq!(l.len(), 4);
    }

    #[test]
    fn normalize_examples() {
        let best = Metrics::from_array([0.3, 1.0, 0.5, 1.0]);
        assert_eq!(normalize(&best, &best), PerMetric::from_array([Some(1.0); 4]));
        assert_eq!(normalize(&Metrics::default(), &best), PerMetric::from_array([Some(0.0); 4]));
        let raw = Metrics::from_array([0.15, 0.5, 0.25, 0.5]);
        assert_eq!(normalize(&raw, &best).precision, Some(0.5));
        let zero_best = Metrics::default();
        assert_eq!(normalize(&raw, &zero_best).map, None);
    }

    #[test]
    fn toplist_uses_frequency_then_id() {
        let train = InteractionMatrix::from_rows(vec![vec![3, 1], vec![3, 0], vec![3, 2], vec![1]], 6).unwrap();
        let s = SplitDataset {
            test: InteractionMatrix::from_rows(vec![vec![4], vec![5], vec![0], vec![]], 6).unwrap(),
            train,
            seed: 0,
        };
        assert_eq!(popularity_ranking(&s), vec![3, 1, 0, 2, 4, 5]);
        let best = best_table(&s, 9);
        assert!(best[3].is_none());
        let rec = toplist_metrics(&s, &best).unwrap();
        assert_eq!(rec.users, 3);
        // hits at rank 3, 4 and 2 for users 0, 1 and 2
        assert!((rec.normalized.map - (1.0 / 3.0 + 1.0 / 4.0 + 1.0 / 2.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn toplist_is_order_invariant() {
        let data = InteractionMatrix::from_rows(
            (0..30).map(|u| (0..12).filter(|i| (u * 7 + i * 3) % 5 < 2).collect()).collect(),
            12,
        )
        .unwrap();
        let s = split(&data, 0.8, 4).unwrap();
        let a = toplist_metrics(&s, &best_table(&s, 1)).unwrap();
        let b = toplist_metrics(&s, &best_table(&s, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn window_aggregation() {
        let rec = |i: u64, v: f64| MetricsRecord {
            iteration: i,
            users: 1,
            raw: Metrics::from_array([v; 4]),
            normalized: Metrics::from_array([v; 4]),
        };
        let constant: Vec<_> = (1..=30).map(|i| rec(i, 0.4)).collect();
        assert!((aggregate_global(&constant, 10).unwrap().normalized.map - 0.4).abs() < 1e-15);
        let two = [rec(1, 0.0), rec(2, 1.0)];
        assert_eq!(aggregate_global(&two, 10).unwrap().normalized.precision, 0.5);
        assert_eq!(aggregate_global(&two, 1).unwrap().normalized.precision, 1.0);
        assert!(aggregate_global(&[], 10).is_err());
    }

    #[test]
    fn impr_and_diff_examples() {
        let m = |v: f64| Metrics::from_array([v; 4]);
        let same = impr_diff(&m(0.3), &m(0.3), &m(0.5));
        assert_eq!(same.impr_pct.precision, Some(0.0));
        let d = impr_diff(&m(0.3041), &m(0.1), &m(0.3744)).diff_pct.precision.unwrap();
        assert!((d - 18.77).abs() < 0.01, "{d}");
        let i = impr_diff(&m(0.2001), &m(0.1159), &m(1.0)).impr_pct.precision.unwrap();
        assert!((i - 72.64).abs() < 0.01, "{i}");
        assert_eq!(impr_diff(&m(0.2), &m(0.0), &m(0.0)).impr_pct.map, None);
    }
}
