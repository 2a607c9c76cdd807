//! Simulated federated training with bandit-selected payloads.
//!
//! Each iteration the server picks `M_s` item columns, ships that slice of
//! the item-factor matrix to `Θ` sampled clients, collects their gradient
//! blocks, and once `Θ` blocks have arrived applies one optimizer step to the
//! selected columns and feeds the aggregated gradients back to the bandit.
//!
//! Client rounds are pure and run in parallel; their blocks are submitted in
//! ascending user-id order so the aggregate is bit-identical across runs.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{BanditConfig, BanditState, SelectionLog};
use crate::cf::{self, FactorMatrix, GradientBlock, HyperParams, UserFactor};
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::eval::{self, Metrics, MetricsAccumulator, MetricsRecord, LIST_LEN, TOP_N, WINDOW};
use crate::exec::{self, Execution};
use crate::seed::derive_seed;

/// Bytes needed to ship `n_items` columns of `k` 64-bit floats.
pub fn payload_bytes(n_items: usize, k: usize) -> u64 {
    n_items as u64 * k as u64 * 8
}

/// How the server chooses the transmitted columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionPolicy {
    /// Every column, every round.
    Full,
    /// Thompson sampling on item posteriors.
    Bandit,
    /// A uniform random subset.
    Random,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    /// Plain `Q ← Q − η·G`.
    Sgd,
}

/// What the optimizer sees: the sum of the `Θ` client blocks or their mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub iteration: u64,
    pub download_bytes: u64,
    pub upload_bytes: u64,
}

/// Per-iteration and cumulative payload traffic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PayloadLedger {
    entries: Vec<LedgerEntry>,
    total_download: u64,
    total_upload: u64,
}

impl PayloadLedger {
    fn entry(&mut self, iteration: u64) -> &mut LedgerEntry {
        if self.entries.last().is_none_or(|e| e.iteration != iteration) {
            self.entries.push(LedgerEntry {
                iteration,
                ..LedgerEntry::default()
            });
        }
        self.entries.last_mut().expect("just pushed")
    }

    pub fn record_download(&mut self, iteration: u64, bytes: u64) {
        self.entry(iteration).download_bytes += bytes;
        self.total_download += bytes;
    }

    pub fn record_upload(&mut self, iteration: u64, bytes: u64) {
        self.entry(iteration).upload_bytes += bytes;
        self.total_upload += bytes;
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn total_download(&self) -> u64 {
        self.total_download
    }

    pub fn total_upload(&self) -> u64 {
        self.total_upload
    }
}

/// Emitted when `Θ` updates have been folded into the global model.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalUpdateEvent {
    pub iteration: u64,
    pub items: Vec<u32>,
    /// Bandit rewards per updated item; `None` unless the bandit policy is active.
    pub rewards: Option<Vec<f64>>,
}

/// Server side of the simulation.
#[derive(Debug, Clone)]
pub struct ServerState {
    hp: HyperParams,
    q: FactorMatrix,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    step_count: Vec<u64>,
    policy: SelectionPolicy,
    optimizer: Optimizer,
    aggregation: Aggregation,
    theta: usize,
    iteration: u64,
    selection: Option<Vec<u32>>,
    grad_buffer: Option<GradientBlock>,
    updates_received: usize,
    bandit: BanditState,
    ledger: PayloadLedger,
}

impl ServerState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        q: FactorMatrix,
        theta: usize,
        hp: HyperParams,
        bandit: BanditConfig,
        policy: SelectionPolicy,
        optimizer: Optimizer,
        aggregation: Aggregation,
        keep_selection_log: bool,
    ) -> Result<Self> {
        hp.validate()?;
        if theta == 0 {
            return Err(Error::invalid("update threshold must be at least 1"));
        }
        if q.k() != hp.k {
            return Err(Error::invalid("factor matrix K differs from hyper-parameters"));
        }
        if q.item_ids().iter().enumerate().any(|(j, &id)| id as usize != j) {
            return Err(Error::invalid("global factor matrix must hold items 0..M in order"));
        }
        let m = q.n_items();
        let n = q.as_item_major().len();
        Ok(Self {
            hp,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step_count: vec![0; m],
            policy,
            optimizer,
            aggregation,
            theta,
            iteration: 0,
            selection: None,
            grad_buffer: None,
            updates_received: 0,
            bandit: BanditState::new(m, hp.k, bandit, keep_selection_log)?,
            ledger: PayloadLedger::default(),
            q,
        })
    }

    pub fn q(&self) -> &FactorMatrix {
        &self.q
    }

    pub fn bandit(&self) -> &BanditState {
        &self.bandit
    }

    pub fn ledger(&self) -> &PayloadLedger {
        &self.ledger
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn theta(&self) -> usize {
        self.theta
    }

    pub fn updates_received(&self) -> usize {
        self.updates_received
    }

    pub fn selection(&self) -> Option<&[u32]> {
        self.selection.as_deref()
    }

    pub fn step_count(&self, item: usize) -> u64 {
        self.step_count[item]
    }

    pub fn adam_moments(&self) -> (&[f64], &[f64]) {
        (&self.adam_m, &self.adam_v)
    }

    /// Starts iteration `t + 1`: picks `m_s` columns, records the download
    /// traffic for `n_clients` recipients and returns the payload with
    /// ascending item ids.
    pub fn select_payload(&mut self, m_s: usize, n_clients: usize, rng: &mut ChaCha8Rng) -> Result<FactorMatrix> {
        let m = self.q.n_items();
        if m_s == 0 || m_s > m {
            return Err(Error::invalid(format!("cannot select {m_s} of {m} items")));
        }
        if self.updates_received > 0 {
            return Err(Error::invalid(format!(
                "{} of {} updates for the current payload are still outstanding",
                self.updates_received, self.theta
            )));
        }
        let mut items: Vec<u32> = match self.policy {
            SelectionPolicy::Full if m_s == m => (0..m as u32).collect(),
            SelectionPolicy::Full => {
                return Err(Error::invalid("the full policy always ships every column"));
            }
            SelectionPolicy::Bandit => self.bandit.select(m_s, rng)?,
            SelectionPolicy::Random => index::sample(rng, m, m_s).iter().map(|j| j as u32).collect(),
        };
        items.sort_unstable();
        let positions: Vec<usize> = items.iter().map(|&j| j as usize).collect();
        let payload = self.q.subset(&positions)?;
        self.iteration += 1;
        self.ledger
            .record_download(self.iteration, n_clients as u64 * payload_bytes(m_s, self.hp.k));
        self.grad_buffer = Some(GradientBlock::zeros(self.hp.k, items.clone()));
        self.selection = Some(items);
        Ok(payload)
    }

    /// Adds one client's gradient block; applies the global update once
    /// `Θ` blocks have been received.
    pub fn submit_update(&mut self, g: &GradientBlock) -> Result<Option<GlobalUpdateEvent>> {
        let buffer = self
            .grad_buffer
            .as_mut()
            .ok_or_else(|| Error::invalid("no payload has been selected"))?;
        if g.k() != buffer.k() || g.item_ids() != buffer.item_ids() {
            return Err(Error::invalid("gradient block does not match the current selection"));
        }
        if !g.is_finite() {
            return Err(Error::Numerical("client sent non-finite gradients".into()));
        }
        for (b, v) in buffer.as_item_major_mut().iter_mut().zip(g.as_item_major()) {
            *b += v;
        }
        self.updates_received += 1;
        self.ledger
            .record_upload(self.iteration, payload_bytes(g.item_ids().len(), g.k()));
        if self.updates_received < self.theta {
            return Ok(None);
        }
        self.apply_global_update().map(Some)
    }

    fn apply_global_update(&mut self) -> Result<GlobalUpdateEvent> {
        let mut grads = self.grad_buffer.take().expect("buffer exists while updates are pending");
        if self.aggregation == Aggregation::Mean {
            let scale = 1.0 / self.updates_received as f64;
            grads.as_item_major_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let k = self.hp.k;
        let hp = self.hp;
        for (col, &item) in grads.item_ids().iter().enumerate() {
            let j = item as usize;
            let g = grads.column(col);
            match self.optimizer {
                Optimizer::Sgd => {
                    for (q, gi) in self.q.column_mut(j).iter_mut().zip(g) {
                        *q -= hp.eta * gi;
                    }
                }
                Optimizer::Adam => {
                    self.step_count[j] += 1;
                    let t = self.step_count[j] as i32;
                    let c1 = 1.0 - hp.beta1.powi(t);
                    let c2 = 1.0 - hp.beta2.powi(t);
                    let range = j * k..(j + 1) * k;
                    let m = &mut self.adam_m[range.clone()];
                    let v = &mut self.adam_v[range];
                    let q = self.q.column_mut(j);
                    for r in 0..k {
                        m[r] = hp.beta1 * m[r] + (1.0 - hp.beta1) * g[r];
                        v[r] = hp.beta2 * v[r] + (1.0 - hp.beta2) * g[r] * g[r];
                        q[r] -= hp.eta * (m[r] / c1) / ((v[r] / c2).sqrt() + hp.epsilon);
                    }
                }
            }
        }
        let rewards = match self.policy {
            SelectionPolicy::Bandit => Some(self.bandit.feedback(self.iteration, &grads, hp.beta2)?),
            _ => None,
        };
        self.updates_received = 0;
        Ok(GlobalUpdateEvent {
            iteration: self.iteration,
            items: self.selection.clone().unwrap_or_default(),
            rewards,
        })
    }

    pub fn into_selection_log(self) -> Option<SelectionLog> {
        self.bandit.log().cloned()
    }
}

/// What one simulated client holds: its own interactions and, for
/// server-side bookkeeping, its best achievable metrics.
#[derive(Debug, Clone, Copy)]
pub struct ClientView<'a> {
    pub user_id: u32,
    /// Sorted training items; only the part inside the payload is used to train.
    pub train_items: &'a [u32],
    pub test_items: &'a [u32],
    pub best: Option<Metrics>,
}

impl ClientView<'_> {
    /// Binary training row aligned with sorted `payload_ids`.
    pub fn train_row(&self, payload_ids: &[u32]) -> Vec<bool> {
        let mut row = vec![false; payload_ids.len()];
        let (mut a, mut b) = (0, 0);
        while a < payload_ids.len() && b < self.train_items.len() {
            match payload_ids[a].cmp(&self.train_items[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    row[a] = true;
                    a += 1;
                    b += 1;
                }
            }
        }
        row
    }
}

/// Shared, read-only inputs of one round.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub payload: &'a FactorMatrix,
    /// `Σ_j q_j q_jᵀ` over the payload columns, row-major K×K.
    pub payload_gram: &'a [f64],
    /// Server's full matrix, used only to score recommendations.
    pub global: &'a FactorMatrix,
    pub hp: &'a HyperParams,
    pub evaluate: bool,
}

#[derive(Debug, Clone)]
pub struct ClientOutcome {
    pub user_id: u32,
    pub user_factor: UserFactor,
    pub gradients: GradientBlock,
    /// Raw test metrics and the user's best, when evaluated.
    pub metrics: Option<(Metrics, Metrics)>,
    pub upload_bytes: u64,
}

/// One client's local step: solve for its user factor against the payload,
/// compute item gradients, and evaluate its test items.
pub fn client_round(client: &ClientView<'_>, ctx: &RoundContext<'_>) -> Result<ClientOutcome> {
    let payload_ids = ctx.payload.item_ids();
    if payload_ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("payload item ids must be strictly increasing"));
    }
    let x = client.train_row(payload_ids);
    let p = cf::solve_user_factor_with_gram(&x, ctx.payload, ctx.payload_gram, ctx.hp)?;
    let gradients = cf::item_gradients(&p, &x, ctx.payload, ctx.hp)?;
    let metrics = match (ctx.evaluate, client.best) {
        (true, Some(best)) => {
            let rec = eval::recommend(&p, ctx.global, client.train_items, LIST_LEN)?;
            eval::metrics_at_n(&rec, client.test_items, TOP_N).map(|raw| (raw, best))
        }
        _ => None,
    };
    Ok(ClientOutcome {
        user_id: client.user_id,
        upload_bytes: payload_bytes(payload_ids.len(), ctx.hp.k),
        user_factor: p,
        gradients,
        metrics,
    })
}

/// Everything `run_training` needs besides data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub hp: HyperParams,
    pub bandit: BanditConfig,
    pub policy: SelectionPolicy,
    /// Columns per payload.
    pub m_s: usize,
    /// Client updates per global update; also the clients served per iteration.
    pub theta: usize,
    pub iterations: u64,
    pub optimizer: Optimizer,
    pub aggregation: Aggregation,
    pub init_std: f64,
    pub keep_selection_log: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingSeeds {
    pub init: u64,
    pub clients: u64,
    pub selection: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub m_s: usize,
    pub clients: usize,
    pub download_bytes: u64,
    pub upload_bytes: u64,
    pub metrics: MetricsRecord,
    /// Trailing mean over the last ten iterations.
    pub windowed: MetricsRecord,
}

#[derive(Debug, Clone)]
pub struct TrainingTrace {
    pub records: Vec<IterationRecord>,
    pub final_q: FactorMatrix,
    pub ledger: PayloadLedger,
    pub selection_log: Option<SelectionLog>,
}

const CLIENT_CHUNK: usize = 32;

/// Validates a training config against a dataset.
pub fn check_training_config(cfg: &TrainingConfig, split: &SplitDataset) -> Result<()> {
    cfg.hp.validate().map_err(|e| Error::Config(e.to_string()))?;
    cfg.bandit.validate().map_err(|e| Error::Config(e.to_string()))?;
    let (n, m) = (split.n_users(), split.n_items());
    if m == 0 || n == 0 {
        return Err(Error::Config("dataset is empty".into()));
    }
    if cfg.m_s == 0 || cfg.m_s > m {
        return Err(Error::Config(format!("payload size {} outside 1..={m}", cfg.m_s)));
    }
    if cfg.policy == SelectionPolicy::Full && cfg.m_s != m {
        return Err(Error::Config("the full policy needs M_s = M".into()));
    }
    if cfg.theta == 0 || cfg.theta > n {
        return Err(Error::Config(format!("theta {} outside 1..={n}", cfg.theta)));
    }
    if cfg.iterations == 0 {
        return Err(Error::Config("at least one iteration is required".into()));
    }
    if !(cfg.init_std > 0.0 && cfg.init_std.is_finite()) {
        return Err(Error::Config("init_std must be positive".into()));
    }
    Ok(())
}

/// Runs the whole training loop, invoking `observe` after every iteration.
pub fn run_training_with(
    cfg: &TrainingConfig,
    split: &SplitDataset,
    best: &[Option<Metrics>],
    seeds: TrainingSeeds,
    mode: Execution,
    mut observe: impl FnMut(&ServerState, &IterationRecord),
) -> Result<TrainingTrace> {
    check_training_config(cfg, split)?;
    if best.len() != split.n_users() {
        return Err(Error::Config("best-metric table does not match the split".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(seeds.init);
    let q = FactorMatrix::random_normal(cfg.hp.k, split.n_items(), cfg.init_std, &mut init_rng)?;
    let mut server = ServerState::new(
        q,
        cfg.theta,
        cfg.hp,
        cfg.bandit,
        cfg.policy,
        cfg.optimizer,
        cfg.aggregation,
        cfg.keep_selection_log,
    )?;
    let mut selection_rng = ChaCha8Rng::seed_from_u64(seeds.selection);
    let mut history: Vec<MetricsRecord> = Vec::with_capacity(cfg.iterations as usize);
    let mut records = Vec::with_capacity(cfg.iterations as usize);

    for t in 1..=cfg.iterations {
        let mut client_rng = ChaCha8Rng::seed_from_u64(derive_seed(seeds.clients, t));
        let mut users: Vec<u32> = index::sample(&mut client_rng, split.n_users(), cfg.theta)
            .iter()
            .map(|u| u as u32)
            .collect();
        users.sort_unstable();

        let payload = server.select_payload(cfg.m_s, users.len(), &mut selection_rng)?;
        let gram = payload.gram();
        let mut acc = MetricsAccumulator::default();
        let mut event = None;
        for chunk in users.chunks(CLIENT_CHUNK) {
            let ctx = RoundContext {
                payload: &payload,
                payload_gram: &gram,
                global: server.q(),
                hp: &cfg.hp,
                evaluate: true,
            };
            let outcomes = exec::try_map_slice(mode, chunk, |&u| {
                let view = ClientView {
                    user_id: u,
                    train_items: split.train.row(u as usize),
                    test_items: split.test.row(u as usize),
                    best: best[u as usize],
                };
                client_round(&view, &ctx)
            })?;
            for out in outcomes {
                if let Some((raw, best)) = out.metrics {
                    acc.add(&raw, &best);
                }
                if let Some(e) = server.submit_update(&out.gradients)? {
                    event = Some(e);
                }
            }
        }
        debug_assert!(event.is_some(), "every iteration serves exactly theta clients");

        let metrics = acc.finish(t);
        history.push(metrics);
        let ledger = server.ledger().entries().last().copied().unwrap_or_default();
        let record = IterationRecord {
            iteration: t,
            m_s: cfg.m_s,
            clients: users.len(),
            download_bytes: ledger.download_bytes,
            upload_bytes: ledger.upload_bytes,
            metrics,
            windowed: eval::aggregate_global(&history, WINDOW)?,
        };
        observe(&server, &record);
        records.push(record);
    }

    Ok(TrainingTrace {
        records,
        final_q: server.q().clone(),
        ledger: server.ledger().clone(),
        selection_log: server.into_selection_log(),
    })
}

pub fn run_training(
    cfg: &TrainingConfig,
    split: &SplitDataset,
    best: &[Option<Metrics>],
    seeds: TrainingSeeds,
    mode: Execution,
) -> Result<TrainingTrace> {
    run_training_with(cfg, split, best, seeds, mode, |_, _| {})
}
