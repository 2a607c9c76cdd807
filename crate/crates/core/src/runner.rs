//! Experiment orchestration: configs, rebuilds, sweeps and summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandit::BanditConfig;
use crate::cf::HyperParams;
use crate::data::{self, DatasetStats, InteractionMatrix, SplitDataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{self, Metrics, MetricsRecord, PerMetric};
use crate::exec::Execution;
use crate::federation::{self, Aggregation, IterationRecord, Optimizer, SelectionPolicy, TrainingConfig, TrainingSeeds};
use crate::seed::{derive_seed, stream};

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SWEEP_FILE: &str = "sweep.json";
pub const SWEEP_TABLE_FILE: &str = "sweep.csv";
pub const DATA_DIR_ENV: &str = "FCF_DATA_DIR";
pub const MAX_REDUCTION: f64 = 0.98;
pub const DEFAULT_REDUCTIONS: [f64; 8] = [0.25, 0.5, 0.75, 0.8, 0.85, 0.9, 0.95, 0.98];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Movielens,
    Lastfm,
    Mind,
    Synthetic,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Movielens => "movielens",
            DatasetKind::Lastfm => "lastfm",
            DatasetKind::Mind => "mind",
            DatasetKind::Synthetic => "synthetic",
        }
    }

    pub fn default_theta(self) -> usize {
        match self {
            DatasetKind::Movielens | DatasetKind::Lastfm => 100,
            DatasetKind::Mind => 500,
            DatasetKind::Synthetic => 50,
        }
    }

    /// Location of the raw file relative to the data directory.
    pub fn default_file(self) -> Option<&'static str> {
        match self {
            DatasetKind::Movielens => Some("ml-1m/ratings.dat"),
            DatasetKind::Lastfm => Some("hetrec2011-lastfm-2k/user_artists.dat"),
            DatasetKind::Mind => Some("MINDsmall_train/behaviors.tsv"),
            DatasetKind::Synthetic => None,
        }
    }

    /// Published dataset statistics, with sparsity measured on the training split.
    pub fn published_stats(self) -> Option<DatasetStats> {
        let (users, items, interactions, sparsity_pct) = match self {
            DatasetKind::Movielens => (6040, 3064, 914_676, 96.05),
            DatasetKind::Lastfm => (1892, 17_632, 92_834, 99.78),
            DatasetKind::Mind => (16_026, 6923, 163_137, 99.88),
            DatasetKind::Synthetic => return None,
        };
        Some(DatasetStats {
            users,
            items,
            interactions,
            sparsity_pct,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Bts,
    Full,
    Random,
    Toplist,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Bts => "bts",
            Strategy::Full => "full",
            Strategy::Random => "random",
            Strategy::Toplist => "toplist",
        }
    }

    fn policy(self) -> Option<SelectionPolicy> {
        match self {
            Strategy::Bts => Some(SelectionPolicy::Bandit),
            Strategy::Full => Some(SelectionPolicy::Full),
            Strategy::Random => Some(SelectionPolicy::Random),
            Strategy::Toplist => None,
        }
    }
}

/// One experiment. Every default reproduces the reference protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// Raw data file; defaults to the dataset's file under the data directory.
    pub data_path: Option<PathBuf>,
    pub strategy: Strategy,
    /// Fraction of item columns left out of each payload.
    pub reduction: f64,
    pub iterations: u64,
    pub rebuilds: usize,
    /// Update threshold; the dataset default when absent.
    pub theta: Option<usize>,
    pub train_frac: f64,
    pub init_std: f64,
    pub master_seed: u64,
    pub optimizer: Optimizer,
    pub aggregation: Aggregation,
    pub hyperparams: HyperParams,
    pub bandit: BanditConfig,
    pub synthetic: SyntheticSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::default(),
            data_path: None,
            strategy: Strategy::default(),
            reduction: 0.9,
            iterations: 1000,
            rebuilds: 3,
            theta: None,
            train_frac: 0.8,
            init_std: 0.01,
            master_seed: 2022,
            optimizer: Optimizer::default(),
            aggregation: Aggregation::default(),
            hyperparams: HyperParams::default(),
            bandit: BanditConfig::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text)
    }

    pub fn theta(&self) -> usize {
        self.theta.unwrap_or_else(|| self.dataset.default_theta())
    }

    /// Reduction actually applied; the full strategy always ships everything.
    pub fn effective_reduction(&self) -> f64 {
        match self.strategy {
            Strategy::Full | Strategy::Toplist => 0.0,
            _ => self.reduction,
        }
    }

    /// Payload width for a catalogue of `n_items`.
    pub fn payload_items(&self, n_items: usize) -> usize {
        (((1.0 - self.effective_reduction()) * n_items as f64).round() as usize).clamp(1, n_items.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_REDUCTION).contains(&self.reduction) {
            return Err(Error::Config(format!(
                "reduction {} outside [0, {MAX_REDUCTION}]",
                self.reduction
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.rebuilds == 0 {
            return Err(Error::Config("rebuilds must be positive".into()));
        }
        if self.theta == Some(0) {
            return Err(Error::Config("theta must be positive".into()));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config("train_frac must lie in (0, 1)".into()));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        self.hyperparams.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.bandit.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 over the canonical JSON form of the config.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn resolve_data_path(&self) -> Option<PathBuf> {
        if let Some(p) = &self.data_path {
            return Some(p.clone());
        }
        let file = self.dataset.default_file()?;
        let dir = std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from);
        Some(dir.join(file))
    }

    pub fn rebuild_seed(&self, rebuild: usize) -> u64 {
        derive_seed(self.master_seed, rebuild as u64)
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<InteractionMatrix> {
    let Some(path) = cfg.resolve_data_path() else {
        return cfg.synthetic.generate();
    };
    if !path.is_file() {
        return Err(Error::Config(format!(
            "{} data not found at {} (set data_path or {DATA_DIR_ENV})",
            cfg.dataset.name(),
            path.display()
        )));
    }
    match cfg.dataset {
        DatasetKind::Movielens => data::load_movielens(&path),
        DatasetKind::Lastfm => data::load_lastfm(&path),
        DatasetKind::Mind => data::load_mind(&path),
        DatasetKind::Synthetic => data::read_pairs(&path),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebuildSummary {
    pub rebuild: usize,
    pub seed: u64,
    /// Trailing-window metrics at the last iteration.
    pub result: MetricsRecord,
    pub download_bytes: u64,
    pub upload_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub fingerprint: String,
    pub config: ExperimentConfig,
    pub stats: DatasetStats,
    pub payload_items: usize,
    pub theta: usize,
    pub rebuilds: Vec<RebuildSummary>,
    /// Cross-rebuild mean and sample standard deviation of normalized metrics.
    pub mean: Metrics,
    pub sd: Metrics,
    pub raw_mean: Metrics,
}

impl ExperimentSummary {
    pub fn strategy(&self) -> Strategy {
        self.config.strategy
    }

    pub fn reduction(&self) -> f64 {
        self.config.effective_reduction()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub summary: ExperimentSummary,
    /// Per-rebuild iteration records; empty for the popularity baseline.
    pub traces: Vec<Vec<IterationRecord>>,
}

#[derive(Debug, Serialize)]
struct TraceRow<'a> {
    fingerprint: &'a str,
    seed: u64,
    rebuild: usize,
    strategy: &'static str,
    reduction: f64,
    iteration: u64,
    m_s: usize,
    clients: usize,
    download_bytes: u64,
    upload_bytes: u64,
    users: usize,
    raw_precision: f64,
    raw_recall: f64,
    raw_f1: f64,
    raw_map: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    map: f64,
    window_precision: f64,
    window_recall: f64,
    window_f1: f64,
    window_map: f64,
}

fn mean_sd(values: &[Metrics]) -> (Metrics, Metrics) {
    let n = values.len() as f64;
    let mut mean = [0.0; 4];
    for v in values {
        for (m, x) in mean.iter_mut().zip(v.to_array()) {
            *m += x / n;
        }
    }
    let mut var = [0.0; 4];
    if values.len() > 1 {
        for v in values {
            for i in 0..4 {
                var[i] += (v.to_array()[i] - mean[i]).powi(2) / (n - 1.0);
            }
        }
    }
    (Metrics::from_array(mean), Metrics::from_array(var.map(f64::sqrt)))
}

fn training_config(cfg: &ExperimentConfig, policy: SelectionPolicy, n_items: usize) -> TrainingConfig {
    TrainingConfig {
        hp: cfg.hyperparams,
        bandit: cfg.bandit,
        policy,
        m_s: cfg.payload_items(n_items),
        theta: cfg.theta(),
        iterations: cfg.iterations,
        optimizer: cfg.optimizer,
        aggregation: cfg.aggregation,
        init_std: cfg.init_std,
        keep_selection_log: false,
    }
}

/// Seeds for one rebuild; strategies share split, init and client order.
pub fn rebuild_seeds(rebuild_seed: u64, strategy: Strategy) -> TrainingSeeds {
    let selection = match strategy {
        Strategy::Random => stream::RANDOM_SELECTION,
        _ => stream::BANDIT,
    };
    TrainingSeeds {
        init: derive_seed(rebuild_seed, stream::INIT),
        clients: derive_seed(rebuild_seed, stream::CLIENTS),
        selection: derive_seed(rebuild_seed, selection),
    }
}

pub fn rebuild_split(cfg: &ExperimentConfig, data: &InteractionMatrix, rebuild: usize) -> Result<SplitDataset> {
    data::split(data, cfg.train_frac, derive_seed(cfg.rebuild_seed(rebuild), stream::SPLIT))
}

/// Runs every rebuild of one experiment on already loaded data.
pub fn run_experiment_on(cfg: &ExperimentConfig, data: &InteractionMatrix, mode: Execution) -> Result<ExperimentResult> {
    cfg.validate()?;
    if data.n_items() == 0 || data.n_users() == 0 {
        return Err(Error::Config("dataset is empty".into()));
    }
    let stats = data.stats();
    let m_s = cfg.payload_items(data.n_items());
    let theta = cfg.theta();
    if cfg.strategy != Strategy::Toplist && theta > data.n_users() {
        return Err(Error::Config(format!(
            "theta {theta} exceeds the {} available users",
            data.n_users()
        )));
    }
    let mut rebuilds = Vec::with_capacity(cfg.rebuilds);
    let mut traces = Vec::with_capacity(cfg.rebuilds);
    for r in 0..cfg.rebuilds {
        let seed = cfg.rebuild_seed(r);
        let split = rebuild_split(cfg, data, r)?;
        let best = eval::best_table(&split, derive_seed(seed, stream::BEST));
        let summary = match cfg.strategy.policy() {
            None => RebuildSummary {
                rebuild: r,
                seed,
                result: eval::toplist_metrics(&split, &best)?,
                download_bytes: 0,
                upload_bytes: 0,
            },
            Some(policy) => {
                let tc = training_config(cfg, policy, data.n_items());
                let trace = federation::run_training_with(
                    &tc,
                    &split,
                    &best,
                    rebuild_seeds(seed, cfg.strategy),
                    mode,
                    |_, rec| {
                        if rec.iteration % 100 == 0 {
                            log::info!(
                                "{} rebuild {r} iteration {}: precision {:.4}",
                                cfg.strategy.name(),
                                rec.iteration,
                                rec.windowed.normalized.precision
                            );
                        }
                    },
                )?;
                let last = trace.records.last().expect("at least one iteration");
                let summary = RebuildSummary {
                    rebuild: r,
                    seed,
                    result: last.windowed,
                    download_bytes: trace.ledger.total_download(),
                    upload_bytes: trace.ledger.total_upload(),
                };
                traces.push(trace.records);
                summary
            }
        };
        rebuilds.push(summary);
    }
    let normalized: Vec<Metrics> = rebuilds.iter().map(|r| r.result.normalized).collect();
    let raw: Vec<Metrics> = rebuilds.iter().map(|r| r.result.raw).collect();
    let (mean, sd) = mean_sd(&normalized);
    Ok(ExperimentResult {
        summary: ExperimentSummary {
            fingerprint: cfg.fingerprint(),
            config: cfg.clone(),
            stats,
            payload_items: m_s,
            theta,
            rebuilds,
            mean,
            sd,
            raw_mean: mean_sd(&raw).0,
        },
        traces,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig, mode: Execution) -> Result<ExperimentResult> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    run_experiment_on(cfg, &data, mode)
}

/// Writes `trace.csv` and `summary.json` into `dir`.
pub fn write_artifacts(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let s = &result.summary;
    let mut w = csv::Writer::from_path(dir.join(TRACE_FILE))?;
    for (rebuild, records) in s.rebuilds.iter().zip(&result.traces) {
        for rec in records {
            let [raw_precision, raw_recall, raw_f1, raw_map] = rec.metrics.raw.to_array();
            let [precision, recall, f1, map] = rec.metrics.normalized.to_array();
            let [window_precision, window_recall, window_f1, window_map] = rec.windowed.normalized.to_array();
            w.serialize(TraceRow {
                fingerprint: &s.fingerprint,
                seed: rebuild.seed,
                rebuild: rebuild.rebuild,
                strategy: s.strategy().name(),
                reduction: s.reduction(),
                iteration: rec.iteration,
                m_s: rec.m_s,
                clients: rec.clients,
                download_bytes: rec.download_bytes,
                upload_bytes: rec.upload_bytes,
                users: rec.metrics.users,
                raw_precision,
                raw_recall,
                raw_f1,
                raw_map,
                precision,
                recall,
                f1,
                map,
                window_precision,
                window_recall,
                window_f1,
                window_map,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io("writing trace", e))?;
    fs::write(dir.join(SUMMARY_FILE), s.to_json()?).map_err(|e| Error::io("writing summary", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub reduction: f64,
    pub payload_items: usize,
    pub mean: Metrics,
    pub sd: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub fingerprint: String,
    pub rows: Vec<SweepRow>,
    pub experiments: Vec<ExperimentSummary>,
}

#[derive(Debug, Serialize)]
struct SweepCsvRow {
    strategy: &'static str,
    reduction: f64,
    payload_items: usize,
    precision: f64,
    recall: f64,
    f1: f64,
    map: f64,
    precision_sd: f64,
    recall_sd: f64,
    f1_sd: f64,
    map_sd: f64,
}

/// The experiment configs a sweep runs, in emission order.
pub fn sweep_configs(base: &ExperimentConfig, reductions: &[f64]) -> Vec<ExperimentConfig> {
    let with = |strategy, reduction| ExperimentConfig {
        strategy,
        reduction,
        ..base.clone()
    };
    let mut out = vec![with(Strategy::Full, 0.0), with(Strategy::Toplist, 0.0)];
    for &r in reductions {
        out.push(with(Strategy::Bts, r));
        out.push(with(Strategy::Random, r));
    }
    out.sort_by(|a, b| {
        a.strategy
            .name()
            .cmp(b.strategy.name())
            .then(a.reduction.total_cmp(&b.reduction))
    });
    out
}

/// Runs bts and random at each reduction plus the full and popularity
/// references. Per-experiment artifacts go to `<out>/<strategy>-<reduction>/`.
pub fn run_sweep(base: &ExperimentConfig, reductions: &[f64], out: Option<&Path>, mode: Execution) -> Result<SweepSummary> {
    if reductions.is_empty() {
        return Err(Error::Config("sweep needs at least one reduction level".into()));
    }
    let configs = sweep_configs(base, reductions);
    for c in &configs {
        c.validate()?;
    }
    let data = load_dataset(base)?;
    let mut experiments = Vec::with_capacity(configs.len());
    for c in &configs {
        log::info!("sweep: {} at reduction {}", c.strategy.name(), c.reduction);
        let result = run_experiment_on(c, &data, mode)?;
        if let Some(dir) = out {
            write_artifacts(&result, &dir.join(format!("{}-{}", c.strategy.name(), c.reduction)))?;
        }
        experiments.push(result.summary);
    }
    let rows = experiments
        .iter()
        .map(|e| SweepRow {
            strategy: e.strategy(),
            reduction: e.reduction(),
            payload_items: e.payload_items,
            mean: e.mean,
            sd: e.sd,
        })
        .collect();
    let sweep = SweepSummary {
        fingerprint: base.fingerprint(),
        rows,
        experiments,
    };
    if let Some(dir) = out {
        write_sweep(&sweep, dir)?;
    }
    Ok(sweep)
}

fn write_sweep(sweep: &SweepSummary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let json = serde_json::to_string_pretty(sweep)? + "\n";
    fs::write(dir.join(SWEEP_FILE), json).map_err(|e| Error::io("writing sweep", e))?;
    let mut w = csv::Writer::from_path(dir.join(SWEEP_TABLE_FILE))?;
    for r in &sweep.rows {
        let [precision, recall, f1, map] = r.mean.to_array();
        let [precision_sd, recall_sd, f1_sd, map_sd] = r.sd.to_array();
        w.serialize(SweepCsvRow {
            strategy: r.strategy.name(),
            reduction: r.reduction,
            payload_items: r.payload_items,
            precision,
            recall,
            f1,
            map,
            precision_sd,
            recall_sd,
            f1_sd,
            map_sd,
        })?;
    }
    w.flush().map_err(|e| Error::io("writing sweep table", e))
}

/// Reads `summary.json`/`sweep.json` files, or directories holding them
/// (one level of sub-directories is searched).
pub fn collect_summaries(paths: &[PathBuf]) -> Result<Vec<ExperimentSummary>> {
    fn read_file(path: &Path, out: &mut Vec<ExperimentSummary>) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if path.file_name().is_some_and(|n| n == SWEEP_FILE) {
            let sweep: SweepSummary = serde_json::from_str(&text)?;
            out.extend(sweep.experiments);
        } else {
            out.push(serde_json::from_str(&text)?);
        }
        Ok(())
    }
    let mut out = Vec::new();
    for path in paths {
        if path.is_file() {
            read_file(path, &mut out)?;
            continue;
        }
        let own = path.join(SUMMARY_FILE);
        if own.is_file() {
            read_file(&own, &mut out)?;
        }
        let mut subdirs: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(format!("listing {}", path.display()), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(SUMMARY_FILE).is_file())
            .collect();
        subdirs.sort();
        for d in subdirs {
            read_file(&d.join(SUMMARY_FILE), &mut out)?;
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no experiment summaries found".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: Strategy,
    pub reduction: f64,
    pub mean: Metrics,
    pub sd: Metrics,
}

/// Side-by-side comparison of the four strategies at one reduction level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reduction: f64,
    pub rows: Vec<ComparisonRow>,
    /// Degradation of bts against the full payload.
    pub diff_vs_full: Option<PerMetric<Option<f64>>>,
    pub impr_vs_random: Option<PerMetric<Option<f64>>>,
    pub impr_vs_toplist: Option<PerMetric<Option<f64>>>,
    /// Strategies with no matching summary.
    pub missing: Vec<String>,
}

fn same_reduction(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

pub fn summarize(summaries: &[ExperimentSummary], reduction: f64) -> Comparison {
    let find = |s: Strategy| {
        summaries.iter().find(|e| {
            e.strategy() == s && (matches!(s, Strategy::Full | Strategy::Toplist) || same_reduction(e.reduction(), reduction))
        })
    };
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    let mut means = std::collections::BTreeMap::new();
    for s in [Strategy::Full, Strategy::Bts, Strategy::Random, Strategy::Toplist] {
        match find(s) {
            Some(e) => {
                means.insert(s, e.mean);
                rows.push(ComparisonRow {
                    strategy: s,
                    reduction: e.reduction(),
                    mean: e.mean,
                    sd: e.sd,
                });
            }
            None if matches!(s, Strategy::Bts | Strategy::Random) => {
                missing.push(format!("{} at reduction {reduction}", s.name()));
            }
            None => missing.push(s.name().to_string()),
        }
    }
    let versus = |other: Strategy| {
        let bts = means.get(&Strategy::Bts)?;
        let base = means.get(&other)?;
        Some(bts.zip_with(base, eval::relative_change_pct))
    };
    Comparison {
        reduction,
        diff_vs_full: versus(Strategy::Full),
        impr_vs_random: versus(Strategy::Random),
        impr_vs_toplist: versus(Strategy::Toplist),
        rows,
        missing,
    }
}

impl Comparison {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "reduction {:.0}%", self.reduction * 100.0);
        let _ = write!(out, "{:<16}", "");
        for name in PerMetric::<f64>::NAMES {
            let _ = write!(out, "{name:>20}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<16}", r.strategy.name());
            for (m, s) in r.mean.to_array().iter().zip(r.sd.to_array()) {
                let _ = write!(out, "{:>20}", format!("{m:.4} ± {s:.4}"));
            }
            out.push('\n');
        }
        for (label, row) in [
            ("diff% vs full", &self.diff_vs_full),
            ("impr% vs random", &self.impr_vs_random),
            ("impr% vs toplist", &self.impr_vs_toplist),
        ] {
            let Some(row) = row else { continue };
            let _ = write!(out, "{label:<16}");
            for v in row.to_array() {
                let cell = v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.2}"));
                let _ = write!(out, "{cell:>20}");
            }
            out.push('\n');
        }
        for m in &self.missing {
            let _ = writeln!(out, "missing: {m}");
        }
        out
    }
}

/// Stats of a prepared split alongside the published figures, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedData {
    pub dataset: DatasetKind,
    pub full: DatasetStats,
    pub train: DatasetStats,
    pub published: Option<DatasetStats>,
}

/// Loads the dataset, splits it with the first rebuild's seed and writes
/// the split files into `out`.
pub fn prepare_data(cfg: &ExperimentConfig, out: &Path) -> Result<PreparedData> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let split = rebuild_split(cfg, &data, 0)?;
    data::write_split(&split, out)?;
    let prepared = PreparedData {
        dataset: cfg.dataset,
        full: data.stats(),
        train: split.train_stats(),
        published: cfg.dataset.published_stats(),
    };
    if let Some(p) = prepared.published {
        let got = prepared.train;
        if (got.users, got.items, got.interactions) != (p.users, p.items, p.interactions)
            || (got.sparsity_pct - p.sparsity_pct).abs() > 0.01
        {
            log::warn!(
                "{}: got {} users, {} items, {} interactions, {:.2}% train sparsity; published {} / {} / {} / {:.2}%",
                cfg.dataset.name(),
                got.users,
                got.items,
                got.interactions,
                got.sparsity_pct,
                p.users,
                p.items,
                p.interactions,
                p.sparsity_pct
            );
        }
    }
    Ok(prepared)
}
