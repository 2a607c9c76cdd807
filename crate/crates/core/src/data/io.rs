//! Plain-text persistence: pair lists, split files and the stats manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{DatasetStats, InteractionMatrix, SplitDataset};

pub const SPLIT_FILE: &str = "split.tsv";
pub const USERS_FILE: &str = "users.tsv";
pub const ITEMS_FILE: &str = "items.tsv";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Serialize, Deserialize)]
struct PairRow {
    user: u32,
    item: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct FoldRow {
    user: u32,
    item: u32,
    fold: Fold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Fold {
    Train,
    Test,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    id: u32,
    label: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    users: usize,
    items: usize,
    interactions: usize,
    train_interactions: usize,
    test_interactions: usize,
    sparsity_pct: f64,
    train_sparsity_pct: f64,
    metric_exempt_users: usize,
}

fn tsv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new().delimiter(b'\t').from_path(path)?)
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().delimiter(b'\t').from_path(path)?)
}

/// Writes `user<TAB>item` rows of internal ids plus an `n_items` header comment.
pub fn write_pairs(m: &InteractionMatrix, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "# users={} items={}", m.n_users(), m.n_items()).map_err(|e| Error::io("writing pairs", e))?;
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
    for (user, item) in m.pairs() {
        w.serialize(PairRow { user, item })?;
    }
    w.flush().map_err(|e| Error::io("writing pairs", e))?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<InteractionMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let (header, body) = text.split_once('\n').unwrap_or((&text, ""));
    let dims: Vec<usize> = header
        .trim_start_matches('#')
        .split_whitespace()
        .filter_map(|kv| kv.split_once('=').and_then(|(_, v)| v.parse().ok()))
        .collect();
    let [n_users, n_items] = dims[..] else {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "missing '# users=N items=M' header".into(),
        });
    };
    let mut rows = vec![Vec::new(); n_users];
    let mut r = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(body.as_bytes());
    for rec in r.deserialize::<PairRow>() {
        let rec = rec?;
        let row = rows
            .get_mut(rec.user as usize)
            .ok_or_else(|| Error::invalid(format!("user {} out of range", rec.user)))?;
        row.push(rec.item);
    }
    InteractionMatrix::from_rows(rows, n_items)
}

/// Writes the split (`user, item, fold`), the external-id maps and the
/// stats manifest into `dir`.
pub fn write_split(split: &SplitDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut w = tsv_writer(&dir.join(SPLIT_FILE))?;
    for (fold, m) in [(Fold::Train, &split.train), (Fold::Test, &split.test)] {
        for (user, item) in m.pairs() {
            w.serialize(FoldRow { user, item, fold })?;
        }
    }
    w.flush().map_err(|e| Error::io("writing split", e))?;

    for (file, labels) in [
        (USERS_FILE, split.train.user_labels()),
        (ITEMS_FILE, split.train.item_labels()),
    ] {
        let mut w = tsv_writer(&dir.join(file))?;
        for (id, label) in labels.iter().enumerate() {
            w.serialize(LabelRow {
                id: id as u32,
                label: label.clone(),
            })?;
        }
        w.flush().map_err(|e| Error::io("writing labels", e))?;
    }

    let train = split.train.stats();
    let full = DatasetStats::from_counts(
        train.users,
        train.items,
        train.interactions + split.test.interaction_count(),
    );
    let manifest = Manifest {
        seed: split.seed,
        users: full.users,
        items: full.items,
        interactions: full.interactions,
        train_interactions: split.train.interaction_count(),
        test_interactions: split.test.interaction_count(),
        sparsity_pct: full.sparsity_pct,
        train_sparsity_pct: train.sparsity_pct,
        metric_exempt_users: (0..split.n_users()).filter(|&u| split.is_metric_exempt(u)).count(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(STATS_FILE), json + "\n").map_err(|e| Error::io("writing manifest", e))?;
    Ok(())
}

pub fn read_split(dir: &Path) -> Result<SplitDataset> {
    let manifest: Manifest = serde_json::from_str(
        &fs::read_to_string(dir.join(STATS_FILE)).map_err(|e| Error::io("reading manifest", e))?,
    )?;
    let read_labels = |file: &str| -> Result<Vec<String>> {
        let mut out = Vec::new();
        for rec in tsv_reader(&dir.join(file))?.deserialize::<LabelRow>() {
            out.push(rec?.label);
        }
        Ok(out)
    };
    let users = read_labels(USERS_FILE)?;
    let items = read_labels(ITEMS_FILE)?;
    let mut train = vec![Vec::new(); users.len()];
    let mut test = vec![Vec::new(); users.len()];
    for rec in tsv_reader(&dir.join(SPLIT_FILE))?.deserialize::<FoldRow>() {
        let rec = rec?;
        let rows = match rec.fold {
            Fold::Train => &mut train,
            Fold::Test => &mut test,
        };
        rows.get_mut(rec.user as usize)
            .ok_or_else(|| Error::invalid(format!("user {} out of range", rec.user)))?
            .push(rec.item);
    }
    Ok(SplitDataset {
        train: InteractionMatrix::with_labels(train, items.len(), users.clone(), items.clone())?,
        test: InteractionMatrix::with_labels(test, items.len(), users, items)?,
        seed: manifest.seed,
    })
}
