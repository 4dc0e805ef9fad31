use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::records::{Dataset, Split};
use crate::error::{invalid, Error, Result};

/// Fold index per record. Each class is shuffled with `seed` and dealt
/// round-robin, continuing from where the previous class stopped, so fold
/// sizes differ by at most one overall and per class. A class with fewer
/// than `k` members simply leaves some folds without it.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(invalid(format!("k must be at least 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0usize; labels.len()];
    let mut next = 0usize;
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            return Err(invalid(format!("class {class} has no members; stratification needs both classes")));
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = next % k;
            next += 1;
        }
    }
    Ok(folds)
}

/// Fold `f` is test, fold `(f + 1) % k` is validation, the rest train.
pub fn fold_to_split(fold: usize, fold_index: usize, k: usize) -> Split {
    if fold == fold_index {
        Split::Test
    } else if fold == (fold_index + 1) % k {
        Split::Val
    } else {
        Split::Train
    }
}

pub fn assign_kfold(ds: &mut Dataset, k: usize, fold_index: usize, seed: u64) -> Result<()> {
    if fold_index >= k {
        return Err(invalid(format!("fold index {fold_index} out of range for k={k}")));
    }
    let folds = stratified_kfold(&ds.labels(), k, seed)?;
    for (r, f) in ds.records.iter_mut().zip(folds) {
        r.split = Some(fold_to_split(f, fold_index, k));
    }
    Ok(())
}

pub fn write_split_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::Runtime(format!("{}: {e}", path.display()));
    w.write_record(["id", "split"]).map_err(csv_err)?;
    for r in &ds.records {
        let s = r.split.ok_or_else(|| invalid(format!("record {:?} has no split", r.id)))?;
        w.write_record([r.id.as_str(), s.as_str()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `id,split` rows; every record must be covered exactly once.
pub fn apply_split_csv(path: &Path, ds: &mut Dataset) -> Result<()> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        k => invalid(format!("{}: {k:?}", path.display())),
    })?;
    let headers = rdr.headers().map_err(|e| invalid(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "split"] {
        return Err(invalid(format!("{}: expected header id,split", path.display())));
    }
    let mut map = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Schema { line: i + 2, msg: e.to_string() })?;
        let split: Split = row[1].parse().map_err(|e: Error| Error::Schema { line: i + 2, msg: e.to_string() })?;
        if map.insert(row[0].to_string(), split).is_some() {
            return Err(Error::Schema { line: i + 2, msg: format!("duplicate id {:?}", &row[0]) });
        }
    }
    if map.len() != ds.records.len() {
        return Err(invalid(format!("split file covers {} ids, dataset has {}", map.len(), ds.records.len())));
    }
    for r in &mut ds.records {
        r.split = Some(*map.get(&r.id).ok_or_else(|| invalid(format!("no split for record {:?}", r.id)))?);
    }
    Ok(())
}
