use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{train, RunRecord};
use crate::error::{invalid, Result};
use crate::feature_store::Dataset;
use crate::models::{ExperimentConfig, Predictor, Variant};
use crate::prior_graph::PriorGraph;

/// Mean and sample standard deviation (n − 1 denominator).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiRun {
    pub runs: Vec<RunRecord>,
    /// Test-split metrics, as fractions.
    pub summary: Vec<MetricSummary>,
}

pub fn summarise(runs: &[RunRecord]) -> Result<Vec<MetricSummary>> {
    let tests: Vec<_> = runs.iter().map(|r| r.test().ok_or_else(|| invalid("run has no test split"))).collect::<Result<_>>()?;
    let Some(first) = tests.first() else {
        return Ok(Vec::new());
    };
    Ok(first
        .scalars()
        .iter()
        .enumerate()
        .map(|(k, (name, _))| {
            let vals: Vec<f64> = tests.iter().map(|t| t.scalars()[k].1).collect();
            let (mean, std) = mean_std(&vals);
            MetricSummary { metric: name.to_string(), mean, std }
        })
        .collect())
}

/// One training run per seed; runs are independent and may execute in parallel.
pub fn multi_run(cfg: &ExperimentConfig, ds: &Dataset, graph: Option<&PriorGraph>, seeds: &[u64]) -> Result<MultiRun> {
    if seeds.len() < 2 {
        return Err(invalid("multi-run needs at least 2 runs"));
    }
    let runs: Vec<RunRecord> = seeds
        .par_iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.train.seed = seed;
            train(&c, ds, graph).map(|o| o.record)
        })
        .collect::<Result<_>>()?;
    let summary = summarise(&runs)?;
    Ok(MultiRun { runs, summary })
}

/// One run per variant, named after the variant, sharing `base`'s protocol.
pub fn grid_sweep(
    base: &ExperimentConfig,
    variants: &[Variant],
    ds: &Dataset,
    graph: Option<&PriorGraph>,
) -> Result<Vec<RunRecord>> {
    if variants.is_empty() {
        return Err(invalid("sweep axes must be non-empty"));
    }
    variants
        .par_iter()
        .map(|v| {
            let cfg = ExperimentConfig { preset: None, predictor: Predictor::Model(v.spec.clone()), train: base.train.clone() };
            let mut rec = train(&cfg, ds, graph)?.record;
            rec.name = v.name.clone();
            Ok(rec)
        })
        .collect()
}
