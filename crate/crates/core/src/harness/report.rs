use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{pct, MetricsReport};
use super::runs::MetricSummary;
use super::train::RunRecord;
use crate::error::{Error, Result};
use crate::feature_store::HistogramBin;
use crate::models::{ModelKind, NodeScheme, ObjectFeatures, Predictor, PrivacySource};

pub const RUNS_CSV_HEADER: &str = "name,config_hash,seed,p_private,r_private,f1_private,p_public,r_public,f1_public,precision,ba,acc,params_optimised,params_total";

/// One CSV line per run, test-split metrics as percentages.
pub fn runs_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{RUNS_CSV_HEADER}\n");
    for r in records {
        let metrics: Vec<String> = match r.test() {
            Some(t) => t.scalars().iter().map(|(_, v)| pct(*v)).collect(),
            None => vec![String::new(); 9],
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            csv_field(&r.name),
            r.config_hash,
            r.seed,
            metrics.join(","),
            r.params_optimised,
            r.params_total
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn summary_csv(summary: &[MetricSummary]) -> String {
    let mut out = String::from("metric,mean,std\n");
    for m in summary {
        let _ = writeln!(out, "{},{},{}", m.metric, pct(m.mean), pct(m.std));
    }
    out
}

/// Which inputs a method consumes: card, conf, deep objects, scene logits, image.
pub fn input_marks(p: &Predictor) -> [bool; 5] {
    match p {
        Predictor::Baseline(b) => {
            let person = matches!(b, crate::models::BaselineKind::Pcs2 | crate::models::BaselineKind::Pcs3);
            [person, false, false, false, false]
        }
        Predictor::Model(m) => {
            let conf = m.object_features == ObjectFeatures::CardinalityConfidence;
            match m.kind {
                ModelKind::S2p => [false, false, false, true, false],
                ModelKind::Mlp | ModelKind::Gamlp => [true, conf, false, false, false],
                ModelKind::MlpImage => [false, false, false, false, true],
                ModelKind::Grm => [
                    m.scheme == NodeScheme::Cardinality,
                    false,
                    m.scheme == NodeScheme::Deep,
                    m.privacy == PrivacySource::Scene,
                    m.privacy == PrivacySource::Image,
                ],
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub inputs: [bool; 5],
    pub metrics: MetricsReport,
    pub params: Option<usize>,
}

const TABLE_HEAD: [&str; 15] = [
    "Method", "Card", "Conf", "Deep", "Scene logits", "Image", "Private P", "Private R", "Private F1", "Public P",
    "Public R", "Public F1", "Overall P", "BA", "ACC",
];

fn table_cells(r: &ComparisonRow) -> Vec<String> {
    let mut cells = vec![r.method.clone()];
    cells.extend(r.inputs.iter().map(|&b| if b { "x" } else { "-" }.to_string()));
    let m = &r.metrics;
    for c in [&m.private, &m.public] {
        cells.extend([pct(c.precision), pct(c.recall), pct(c.f1)]);
    }
    cells.extend([pct(m.precision), pct(m.balanced_accuracy), pct(m.accuracy)]);
    cells
}

/// Comparative results as a Markdown table, one method per row.
pub fn comparison_markdown(rows: &[ComparisonRow]) -> String {
    let mut out = format!("| {} |\n", TABLE_HEAD.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(TABLE_HEAD.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", table_cells(r).join(" | "));
    }
    out
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let head: Vec<String> = TABLE_HEAD.iter().map(|h| h.to_lowercase().replace(' ', "_")).collect();
    let mut out = format!("{}\n", head.join(","));
    for r in rows {
        let cells: Vec<String> = table_cells(r).iter().map(|c| csv_field(c)).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

/// Private-class recall against balanced accuracy, per method.
pub fn recall_vs_ba_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("label,rec_priv,ba\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", csv_field(&r.method), pct(r.metrics.private.recall), pct(r.metrics.balanced_accuracy));
    }
    out
}

/// Optimised parameter count (and its log10) against balanced accuracy.
pub fn params_vs_ba_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("label,size,log10_size,ba\n");
    for r in rows {
        if let Some(p) = r.params {
            let _ = writeln!(
                out,
                "{},{},{:.4},{}",
                csv_field(&r.method),
                p,
                (p.max(1) as f64).log10(),
                pct(r.metrics.balanced_accuracy)
            );
        }
    }
    out
}

/// Images per number of distinct categories, split by class.
pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("n_objs,public,private,pct_public,pct_private,pct_of_images\n");
    for b in bins {
        let _ = writeln!(
            out,
            "{},{},{},{:.2},{:.2},{:.2}",
            b.distinct, b.public, b.private, b.pct_public, b.pct_private, b.pct_of_images
        );
    }
    out
}

/// Everything needed to re-derive a run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub config: String,
    pub config_hash: String,
    pub seed: u64,
    /// Input file path → SHA-256.
    pub inputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &str, cfg: &crate::models::ExperimentConfig) -> Self {
        Self::from_text(command, &cfg.to_text(), cfg.train.seed)
    }

    /// For commands whose settings are not an experiment config.
    pub fn from_text(command: &str, config: &str, seed: u64) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.to_string(),
            config_hash: hex::encode(Sha256::digest(config.as_bytes())),
            seed,
            inputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serialisable");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows_render_percentages() {
        let m = MetricsReport::from_confusion([[0, 2], [0, 1]]).unwrap();
        let row = ComparisonRow { method: "All private".into(), inputs: [false; 5], metrics: m, params: None };
        let md = comparison_markdown(&[row.clone()]);
        assert!(md.contains("| All private | - | - | - | - | - | 33.33 | 100.00 | 50.00 | 0.00 | 0.00 | 0.00 | 16.67 | 50.00 | 33.33 |"), "{md}");
        assert_eq!(comparison_csv(&[row]).lines().count(), 2);
    }
}
