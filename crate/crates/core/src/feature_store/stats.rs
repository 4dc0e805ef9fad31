use std::collections::BTreeMap;

use serde::Serialize;

use super::records::{Dataset, ImageRecord, Split};
use super::vocab::EntityVocabulary;

/// Count per object category (`C_v`), length `K_o`.
pub fn cardinality_vector(record: &ImageRecord, vocab: &EntityVocabulary) -> Vec<f64> {
    let mut v = vec![0.0; vocab.k_o()];
    for d in &record.detections {
        v[d.category] += 1.0;
    }
    v
}

/// Highest detection confidence per category, 0 where undetected.
pub fn confidence_vector(record: &ImageRecord, vocab: &EntityVocabulary) -> Vec<f64> {
    let mut v = vec![0.0f64; vocab.k_o()];
    for d in &record.detections {
        v[d.category] = v[d.category].max(d.confidence);
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub distinct: usize,
    pub public: usize,
    pub private: usize,
    /// Share of this bin's images that are public / private (sums to 100).
    pub pct_public: f64,
    pub pct_private: f64,
    /// Share of all images falling in this bin.
    pub pct_of_images: f64,
}

/// Images per number of distinct detected categories, per class.
pub fn cooccurrence_histogram(ds: &Dataset, split: Option<Split>) -> Vec<HistogramBin> {
    let records: Vec<&ImageRecord> = ds.records.iter().filter(|r| split.is_none() || r.split == split).collect();
    let mut counts: BTreeMap<usize, [usize; 2]> = BTreeMap::new();
    for r in &records {
        counts.entry(r.distinct_categories()).or_insert([0, 0])[r.label as usize] += 1;
    }
    let total = records.len().max(1) as f64;
    counts
        .into_iter()
        .map(|(distinct, [public, private])| {
            let n = (public + private) as f64;
            HistogramBin {
                distinct,
                public,
                private,
                pct_public: 100.0 * public as f64 / n,
                pct_private: 100.0 * private as f64 / n,
                pct_of_images: 100.0 * n / total,
            }
        })
        .collect()
}

/// Percentage of images with at most one distinct category.
pub fn share_at_most_one(bins: &[HistogramBin]) -> f64 {
    bins.iter().filter(|b| b.distinct <= 1).map(|b| b.pct_of_images).sum()
}
