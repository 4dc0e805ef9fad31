//! Synthetic datasets with a planted privacy rule:
//! private ⇔ count(object 0) ≥ 2 ∨ argmax scene logit lies in block A.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{Dataset, Detection, EntityVocabulary, Header, ImageRecord, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    /// Private images carry both cues, so either one suffices.
    Both,
    /// Object counts carry no label information.
    SceneOnly,
    /// Scene logits carry no label information.
    CardinalityOnly,
}

impl FromStr for SynthMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Self::Both),
            "scene_only" => Ok(Self::SceneOnly),
            "cardinality_only" => Ok(Self::CardinalityOnly),
            _ => Err(Error::Config(format!("unknown synthetic mode {s:?} (both, scene_only, cardinality_only)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub private_fraction: f64,
    pub noise: f64,
    pub mode: SynthMode,
    pub seed: u64,
    /// Width of per-category deep features (0 = none).
    pub deep_dim: usize,
    /// Width of image-level features (0 = none).
    pub image_dim: usize,
    /// Width of the flattened pixel vector (0 = none).
    pub pixel_dim: usize,
    /// Offset added to every logit of the dominant scene block.
    pub scene_offset: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 600,
            n_val: 200,
            n_test: 200,
            private_fraction: 0.5,
            noise: 0.05,
            mode: SynthMode::Both,
            seed: 789,
            deep_dim: 0,
            image_dim: 0,
            pixel_dim: 0,
            scene_offset: 3.0,
        }
    }
}

/// Label-independent objects (categories `1..=DISTRACTORS`), each present
/// once with probability `DISTRACTOR_RATE`.
pub const DISTRACTORS: usize = 10;
pub const DISTRACTOR_RATE: f64 = 0.3;

/// Scenes `0..block_a_len` form block A.
pub fn block_a_len(n_scenes: usize) -> usize {
    n_scenes.div_ceil(2)
}

/// The planted rule on generated features.
pub fn planted_rule(record: &ImageRecord, n_scenes: usize) -> u8 {
    let count = record.count_of(0) >= 2;
    let scene = record.scene_logits.as_ref().is_some_and(|s| {
        let arg = s
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0;
        arg < block_a_len(n_scenes)
    });
    u8::from(count || scene)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate(cfg: &SynthConfig, vocab: &EntityVocabulary) -> Result<Dataset> {
    if vocab.k_o() < 2 || vocab.n_scenes() < 2 {
        return Err(Error::Validation("synthetic data needs at least 2 objects and 2 scenes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k_o = vocab.k_o();
    let n_scenes = vocab.n_scenes();
    let a_len = block_a_len(n_scenes);
    let prototypes: Vec<Vec<f64>> =
        (0..k_o).map(|_| (0..cfg.deep_dim).map(|_| normal(&mut rng)).collect()).collect();
    let n = cfg.n_train + cfg.n_val + cfg.n_test;
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let target_private = rng.gen_bool(cfg.private_fraction);
        // Which cues fire for a private target.
        let (count_cue, scene_cue) = match (cfg.mode, target_private) {
            (_, false) => (false, false),
            (SynthMode::SceneOnly, true) => (false, true),
            (SynthMode::CardinalityOnly, true) => (true, false),
            (SynthMode::Both, true) => (true, true),
        };
        let persons = if count_cue { rng.gen_range(2..=4) } else { rng.gen_range(0..=1) };
        let mut r = ImageRecord::new(&format!("synth-{i:05}"), 0);
        let conf = |rng: &mut ChaCha8Rng| rng.gen_range(0.6..1.0);
        for _ in 0..persons {
            let c = conf(&mut rng);
            r.detections.push(Detection { category: 0, confidence: c, bbox: [10.0, 10.0, 50.0, 100.0] });
        }
        for category in 1..k_o.min(DISTRACTORS + 1) {
            if rng.gen_bool(DISTRACTOR_RATE) {
                let c = conf(&mut rng);
                r.detections.push(Detection { category, confidence: c, bbox: [0.0, 0.0, 20.0, 20.0] });
            }
        }
        let dominant_a = scene_cue;
        let mut scene: Vec<f64> = (0..n_scenes).map(|_| normal(&mut rng)).collect();
        let range = if dominant_a { 0..a_len } else { a_len..n_scenes };
        for s in &mut scene[range] {
            *s += cfg.scene_offset;
        }
        r.scene_logits = Some(scene);
        if cfg.deep_dim > 0 {
            for d in &r.detections {
                let feat = prototypes[d.category].iter().map(|p| p + 0.1 * normal(&mut rng)).collect();
                r.deep_object_features.insert(d.category, feat);
            }
        }
        let cue = if target_private { 1.0 } else { -1.0 };
        if cfg.image_dim > 0 {
            let mut f: Vec<f64> = (0..cfg.image_dim).map(|_| normal(&mut rng)).collect();
            f[0] += 2.0 * cue;
            r.image_features = Some(f);
        }
        if cfg.pixel_dim > 0 {
            r.pixel_vector = Some((0..cfg.pixel_dim).map(|_| rng.gen_range(0.0..1.0) + 0.05 * cue).collect());
        }
        let mut label = planted_rule(&r, n_scenes);
        if rng.gen_bool(cfg.noise) {
            label = 1 - label;
        }
        r.label = label;
        r.split = Some(if i < cfg.n_train {
            Split::Train
        } else if i < cfg.n_train + cfg.n_val {
            Split::Val
        } else {
            Split::Test
        });
        records.push(r);
    }
    let ds = Dataset {
        name: format!("synthetic-{:?}-{}", cfg.mode, cfg.seed).to_lowercase(),
        vocabulary: vocab.clone(),
        records,
        header: Some(Header::for_vocab(vocab)),
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_and_noise_rate() {
        let vocab = EntityVocabulary::coco();
        let cfg = SynthConfig { noise: 0.0, ..SynthConfig::default() };
        let ds = generate(&cfg, &vocab).unwrap();
        assert_eq!(ds.records.len(), 1000);
        let private = ds.records.iter().filter(|r| r.label == 1).count();
        assert!((420..580).contains(&private), "{private}");
        let noisy = generate(&SynthConfig::default(), &vocab).unwrap();
        let flipped = ds.records.iter().zip(&noisy.records).filter(|(a, b)| a.label != b.label).count();
        assert!(flipped > 20 && flipped < 90, "{flipped}");
    }

    #[test]
    fn scene_only_has_no_count_cue() {
        let vocab = EntityVocabulary::coco();
        let cfg = SynthConfig { mode: SynthMode::SceneOnly, ..SynthConfig::default() };
        let ds = generate(&cfg, &vocab).unwrap();
        assert!(ds.records.iter().all(|r| r.count_of(0) <= 1));
        assert_eq!(ds, generate(&cfg, &vocab).unwrap());
    }
}
