//! Turning records into model inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::*;
use crate::error::{invalid, Result};
use crate::feature_store::{cardinality_vector, confidence_vector, Dataset, ImageRecord, NormalizationStats};
use crate::numcore::Tensor2;

/// Initial node states of one image, `k` rows of width `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatureMatrix {
    pub k: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl NodeFeatureMatrix {
    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * self.d..(v + 1) * self.d]
    }
}

/// Object rows `[0, C_v]`, privacy rows `[1, s_j]`; without the flag the
/// leading type bit is dropped.
pub fn init_node_features_cardinality(record: &ImageRecord, k_o: usize, s: [f64; 2], flag: bool) -> NodeFeatureMatrix {
    let d = if flag { 2 } else { 1 };
    let mut data = vec![0.0; (k_o + 2) * d];
    for det in &record.detections {
        data[det.category * d + d - 1] += 1.0;
    }
    for j in 0..2 {
        let row = (k_o + j) * d;
        if flag {
            data[row] = 1.0;
        }
        data[row + d - 1] = s[j];
    }
    NodeFeatureMatrix { k: k_o + 2, d, data }
}

/// Object rows `[0, 1, feat]` (feat zero when undetected), privacy rows
/// `[1, 0, p_j]`; without the flag only the feature part remains.
pub fn init_node_features_deep(
    record: &ImageRecord,
    k_o: usize,
    privacy: [&[f64]; 2],
    d_obj: usize,
    flag: bool,
) -> Result<NodeFeatureMatrix> {
    let off = if flag { 2 } else { 0 };
    let d = off + d_obj;
    let mut data = vec![0.0; (k_o + 2) * d];
    let mut seen = vec![false; k_o];
    for det in &record.detections {
        seen[det.category] = true;
    }
    for (c, present) in seen.iter().enumerate() {
        if flag {
            data[c * d + 1] = 1.0;
        }
        if !present {
            continue;
        }
        let feat = record
            .deep_object_features
            .get(&c)
            .ok_or_else(|| invalid(format!("record {:?}: category {c} detected without a deep feature", record.id)))?;
        if feat.len() != d_obj {
            return Err(invalid(format!("record {:?}: deep feature width {} != {d_obj}", record.id, feat.len())));
        }
        let row = c * d;
        data[row + off..row + d].copy_from_slice(feat);
    }
    for (j, p) in privacy.iter().enumerate() {
        if p.len() != d_obj {
            return Err(invalid(format!("privacy feature width {} != {d_obj}", p.len())));
        }
        let row = (k_o + j) * d;
        if flag {
            data[row] = 1.0;
        }
        data[row + off..row + d].copy_from_slice(p);
    }
    Ok(NodeFeatureMatrix { k: k_o + 2, d, data })
}

/// Node-major flat vector (`K · F`) for the MLP family; privacy positions are 0.
pub fn flat_object_features(record: &ImageRecord, ds: &Dataset, features: ObjectFeatures) -> Vec<f64> {
    let k_o = ds.vocabulary.k_o();
    let card = cardinality_vector(record, &ds.vocabulary);
    let f = match features {
        ObjectFeatures::Cardinality => 1,
        ObjectFeatures::CardinalityConfidence => 2,
    };
    let mut out = vec![0.0; (k_o + 2) * f];
    for (c, v) in card.iter().enumerate() {
        out[c * f] = *v;
    }
    if f == 2 {
        for (c, v) in confidence_vector(record, &ds.vocabulary).iter().enumerate() {
            out[c * f + 1] = *v;
        }
    }
    out
}

/// Model-ready inputs for every record of a dataset.
#[derive(Clone, Debug)]
pub struct EncodedData {
    pub labels: Vec<usize>,
    /// MLP / GA-MLP / MLP-I input rows.
    pub flat: Vec<Vec<f64>>,
    pub scene: Vec<Vec<f64>>,
    /// GRM initial node states, `K · D` per record, privacy values filled
    /// in except for learned sources.
    pub nodes: Vec<Vec<f64>>,
    pub image: Vec<Vec<f64>>,
    pub norm: Option<NormalizationStats>,
}

impl EncodedData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn batch_tensor(rows: &[Vec<f64>], idx: &[usize]) -> Tensor2 {
    let cols = idx.first().map_or(0, |&i| rows[i].len());
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        data.extend_from_slice(&rows[i]);
    }
    Tensor2::from_vec(idx.len(), cols, data).expect("uniform row widths")
}

fn need<'a>(r: &'a ImageRecord, v: &'a Option<Vec<f64>>, what: &str, width: usize) -> Result<&'a [f64]> {
    let x = v.as_deref().ok_or_else(|| invalid(format!("record {:?} lacks {what}", r.id)))?;
    if x.len() != width {
        return Err(invalid(format!("record {:?}: {what} has width {}, expected {width}", r.id, x.len())));
    }
    Ok(x)
}

/// Encodes `ds` for `spec`. Normalisation uses `norm` when given, else is
/// fitted on `train` only; random privacy values are drawn once per image
/// in record order.
pub fn encode(
    spec: &ModelSpec,
    ds: &Dataset,
    norm: Option<&NormalizationStats>,
    train: &[usize],
    random_seed: u64,
) -> Result<EncodedData> {
    let k_o = ds.vocabulary.k_o();
    if k_o != spec.objects {
        return Err(invalid(format!("model expects {} object categories, vocabulary has {k_o}", spec.objects)));
    }
    let labels = ds.records.iter().map(|r| r.label as usize).collect();
    let mut enc =
        EncodedData { labels, flat: Vec::new(), scene: Vec::new(), nodes: Vec::new(), image: Vec::new(), norm: None };
    if spec.uses_s2p() {
        if ds.vocabulary.n_scenes() != spec.scenes {
            return Err(invalid(format!("model expects {} scenes, vocabulary has {}", spec.scenes, ds.vocabulary.n_scenes())));
        }
        enc.scene = ds
            .records
            .iter()
            .map(|r| need(r, &r.scene_logits, "scene_logits", spec.scenes).map(<[f64]>::to_vec))
            .collect::<Result<_>>()?;
    }
    match spec.kind {
        ModelKind::S2p => {}
        ModelKind::Mlp | ModelKind::Gamlp => {
            enc.flat = ds.records.iter().map(|r| flat_object_features(r, ds, spec.object_features)).collect();
            if spec.normalize {
                let stats = match norm {
                    Some(n) if n.mean.len() == spec.k() * spec.features_per_node() => n.clone(),
                    Some(_) => return Err(invalid("normalisation statistics do not match the feature width")),
                    None => {
                        let rows: Vec<Vec<f64>> = train.iter().map(|&i| enc.flat[i].clone()).collect();
                        NormalizationStats::fit(&rows)?
                    }
                };
                enc.flat = enc.flat.iter().map(|r| stats.apply(r)).collect();
                enc.norm = Some(stats);
            }
        }
        ModelKind::MlpImage => {
            enc.flat = ds
                .records
                .iter()
                .map(|r| need(r, &r.pixel_vector, "pixels", spec.input_dim).map(<[f64]>::to_vec))
                .collect::<Result<_>>()?;
        }
        ModelKind::Grm => {
            let mut rng = ChaCha8Rng::seed_from_u64(random_seed);
            let pw = spec.privacy_width();
            for r in &ds.records {
                let (p0, p1) = if spec.privacy == PrivacySource::Random {
                    let a: Vec<f64> = (0..pw).map(|_| rng.gen::<f64>()).collect();
                    let b: Vec<f64> = (0..pw).map(|_| rng.gen::<f64>()).collect();
                    (a, b)
                } else {
                    (vec![0.0; pw], vec![0.0; pw])
                };
                let m = match spec.scheme {
                    NodeScheme::Cardinality => init_node_features_cardinality(r, k_o, [p0[0], p1[0]], spec.flag),
                    NodeScheme::Deep => init_node_features_deep(r, k_o, [&p0, &p1], spec.d_obj, spec.flag)?,
                };
                enc.nodes.push(m.data);
            }
            if spec.privacy == PrivacySource::Image {
                enc.image = ds
                    .records
                    .iter()
                    .map(|r| need(r, &r.image_features, "image_features", spec.image_dim).map(<[f64]>::to_vec))
                    .collect::<Result<_>>()?;
            }
        }
    }
    Ok(enc)
}
