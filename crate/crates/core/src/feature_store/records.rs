use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::vocab::EntityVocabulary;
use crate::error::{invalid, Error, Result};

pub const SCHEMA: &str = "privgraph/1";
pub const DEFAULT_MAX_INSTANCES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(invalid(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub category: usize,
    pub confidence: f64,
    /// x, y, w, h in pixels.
    pub bbox: [f64; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    /// 0 = public, 1 = private.
    pub label: u8,
    pub detections: Vec<Detection>,
    pub scene_logits: Option<Vec<f64>>,
    /// One vector per detected category, taken from its last instance.
    pub deep_object_features: BTreeMap<usize, Vec<f64>>,
    pub pixel_vector: Option<Vec<f64>>,
    /// Image-level descriptor used to initialise privacy nodes.
    pub image_features: Option<Vec<f64>>,
    pub split: Option<Split>,
}

impl ImageRecord {
    pub fn new(id: &str, label: u8) -> Self {
        Self {
            id: id.to_string(),
            label,
            detections: Vec::new(),
            scene_logits: None,
            deep_object_features: BTreeMap::new(),
            pixel_vector: None,
            image_features: None,
            split: None,
        }
    }

    /// Distinct detected categories.
    pub fn distinct_categories(&self) -> usize {
        self.detections.iter().map(|d| d.category).collect::<HashSet<_>>().len()
    }

    pub fn count_of(&self, category: usize) -> usize {
        self.detections.iter().filter(|d| d.category == category).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub schema: String,
    pub vocab_hash: String,
    #[serde(default)]
    pub extractor: serde_json::Value,
}

impl Header {
    pub fn for_vocab(vocab: &EntityVocabulary) -> Self {
        Self {
            schema: SCHEMA.into(),
            vocab_hash: vocab.hash(),
            extractor: serde_json::json!({
                "max_instances": DEFAULT_MAX_INSTANCES,
                "confidence_floor": 0.6,
                "nms_threshold": 0.4,
            }),
        }
    }

    pub fn max_instances(&self) -> usize {
        self.extractor
            .get("max_instances")
            .and_then(serde_json::Value::as_u64)
            .map_or(DEFAULT_MAX_INSTANCES, |v| v as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub vocabulary: EntityVocabulary,
    pub records: Vec<ImageRecord>,
    pub header: Option<Header>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == Some(split)).collect()
    }

    pub fn subset(&self, split: Split) -> Vec<&ImageRecord> {
        self.records.iter().filter(|r| r.split == Some(split)).collect()
    }

    pub fn has_splits(&self) -> bool {
        self.records.iter().all(|r| r.split.is_some())
    }

    /// (public, private) counts per split.
    pub fn split_counts(&self) -> BTreeMap<Split, [usize; 2]> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            if let Some(s) = r.split {
                m.entry(s).or_insert([0, 0])[r.label as usize] += 1;
            }
        }
        m
    }

    /// Cross-record consistency: unique ids and uniform optional widths.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(invalid(format!("duplicate record id {:?}", r.id)));
            }
        }
        let widths = |f: &dyn Fn(&ImageRecord) -> Vec<usize>, what: &str| -> Result<()> {
            let all: HashSet<usize> = self.records.iter().flat_map(f).collect();
            if all.len() > 1 {
                return Err(invalid(format!("inconsistent {what} widths {all:?}")));
            }
            Ok(())
        };
        widths(&|r| r.deep_object_features.values().map(Vec::len).collect(), "deep feature")?;
        widths(&|r| r.pixel_vector.iter().map(Vec::len).collect(), "pixel vector")?;
        widths(&|r| r.image_features.iter().map(Vec::len).collect(), "image feature")?;
        Ok(())
    }

    pub fn deep_width(&self) -> Option<usize> {
        self.records.iter().flat_map(|r| r.deep_object_features.values()).map(Vec::len).next()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionLine {
    cat: i64,
    conf: f64,
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feat: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    label: i64,
    #[serde(default)]
    detections: Vec<DetectionLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scene_logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pixels: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn parse_record(text: &str, vocab: &EntityVocabulary, cap: usize) -> std::result::Result<ImageRecord, String> {
    let line: RecordLine = serde_json::from_str(text).map_err(|e| format!("schema violation: {e}"))?;
    if line.label != 0 && line.label != 1 {
        return Err(format!("schema violation: label {} outside {{0,1}}", line.label));
    }
    if line.detections.len() > cap {
        return Err(format!("detection cap exceeded: {} > {cap}", line.detections.len()));
    }
    let mut rec = ImageRecord::new(&line.id, line.label as u8);
    for (i, d) in line.detections.into_iter().enumerate() {
        if d.cat < 0 || d.cat as usize >= vocab.k_o() {
            return Err(format!("detection {i}: category {} outside [0,{})", d.cat, vocab.k_o()));
        }
        if !(0.0..=1.0).contains(&d.conf) {
            return Err(format!("detection {i}: confidence {} outside [0,1]", d.conf));
        }
        if !all_finite(&d.bbox) || d.bbox[2] <= 0.0 || d.bbox[3] <= 0.0 {
            return Err(format!("detection {i}: bbox needs finite values and positive size"));
        }
        let cat = d.cat as usize;
        if let Some(f) = d.feat {
            if !all_finite(&f) {
                return Err(format!("detection {i}: non-finite feature"));
            }
            rec.deep_object_features.insert(cat, f);
        }
        rec.detections.push(Detection { category: cat, confidence: d.conf, bbox: d.bbox });
    }
    if let Some(s) = &line.scene_logits {
        if s.len() != vocab.n_scenes() {
            return Err(format!("scene_logits has {} values, expected {}", s.len(), vocab.n_scenes()));
        }
    }
    for (name, v) in [("scene_logits", &line.scene_logits), ("pixels", &line.pixels), ("image_features", &line.image_features)] {
        if v.as_deref().is_some_and(|v| !all_finite(v)) {
            return Err(format!("{name} contains non-finite values"));
        }
    }
    rec.scene_logits = line.scene_logits;
    rec.pixel_vector = line.pixels;
    rec.image_features = line.image_features;
    rec.split = line.split;
    Ok(rec)
}

/// Loads a JSON-Lines feature file. An optional first line carrying
/// `"schema"` is the header; its vocab hash must match `vocab`.
pub fn load_dataset(path: &Path, vocab: &EntityVocabulary) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
    parse_dataset(&text, vocab, &name)
}

pub fn parse_dataset(text: &str, vocab: &EntityVocabulary, name: &str) -> Result<Dataset> {
    vocab.validate()?;
    let mut lines: Vec<(usize, &str)> =
        text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty()).collect();

    let mut header = None;
    if let Some(&(no, first)) = lines.first() {
        let v: serde_json::Value =
            serde_json::from_str(first).map_err(|e| Error::Schema { line: no, msg: format!("invalid JSON: {e}") })?;
        if v.get("schema").is_some() {
            let h: Header = serde_json::from_value(v)
                .map_err(|e| Error::Schema { line: no, msg: format!("bad header: {e}") })?;
            if h.schema != SCHEMA {
                return Err(Error::Schema { line: no, msg: format!("unsupported schema {:?}", h.schema) });
            }
            if h.vocab_hash != vocab.hash() {
                return Err(Error::Schema { line: no, msg: "vocab hash does not match the vocabulary".into() });
            }
            header = Some(h);
            lines.remove(0);
        }
    }
    let cap = header.as_ref().map_or(DEFAULT_MAX_INSTANCES, Header::max_instances);

    let parsed: Vec<std::result::Result<ImageRecord, (usize, String)>> = lines
        .par_iter()
        .map(|&(no, l)| parse_record(l, vocab, cap).map_err(|m| (no, m)))
        .collect();
    let mut records = Vec::with_capacity(parsed.len());
    for p in parsed {
        match p {
            Ok(r) => records.push(r),
            Err((line, msg)) => return Err(Error::Schema { line, msg }),
        }
    }
    let ds = Dataset { name: name.to_string(), vocabulary: vocab.clone(), records, header };
    ds.validate()?;
    Ok(ds)
}

fn record_line(r: &ImageRecord) -> RecordLine {
    let mut last: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, d) in r.detections.iter().enumerate() {
        last.insert(d.category, i);
    }
    RecordLine {
        id: r.id.clone(),
        label: r.label as i64,
        detections: r
            .detections
            .iter()
            .enumerate()
            .map(|(i, d)| DetectionLine {
                cat: d.category as i64,
                conf: d.confidence,
                bbox: d.bbox,
                feat: (last.get(&d.category) == Some(&i))
                    .then(|| r.deep_object_features.get(&d.category).cloned())
                    .flatten(),
            })
            .collect(),
        scene_logits: r.scene_logits.clone(),
        pixels: r.pixel_vector.clone(),
        image_features: r.image_features.clone(),
        split: r.split,
    }
}

/// Writes a header line followed by one line per record.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let header = ds.header.clone().unwrap_or_else(|| Header::for_vocab(&ds.vocabulary));
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = |s: String| writeln!(out, "{s}").map_err(|e| Error::io(path, e));
    write(serde_json::to_string(&header).expect("serialisable"))?;
    for r in &ds.records {
        write(serde_json::to_string(&record_line(r)).expect("serialisable"))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
