use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

pub const PRIVACY_NAMES: [&str; 2] = ["public", "private"];
pub const DEFAULT_SCENES: usize = 365;

pub const COCO_OBJECTS: [&str; 80] = [
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
    "traffic light", "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat", "dog",
    "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket", "bottle",
    "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch", "potted plant",
    "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote", "keyboard", "cell phone",
    "microwave", "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase", "scissors",
    "teddy bear", "hair drier", "toothbrush",
];

/// Object and scene names. Node indices `0..K_o` are objects, `K_o` is the
/// public node and `K_o + 1` the private node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityVocabulary {
    pub objects: Vec<String>,
    pub scenes: Vec<String>,
}

impl Default for EntityVocabulary {
    fn default() -> Self {
        Self::coco()
    }
}

impl EntityVocabulary {
    /// COCO objects and placeholder scene names `scene_000`..`scene_364`.
    pub fn coco() -> Self {
        Self {
            objects: COCO_OBJECTS.iter().map(|s| s.to_string()).collect(),
            scenes: (0..DEFAULT_SCENES).map(|i| format!("scene_{i:03}")).collect(),
        }
    }

    pub fn new(objects: Vec<String>, scenes: Vec<String>) -> Result<Self> {
        let v = Self { objects, scenes };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() || self.scenes.is_empty() {
            return Err(invalid("vocabulary needs at least one object and one scene"));
        }
        for (what, list) in [("object", &self.objects), ("scene", &self.scenes)] {
            let mut seen = HashSet::new();
            if let Some(dup) = list.iter().find(|n| !seen.insert(n.as_str())) {
                return Err(invalid(format!("duplicate {what} name {dup:?}")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Self = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        v.validate()?;
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serialisable");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn k_o(&self) -> usize {
        self.objects.len()
    }

    pub fn k(&self) -> usize {
        self.objects.len() + PRIVACY_NAMES.len()
    }

    pub fn n_scenes(&self) -> usize {
        self.scenes.len()
    }

    pub fn public_node(&self) -> usize {
        self.k_o()
    }

    pub fn private_node(&self) -> usize {
        self.k_o() + 1
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o == name)
    }

    /// Index of "person", falling back to 0.
    pub fn person(&self) -> usize {
        self.object_index("person").unwrap_or(0)
    }

    /// Hex SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("serialisable");
        hex::encode(Sha256::digest(canon.as_bytes()))
    }
}
