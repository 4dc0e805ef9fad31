//! Declarative model configuration as flat `key = value` text.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::TrainConfig;

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

macro_rules! kv_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(cfg_err(format!(
                        "invalid value {s:?} for {} (expected one of: {})",
                        stringify!($name),
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

kv_enum!(ModelKind { S2p => "s2p", Mlp => "mlp", MlpImage => "mlp-image", Gamlp => "gamlp", Grm => "grm" });
kv_enum!(S2pHead { Fc => "fc", Mlp1 => "mlp1", Mlp2 => "mlp2" });
kv_enum!(ObjectFeatures { Cardinality => "card", CardinalityConfidence => "card+conf" });
kv_enum!(NodeScheme { Cardinality => "cardinality", Deep => "deep" });
kv_enum!(GraphChoice { Cooccurrence => "cooccurrence", Bipartite => "bipartite", None => "none" });
kv_enum!(PrivacySource { Scene => "scene", Image => "image", Zeros => "zeros", Random => "random" });
kv_enum!(BaselineKind {
    AllPrivate => "all_private",
    AllPublic => "all_public",
    Random => "random",
    Pcs2 => "pcs2",
    Pcs3 => "pcs3",
});

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Object categories K_o.
    pub objects: usize,
    pub scenes: usize,
    pub s2p_head: S2pHead,
    pub depth: usize,
    pub width: usize,
    pub batchnorm: bool,
    pub object_features: ObjectFeatures,
    pub normalize: bool,
    /// GA-MLP per-node input transform width (0 = off).
    pub transform: usize,
    pub input_dim: usize,
    pub halving_layers: usize,
    pub scheme: NodeScheme,
    pub graph: GraphChoice,
    pub privacy: PrivacySource,
    pub s2p_pretrained: bool,
    pub flag: bool,
    pub reshape: bool,
    pub output: usize,
    pub steps: usize,
    pub d_obj: usize,
    pub image_dim: usize,
    /// Classifier hidden width; 0 = 2 for cardinality features, D_obj for deep.
    pub head_mid: usize,
    pub dropout: f64,
    pub weighted_loss: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mlp,
            objects: 80,
            scenes: 365,
            s2p_head: S2pHead::Fc,
            depth: 3,
            width: 16,
            batchnorm: false,
            object_features: ObjectFeatures::Cardinality,
            normalize: false,
            transform: 0,
            input_dim: 12_288,
            halving_layers: 3,
            scheme: NodeScheme::Cardinality,
            graph: GraphChoice::Cooccurrence,
            privacy: PrivacySource::Scene,
            s2p_pretrained: false,
            flag: true,
            reshape: true,
            output: 2,
            steps: 3,
            d_obj: 4096,
            image_dim: 2048,
            head_mid: 0,
            dropout: 0.0,
            weighted_loss: false,
        }
    }
}

impl ModelSpec {
    pub fn k(&self) -> usize {
        self.objects + 2
    }

    /// Features per node for the flat (MLP / GA-MLP) inputs.
    pub fn features_per_node(&self) -> usize {
        match self.object_features {
            ObjectFeatures::Cardinality => 1,
            ObjectFeatures::CardinalityConfidence => 2,
        }
    }

    /// GRM node feature width D (also the GGNN hidden width).
    pub fn node_dim(&self) -> usize {
        let flag = if self.flag { 1 } else { 0 };
        match self.scheme {
            NodeScheme::Cardinality => flag + 1,
            NodeScheme::Deep => 2 * flag + self.d_obj,
        }
    }

    /// Column where privacy-node values start in a node feature row.
    pub fn privacy_col(&self) -> usize {
        match (self.scheme, self.flag) {
            (_, false) => 0,
            (NodeScheme::Cardinality, true) => 1,
            (NodeScheme::Deep, true) => 2,
        }
    }

    /// Width of the value written into each privacy node.
    pub fn privacy_width(&self) -> usize {
        match self.scheme {
            NodeScheme::Cardinality => 1,
            NodeScheme::Deep => self.d_obj,
        }
    }

    /// Length of each privacy-node vector leaving GRM: (1 + K_o)·D′.
    pub fn grm_out_len(&self) -> usize {
        (1 + self.objects) * self.output
    }

    pub fn head_mid_width(&self) -> usize {
        match (self.head_mid, self.scheme) {
            (0, NodeScheme::Cardinality) => 2,
            (0, NodeScheme::Deep) => self.d_obj,
            (m, _) => m,
        }
    }

    pub fn uses_graph(&self) -> bool {
        self.kind == ModelKind::Grm
    }

    pub fn uses_s2p(&self) -> bool {
        self.kind == ModelKind::S2p || (self.kind == ModelKind::Grm && self.privacy == PrivacySource::Scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects == 0 || self.scenes == 0 {
            return Err(cfg_err("objects and scenes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(cfg_err("dropout must lie in [0, 1)"));
        }
        match self.kind {
            ModelKind::Mlp if self.width == 0 => return Err(cfg_err("width must be positive")),
            ModelKind::Gamlp if self.width < 8 || self.depth == 0 => {
                return Err(cfg_err("gamlp needs depth >= 1 and width >= 8 for its halving head"))
            }
            ModelKind::MlpImage if self.input_dim >> self.halving_layers == 0 => {
                return Err(cfg_err("input_dim too small for the halving layers"))
            }
            ModelKind::Grm => {
                if self.output == 0 || self.steps == 0 {
                    return Err(cfg_err("grm needs output >= 1 and steps >= 1"));
                }
                if self.scheme == NodeScheme::Deep && self.privacy == PrivacySource::Scene {
                    return Err(cfg_err("deep node features take privacy=image, zeros or random"));
                }
                if self.scheme == NodeScheme::Cardinality && self.privacy == PrivacySource::Image {
                    return Err(cfg_err("cardinality node features take privacy=scene, zeros or random"));
                }
                if self.s2p_pretrained && self.privacy != PrivacySource::Scene {
                    return Err(cfg_err("s2p_pretrained requires privacy=scene"));
                }
                if self.scheme == NodeScheme::Deep && self.d_obj == 0 {
                    return Err(cfg_err("d_obj must be positive"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("model", self.kind.to_string()),
            ("objects", self.objects.to_string()),
            ("scenes", self.scenes.to_string()),
            ("s2p_head", self.s2p_head.to_string()),
            ("depth", self.depth.to_string()),
            ("width", self.width.to_string()),
            ("batchnorm", self.batchnorm.to_string()),
            ("object_features", self.object_features.to_string()),
            ("normalize", self.normalize.to_string()),
            ("transform", self.transform.to_string()),
            ("input_dim", self.input_dim.to_string()),
            ("halving_layers", self.halving_layers.to_string()),
            ("scheme", self.scheme.to_string()),
            ("graph", self.graph.to_string()),
            ("privacy", self.privacy.to_string()),
            ("s2p_pretrained", self.s2p_pretrained.to_string()),
            ("flag", self.flag.to_string()),
            ("reshape", self.reshape.to_string()),
            ("output", self.output.to_string()),
            ("steps", self.steps.to_string()),
            ("d_obj", self.d_obj.to_string()),
            ("image_dim", self.image_dim.to_string()),
            ("head_mid", self.head_mid.to_string()),
            ("dropout", fmt_f64(self.dropout)),
            ("weighted_loss", self.weighted_loss.to_string()),
        ]
    }

    /// Sets one key; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "model" => self.kind = value.parse()?,
            "objects" => self.objects = parse(key, value)?,
            "scenes" => self.scenes = parse(key, value)?,
            "s2p_head" => self.s2p_head = value.parse()?,
            "depth" => self.depth = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "batchnorm" => self.batchnorm = parse(key, value)?,
            "object_features" => self.object_features = value.parse()?,
            "normalize" => self.normalize = parse(key, value)?,
            "transform" => self.transform = parse(key, value)?,
            "input_dim" => self.input_dim = parse(key, value)?,
            "halving_layers" => self.halving_layers = parse(key, value)?,
            "scheme" => self.scheme = value.parse()?,
            "graph" => self.graph = value.parse()?,
            "privacy" => self.privacy = value.parse()?,
            "s2p_pretrained" => self.s2p_pretrained = parse(key, value)?,
            "flag" => self.flag = parse(key, value)?,
            "reshape" => self.reshape = parse(key, value)?,
            "output" => self.output = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "d_obj" => self.d_obj = parse(key, value)?,
            "image_dim" => self.image_dim = parse(key, value)?,
            "head_mid" => self.head_mid = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "weighted_loss" => self.weighted_loss = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| cfg_err(format!("invalid value {value:?} for {key}")))
}

fn train_kv(t: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("lr", fmt_f64(t.lr0)),
        ("lr_min", fmt_f64(t.lr_min)),
        ("lr_factor", fmt_f64(t.lr_factor)),
        ("patience", t.patience.to_string()),
        ("max_epochs", t.max_epochs.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("budget_secs", fmt_f64(t.budget_secs)),
        ("seed", t.seed.to_string()),
        ("weight_decay", fmt_f64(t.weight_decay)),
    ]
}

fn set_train(t: &mut TrainConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "lr" => t.lr0 = parse(key, value)?,
        "lr_min" => t.lr_min = parse(key, value)?,
        "lr_factor" => t.lr_factor = parse(key, value)?,
        "patience" => t.patience = parse(key, value)?,
        "max_epochs" => t.max_epochs = parse(key, value)?,
        "batch_size" => t.batch_size = parse(key, value)?,
        "budget_secs" => t.budget_secs = parse(key, value)?,
        "seed" => t.seed = parse(key, value)?,
        "weight_decay" => t.weight_decay = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Predictor {
    Model(ModelSpec),
    Baseline(BaselineKind),
}

/// A complete experiment: predictor plus optimisation protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub predictor: Predictor,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_preset(name: &str) -> Result<Self> {
        let predictor = super::presets::preset(name)?;
        Ok(Self { preset: Some(name.to_string()), predictor, train: TrainConfig::default() })
    }

    pub fn model(&self) -> Option<&ModelSpec> {
        match &self.predictor {
            Predictor::Model(m) => Some(m),
            Predictor::Baseline(_) => None,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        if key == "preset" {
            let train = self.train.clone();
            *self = Self::from_preset(value)?;
            self.train = train;
            return Ok(());
        }
        if set_train(&mut self.train, key, value)? {
            return Ok(());
        }
        match &mut self.predictor {
            Predictor::Model(m) => {
                if m.set(key, value)? {
                    return Ok(());
                }
            }
            Predictor::Baseline(b) => {
                if key == "baseline" {
                    *b = value.parse()?;
                    return Ok(());
                }
            }
        }
        Err(cfg_err(format!("unknown config key {key:?}")))
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected key = value", no + 1)))?;
            self.set(k, v).map_err(|e| cfg_err(format!("line {}: {}", no + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self { preset: None, predictor: Predictor::Model(ModelSpec::default()), train: TrainConfig::default() };
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Predictor::Model(m) = &self.predictor {
            m.validate()?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        let mut kv = Vec::new();
        if let Some(p) = &self.preset {
            kv.push(("preset", p.clone()));
        }
        match &self.predictor {
            Predictor::Model(m) => kv.extend(m.to_kv()),
            Predictor::Baseline(b) => kv.push(("baseline", b.to_string())),
        }
        kv.extend(train_kv(&self.train));
        kv
    }

    /// Canonical text form; parsing it reproduces the config.
    pub fn to_text(&self) -> String {
        self.to_kv().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::from_preset("gpa").unwrap();
        c.set("seed", "7").unwrap();
        c.set("dropout", "0.25").unwrap();
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn unknown_key_is_error() {
        let mut c = ExperimentConfig::from_preset("mlp").unwrap();
        assert!(matches!(c.set("widht", "3"), Err(Error::Config(_))));
        assert!(c.apply_text("depth = x").is_err());
        let mut b = ExperimentConfig::from_preset("pcs2").unwrap();
        assert!(b.set("width", "3").is_err());
        b.set("baseline", "pcs3").unwrap();
        assert_eq!(b.predictor, Predictor::Baseline(BaselineKind::Pcs3));
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = ExperimentConfig::parse("# header\npreset = s2p  # inline\n\nmax_epochs = 5\n").unwrap();
        assert_eq!(c.train.max_epochs, 5);
        assert_eq!(c.model().unwrap().kind, ModelKind::S2p);
    }

    #[test]
    fn invalid_combinations() {
        let mut c = ExperimentConfig::from_preset("gip-zeros").unwrap();
        c.set("privacy", "scene").unwrap();
        assert!(c.validate().is_err());
    }
}
