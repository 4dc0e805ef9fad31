//! Parameter inventory per model, counting and initialisation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::spec::*;
use crate::error::Result;
use crate::numcore::{xavier_uniform, ParameterStore, SlotKind, Tensor2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Init {
    Xavier,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamShape {
    pub name: String,
    pub component: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
    pub buffer: bool,
}

impl ParamShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Default)]
struct Inventory {
    shapes: Vec<ParamShape>,
}

impl Inventory {
    fn push(&mut self, component: &str, name: String, rows: usize, cols: usize, init: Init, buffer: bool) {
        self.shapes.push(ParamShape { name, component: component.to_string(), rows, cols, init, buffer });
    }

    fn linear(&mut self, component: &str, prefix: &str, fan_in: usize, fan_out: usize) {
        self.push(component, format!("{prefix}.w"), fan_in, fan_out, Init::Xavier, false);
        self.push(component, format!("{prefix}.b"), 1, fan_out, Init::Zeros, false);
    }

    fn batchnorm(&mut self, component: &str, prefix: &str, channels: usize) {
        self.push(component, format!("{prefix}.gamma"), 1, channels, Init::Ones, false);
        self.push(component, format!("{prefix}.beta"), 1, channels, Init::Zeros, false);
        self.push(component, format!("{prefix}.running_mean"), 1, channels, Init::Zeros, true);
        self.push(component, format!("{prefix}.running_var"), 1, channels, Init::Ones, true);
    }
}

/// Hidden widths of the scene-to-privacy head, input excluded.
pub fn s2p_widths(spec: &ModelSpec) -> Vec<usize> {
    let n = spec.scenes;
    match spec.s2p_head {
        S2pHead::Fc => vec![2],
        S2pHead::Mlp1 => vec![n / 2, 2],
        S2pHead::Mlp2 => vec![n / 2, n / 4, 2],
    }
}

pub fn mlp_image_widths(spec: &ModelSpec) -> Vec<usize> {
    let mut w: Vec<usize> = (1..=spec.halving_layers).map(|i| spec.input_dim >> i).collect();
    w.push(2);
    w
}

/// GA-MLP head widths after pooling: w → w/2 → w/4 → 2.
pub fn gamlp_head_widths(spec: &ModelSpec) -> [usize; 3] {
    [spec.width / 2, spec.width / 4, 2]
}

pub const GATES: [&str; 3] = ["z", "r", "c"];

pub fn param_shapes(spec: &ModelSpec) -> Vec<ParamShape> {
    let mut inv = Inventory::default();
    if spec.uses_s2p() {
        let mut fan_in = spec.scenes;
        for (i, w) in s2p_widths(spec).into_iter().enumerate() {
            inv.linear("s2p", &format!("s2p.l{i}"), fan_in, w);
            fan_in = w;
        }
    }
    match spec.kind {
        ModelKind::S2p => {}
        ModelKind::Mlp => {
            let mut fan_in = spec.k() * spec.features_per_node();
            for i in 0..spec.depth {
                let comp = format!("mlp.l{i}");
                inv.linear(&comp, &comp, fan_in, spec.width);
                if spec.batchnorm {
                    inv.batchnorm(&comp, &format!("mlp.bn{i}"), spec.width);
                }
                fan_in = spec.width;
            }
            inv.linear("mlp.out", "mlp.out", fan_in, 2);
        }
        ModelKind::MlpImage => {
            let mut fan_in = spec.input_dim;
            for (i, w) in mlp_image_widths(spec).into_iter().enumerate() {
                let comp = format!("mlpi.l{i}");
                inv.linear(&comp, &comp, fan_in, w);
                fan_in = w;
            }
        }
        ModelKind::Gamlp => {
            let mut fan_in = spec.features_per_node();
            if spec.transform > 0 {
                inv.linear("gamlp.trans", "gamlp.trans", fan_in, spec.transform);
                fan_in = spec.transform;
            }
            for i in 0..spec.depth {
                let comp = format!("gamlp.block{i}");
                inv.linear(&comp, &comp, fan_in, spec.width);
                fan_in = spec.width;
            }
            if spec.batchnorm {
                for i in 0..spec.depth {
                    let comp = format!("gamlp.bn{i}");
                    inv.batchnorm(&comp, &comp, spec.k());
                }
            }
            for (i, w) in gamlp_head_widths(spec).into_iter().enumerate() {
                inv.linear("gamlp.head", &format!("gamlp.head{i}"), fan_in, w);
                fan_in = w;
            }
        }
        ModelKind::Grm => {
            let h = spec.node_dim();
            let o = spec.output;
            if spec.privacy == PrivacySource::Image {
                inv.linear("align", "align", spec.image_dim, spec.d_obj);
            }
            for g in GATES {
                inv.linear("grm.ggnn", &format!("grm.gate_{g}.w"), 2 * h, h);
                inv.linear("grm.ggnn", &format!("grm.gate_{g}.u"), h, h);
            }
            inv.linear("grm.output", "grm.out", 2 * h, o);
            inv.linear("grm.attention", "grm.att.wi", h, o);
            inv.linear("grm.attention", "grm.att.wj", h, o);
            inv.linear("grm.attention", "grm.att.a", o, 1);
            let mut fan_in = spec.grm_out_len();
            if spec.reshape {
                inv.linear("reshape", "reshape", fan_in, spec.objects + 1);
                fan_in = spec.objects + 1;
            }
            let mid = spec.head_mid_width();
            inv.linear("classifier", "cls.fc1", fan_in, mid);
            inv.linear("classifier", "cls.fc2", mid, 1);
        }
    }
    inv.shapes
}

/// Parameters of a fixed feature extractor feeding the model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Backbone {
    pub name: &'static str,
    pub params: usize,
}

/// Scene recogniser (ResNet-50, 365-way head).
pub const SCENE_BACKBONE: Backbone = Backbone { name: "scene-resnet50", params: 24_255_917 };
/// Object-feature extractor (VGG-16 without its last classifier layer).
pub const OBJECT_BACKBONE: Backbone = Backbone { name: "object-vgg16", params: 134_260_544 };
/// Image-feature extractor (ResNet-101 without its classifier).
pub const IMAGE_BACKBONE: Backbone = Backbone { name: "image-resnet101", params: 42_500_160 };

pub fn fixed_backbones(spec: &ModelSpec) -> Vec<Backbone> {
    let mut out = Vec::new();
    if spec.uses_s2p() {
        out.push(SCENE_BACKBONE);
    }
    if spec.kind == ModelKind::Grm && spec.scheme == NodeScheme::Deep {
        out.push(OBJECT_BACKBONE);
        if spec.privacy == PrivacySource::Image {
            out.push(IMAGE_BACKBONE);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCount {
    /// (component, learnable parameters), in inventory order.
    pub components: Vec<(String, usize)>,
    /// Learnable parameters of the model itself.
    pub optimised: usize,
    /// Learnable parameters held fixed during the end-to-end stage.
    pub pretrained_frozen: usize,
    pub buffers: usize,
    pub backbones: Vec<Backbone>,
    /// Model plus fixed backbones.
    pub total: usize,
}

pub fn count_parameters(spec: &ModelSpec) -> ParamCount {
    let mut components: Vec<(String, usize)> = Vec::new();
    let (mut optimised, mut frozen, mut buffers) = (0, 0, 0);
    for s in param_shapes(spec) {
        if s.buffer {
            buffers += s.len();
            continue;
        }
        optimised += s.len();
        if spec.s2p_pretrained && s.component == "s2p" {
            frozen += s.len();
        }
        match components.iter_mut().find(|(c, _)| *c == s.component) {
            Some((_, n)) => *n += s.len(),
            None => components.push((s.component.clone(), s.len())),
        }
    }
    let backbones = fixed_backbones(spec);
    let total = optimised + backbones.iter().map(|b| b.params).sum::<usize>();
    ParamCount { components, optimised, pretrained_frozen: frozen, buffers, backbones, total }
}

impl ParamCount {
    pub fn component(&self, name: &str) -> usize {
        self.components.iter().filter(|(c, _)| c == name || c.starts_with(&format!("{name}."))).map(|(_, n)| n).sum()
    }
}

/// Fresh store: Xavier-uniform weights, zero biases, unit batchnorm scale.
pub fn init_store(spec: &ModelSpec, seed: u64) -> Result<ParameterStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    for s in param_shapes(spec) {
        let value = match s.init {
            Init::Xavier => xavier_uniform(s.rows, s.cols, &mut rng),
            Init::Zeros => Tensor2::zeros(s.rows, s.cols),
            Init::Ones => Tensor2::filled(s.rows, s.cols, 1.0),
        };
        let kind = if s.buffer {
            SlotKind::Buffer
        } else if spec.s2p_pretrained && s.component == "s2p" {
            SlotKind::Frozen
        } else {
            SlotKind::Trainable
        };
        store.insert(&s.name, value, kind)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::presets::preset;

    fn spec(name: &str) -> ModelSpec {
        match preset(name).unwrap() {
            Predictor::Model(m) => m,
            Predictor::Baseline(_) => unreachable!(),
        }
    }

    #[test]
    fn reported_counts() {
        let cases: &[(&str, usize)] = &[
            ("s2p", 732),
            ("s2p-mlp1", 66_978),
            ("s2p-mlp2", 83_449),
            ("mlp", 1_906),
            ("mlp-i", 99_104_258),
            ("gamlp-bn", 1_250),
            ("gamlp", 758),
            ("gpa", 14_175),
            ("gpa-no-flag", 14_134),
            ("gpa-no-reshape", 1_093),
            ("gpa-zeros", 361),
            ("gpa-random", 361),
            ("gip-zeros", 329_439_282),
            ("gip-no-type", 329_287_682),
        ];
        for &(name, want) in cases {
            assert_eq!(count_parameters(&spec(name)).optimised, want, "{name}");
        }
        let gpa = count_parameters(&spec("gpa"));
        assert_eq!(gpa.component("grm"), 73);
        assert_eq!(gpa.component("classifier"), 167);
        assert_eq!(gpa.component("reshape"), 13_203);
        assert_eq!(count_parameters(&spec("gpa-zeros")).component("grm"), 32);
        assert_eq!(count_parameters(&spec("mlp")).component("mlp.l0"), 1_328);
        assert_eq!(count_parameters(&spec("s2p")).total, 24_256_649);
        assert_eq!(count_parameters(&spec("gip-zeros")).total, 463_699_826);
        assert_eq!(count_parameters(&spec("gip-zeros")).component("grm"), 159_561_777);
        assert_eq!(count_parameters(&spec("gip-zeros")).component("classifier"), 169_877_505);
    }

    #[test]
    fn store_matches_inventory() {
        for name in ["gpa", "gpa-no-reshape", "gamlp-bn", "mlp-bn", "s2p-mlp2", "gpa-cooc-pretrained"] {
            let s = spec(name);
            let store = init_store(&s, 1).unwrap();
            let c = count_parameters(&s);
            assert_eq!(store.total_parameters(), c.optimised, "{name}");
            assert_eq!(store.count(SlotKind::Frozen), c.pretrained_frozen, "{name}");
            assert_eq!(store.count(SlotKind::Buffer), c.buffers, "{name}");
        }
    }
}
