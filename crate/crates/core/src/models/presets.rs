//! Named configurations for every compared method.

use super::spec::*;
use crate::error::{Error, Result};

pub const PRESETS: &[&str] = &[
    "s2p",
    "s2p-mlp1",
    "s2p-mlp2",
    "mlp",
    "mlp-bn",
    "mlp-i",
    "gamlp",
    "gamlp-bn",
    "gpa",
    "gpa-original",
    "gpa-cooc-pretrained",
    "gpa-bipartite",
    "gpa-no-flag",
    "gpa-no-reshape",
    "gpa-no-reshape-train",
    "gpa-random",
    "gpa-zeros",
    "gpa-no-graph",
    "gip-fixed",
    "gip-zeros",
    "gip-no-type",
    "pcs2",
    "pcs3",
    "all-public",
    "all-private",
    "random",
];

fn gpa() -> ModelSpec {
    ModelSpec {
        kind: ModelKind::Grm,
        scheme: NodeScheme::Cardinality,
        graph: GraphChoice::Cooccurrence,
        privacy: PrivacySource::Scene,
        s2p_pretrained: false,
        flag: true,
        reshape: true,
        output: 2,
        steps: 3,
        ..ModelSpec::default()
    }
}

fn gip() -> ModelSpec {
    ModelSpec {
        kind: ModelKind::Grm,
        scheme: NodeScheme::Deep,
        graph: GraphChoice::Bipartite,
        privacy: PrivacySource::Zeros,
        flag: true,
        reshape: false,
        output: 512,
        d_obj: 4096,
        image_dim: 2048,
        ..ModelSpec::default()
    }
}

pub fn preset(name: &str) -> Result<Predictor> {
    let m = |spec: ModelSpec| Ok(Predictor::Model(spec));
    let b = |kind: BaselineKind| Ok(Predictor::Baseline(kind));
    match name {
        "s2p" => m(ModelSpec { kind: ModelKind::S2p, s2p_head: S2pHead::Fc, ..ModelSpec::default() }),
        "s2p-mlp1" => m(ModelSpec { kind: ModelKind::S2p, s2p_head: S2pHead::Mlp1, ..ModelSpec::default() }),
        "s2p-mlp2" => m(ModelSpec { kind: ModelKind::S2p, s2p_head: S2pHead::Mlp2, ..ModelSpec::default() }),
        "mlp" => m(ModelSpec { kind: ModelKind::Mlp, depth: 3, width: 16, normalize: true, ..ModelSpec::default() }),
        "mlp-bn" => m(ModelSpec {
            kind: ModelKind::Mlp,
            depth: 3,
            width: 16,
            normalize: true,
            batchnorm: true,
            ..ModelSpec::default()
        }),
        "mlp-i" => m(ModelSpec { kind: ModelKind::MlpImage, input_dim: 12_288, halving_layers: 3, ..ModelSpec::default() }),
        "gamlp" => m(ModelSpec { kind: ModelKind::Gamlp, depth: 3, width: 16, ..ModelSpec::default() }),
        "gamlp-bn" => m(ModelSpec { kind: ModelKind::Gamlp, depth: 3, width: 16, batchnorm: true, ..ModelSpec::default() }),
        "gpa" | "gpa-original" => m(gpa()),
        "gpa-cooc-pretrained" => m(ModelSpec { s2p_pretrained: true, ..gpa() }),
        "gpa-bipartite" => m(ModelSpec { graph: GraphChoice::Bipartite, s2p_pretrained: true, ..gpa() }),
        "gpa-no-flag" => m(ModelSpec { graph: GraphChoice::Bipartite, s2p_pretrained: true, flag: false, ..gpa() }),
        "gpa-no-reshape" => m(ModelSpec {
            graph: GraphChoice::Bipartite,
            s2p_pretrained: true,
            flag: false,
            reshape: false,
            ..gpa()
        }),
        "gpa-no-reshape-train" => {
            m(ModelSpec { graph: GraphChoice::Bipartite, flag: false, reshape: false, ..gpa() })
        }
        "gpa-random" => m(ModelSpec {
            graph: GraphChoice::Bipartite,
            privacy: PrivacySource::Random,
            flag: false,
            reshape: false,
            ..gpa()
        }),
        "gpa-zeros" => m(ModelSpec {
            graph: GraphChoice::Bipartite,
            privacy: PrivacySource::Zeros,
            flag: false,
            reshape: false,
            ..gpa()
        }),
        "gpa-no-graph" => m(ModelSpec { graph: GraphChoice::None, ..gpa() }),
        "gip-fixed" => m(ModelSpec { privacy: PrivacySource::Image, ..gip() }),
        "gip-zeros" => m(gip()),
        "gip-no-type" => m(ModelSpec { flag: false, ..gip() }),
        "pcs2" => b(BaselineKind::Pcs2),
        "pcs3" => b(BaselineKind::Pcs3),
        "all-public" => b(BaselineKind::AllPublic),
        "all-private" => b(BaselineKind::AllPrivate),
        "random" => b(BaselineKind::Random),
        _ => Err(Error::Config(format!("unknown preset {name:?} (known: {})", PRESETS.join(", ")))),
    }
}

/// One cell of a variant matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub spec: ModelSpec,
}

fn feature_tag(f: ObjectFeatures) -> &'static str {
    match f {
        ObjectFeatures::Cardinality => "card",
        ObjectFeatures::CardinalityConfidence => "card+conf",
    }
}

/// 12 MLP variants: features × normalisation × {plain, batchnorm, weighted loss}.
pub fn mlp_variants() -> Vec<Variant> {
    let mut out = Vec::new();
    for features in [ObjectFeatures::Cardinality, ObjectFeatures::CardinalityConfidence] {
        for normalize in [false, true] {
            for extra in ["none", "bn", "wl"] {
                let spec = ModelSpec {
                    kind: ModelKind::Mlp,
                    object_features: features,
                    normalize,
                    batchnorm: extra == "bn",
                    weighted_loss: extra == "wl",
                    ..ModelSpec::default()
                };
                let name = format!("mlp/{}/{}/{}", feature_tag(features), if normalize { "norm" } else { "raw" }, extra);
                out.push(Variant { name, spec });
            }
        }
    }
    out
}

/// 16 GA-MLP variants: features × normalisation × {plain, transform, batchnorm, weighted loss}.
pub fn gamlp_variants() -> Vec<Variant> {
    let mut out = Vec::new();
    for features in [ObjectFeatures::Cardinality, ObjectFeatures::CardinalityConfidence] {
        for normalize in [false, true] {
            for extra in ["none", "trans", "bn", "wl"] {
                let spec = ModelSpec {
                    kind: ModelKind::Gamlp,
                    object_features: features,
                    normalize,
                    transform: if extra == "trans" { 16 } else { 0 },
                    batchnorm: extra == "bn",
                    weighted_loss: extra == "wl",
                    ..ModelSpec::default()
                };
                let name =
                    format!("gamlp/{}/{}/{}", feature_tag(features), if normalize { "norm" } else { "raw" }, extra);
                out.push(Variant { name, spec });
            }
        }
    }
    out
}

pub const GRID_DEPTHS: [usize; 6] = [1, 2, 3, 5, 7, 10];
pub const GRID_WIDTHS: [usize; 6] = [4, 8, 16, 32, 64, 128];

/// Depth × width sweep over the MLP (cardinality, normalised).
pub fn depth_width_grid(depths: &[usize], widths: &[usize]) -> Vec<Variant> {
    let mut out = Vec::new();
    for &depth in depths {
        for &width in widths {
            let spec = ModelSpec { kind: ModelKind::Mlp, depth, width, normalize: true, ..ModelSpec::default() };
            out.push(Variant { name: format!("mlp/d{depth}/w{width}"), spec });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves_and_validates() {
        for name in PRESETS {
            let p = preset(name).unwrap();
            if let Predictor::Model(m) = p {
                m.validate().unwrap();
            }
        }
        assert!(preset("gpa2").is_err());
    }

    #[test]
    fn matrix_sizes() {
        assert_eq!(mlp_variants().len(), 12);
        assert_eq!(gamlp_variants().len(), 16);
        assert_eq!(depth_width_grid(&GRID_DEPTHS, &GRID_WIDTHS).len(), 36);
        let names: std::collections::HashSet<_> = gamlp_variants().into_iter().map(|v| v.name).collect();
        assert_eq!(names.len(), 16);
    }
}
