//! Model configurations, parameter inventories, input encoding and
//! forward passes.

mod features;
mod network;
mod presets;
mod shapes;
mod spec;

pub use features::{
    batch_tensor, encode, flat_object_features, init_node_features_cardinality, init_node_features_deep, EncodedData,
    NodeFeatureMatrix,
};
pub use network::{
    attention, classifier, forward, gamlp_logits, ggnn, grm_inputs, grm_logits, grm_output, logits, mlp_image_logits,
    mlp_logits, predict_label, privacy_vectors, s2p_logits, GraphInputs,
};
pub use presets::{depth_width_grid, gamlp_variants, mlp_variants, preset, Variant, GRID_DEPTHS, GRID_WIDTHS, PRESETS};
pub use shapes::{
    count_parameters, fixed_backbones, init_store, param_shapes, Backbone, Init, ParamCount, ParamShape,
    IMAGE_BACKBONE, OBJECT_BACKBONE, SCENE_BACKBONE,
};
pub use spec::{
    BaselineKind, ExperimentConfig, GraphChoice, ModelKind, ModelSpec, NodeScheme, ObjectFeatures, Predictor,
    PrivacySource, S2pHead,
};
