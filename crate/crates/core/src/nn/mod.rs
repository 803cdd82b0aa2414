//! Encoder + head model with exact reverse-mode gradients.

mod config;
pub mod gradcheck;
mod model;
pub mod tape;

pub use config::{Architecture, Init, ModelConfig, ParamSpec};
pub use model::{
    argmax_rows, classification_objective, encoder_features, head_logits, init_encoder, init_head,
    mat_to_tensor, params_from_snapshot, tensor_to_mat, write_back, GradientSet, ModelGraph, ParamValues,
    Trainable, HEAD_BIAS, HEAD_INIT_STD, HEAD_WEIGHT,
};
pub(crate) use model::{bind, check_encoder_layout, encoder_graph, init_param};
