//! Decoder-only set-prediction detector for large sparse point clouds.
//!
//! The crate is generic over the floating-point scalar (`f32` or `f64`) via
//! [`Scalar`]; concrete aliases are provided below. Training and inference
//! normally run in `f32`, gradient checks in `f64`.

pub mod autodiff;
pub mod backbone;
pub mod config;
pub mod decoder;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod optim;
pub mod params;
pub mod sampling;
pub mod scalar;
pub mod scene;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, Tape, Var};
pub use backbone::{backbone_forward, pillarize, GridConfig, Pillars, TokenSequence, Tokens};
pub use decoder::{
    decoder_forward, select_detections, BoxParams, DecoderConfig, DecoderOutput, Detection, Detector, DetectorConfig,
    Inference, Layout, RefineSchedule,
};
pub use encoding::{encode_anchor, fourier_features_at, grid_positional_encoding, FourierBasis};
pub use error::{Error, Result};
pub use params::{Group, ParamStore};
pub use sampling::{farthest_point_sample, AnchorSet};
pub use scalar::Scalar;
pub use scene::{
    generate_scene, load_scene, save_scene, ClassSpec, Extent, GroundTruthBox, Point3, Scene, SceneConfig,
};
pub use tensor::Matrix;

pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type Detector32 = Detector<f32>;
pub type Detector64 = Detector<f64>;
