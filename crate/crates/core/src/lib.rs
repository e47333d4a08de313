//! Cross-domain facial expression retargeting: human blendshape parameters
//! to anime rig coefficients.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64` and
//! `*32` aliases below fix the element type.

pub mod adapter;
pub mod error;
pub mod io;
pub mod lstsq;
pub mod metrics;
pub mod rig;
pub mod scalar;
pub mod synth;
pub mod translator;

pub use adapter::{anime_proxy_rig, apply_adapter, fit_pose_adapter, fit_pose_adapter_with, AdapterMatrix, FitTarget};
pub use error::{Error, Result};
pub use metrics::{eyelid_distance, kdr_frame, kdr_sequence, EyePairs, KdrReport};
pub use rig::{
    closure_offsets, extract_keypoints, map_head_angles, synthesize_mesh, synthesize_params, AngleUnitChange,
    AnimePose, BlendshapeBasis, ExpressionParams, HeadAngleConvention, Mesh, Pair, Point3, RigSpec,
};
pub use scalar::Scalar;
pub use synth::{make_rig_pair, oracle_labels, sample_expressions, SynthSpec};
pub use translator::{
    forward, gradient, loss_total, train, LossBreakdown, LossWeights, TrainConfig, TranslatorModel,
};

pub type Mesh64 = Mesh<f64>;
pub type Mesh32 = Mesh<f32>;
pub type RigSpec64 = RigSpec<f64>;
pub type RigSpec32 = RigSpec<f32>;
pub type ExpressionParams64 = ExpressionParams<f64>;
pub type ExpressionParams32 = ExpressionParams<f32>;
pub type AdapterMatrix64 = AdapterMatrix<f64>;
pub type AdapterMatrix32 = AdapterMatrix<f32>;
pub type TranslatorModel64 = TranslatorModel<f64>;
pub type TranslatorModel32 = TranslatorModel<f32>;
