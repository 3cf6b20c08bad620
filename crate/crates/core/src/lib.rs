//! Dual-stream camera-to-BEV view transformation.
//!
//! Multi-camera image features are moved into a bird's-eye-view grid along two
//! paths: a height-sampling stream that reads features through a precomputed
//! lookup table, and a lift-and-pool stream that spreads each pixel over its
//! predicted depth distribution. The two results are blended per channel and
//! gated by a predicted BEV foreground probability.

pub mod btsr;
pub mod cli;
pub mod dff;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod heighttrans;
pub mod nnops;
pub mod pipeline;
pub mod problss;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod table;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Executor;
pub use geometry::{make_height_samples, project_point, BevGridSpec, CameraRig, HeightMode, HeightSet, Projection};
pub use heighttrans::{ht_transform_fast, ht_transform_naive, precompute_ht_table, HtLookupTable, SamplerMode};
pub use pipeline::{run_pipeline, Ablation, FusionModel, Geometry, HtPath, PipelineOptions, PipelineOutput, Tables};
pub use problss::{lss_pool, precompute_lss_table, LssPoolTable, WeightMode};
pub use rng::Rng;
pub use sampling::{DepthBinSpec, StreamInputs};
pub use synth::{generate_scene, SceneBundle, SceneSpec};
pub use tensor::Tensor;
