//! Disentangled lifespan face synthesis.
//!
//! A reference face is encoded into a spatial shape map, a pooled texture
//! vector and an identity map. A target age code modulates the shape
//! convolution and gates the texture channels; a style-modulated generator
//! decodes the pair into the target-age face.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the bottom of this file name the common instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod age;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod image_io;
pub mod kernels;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod params;
pub mod scalar;
pub mod synthesis;
pub mod tensor;
pub mod toy;
pub mod trainer;
pub mod transforms;

pub use age::{
    clean_age_code, group_of_age, interpolate_age_code, make_age_code, AgeCode, AgeGroupTable,
    NUM_GROUPS,
};
pub use autograd::{Graph, Trainable, Var};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointBundle};
pub use config::{Architecture, ModelConfig, TrainConfig};
pub use data::{load_manifest, DatasetManifest, Gender, InMemory, ManifestSource, SampleSource};
pub use error::{Error, Result};
pub use evaluation::{evaluate, EvalReport, FallbackEmbedding, FallbackPerceptual};
pub use model::{Features, Model};
pub use objectives::{total_loss, LossBreakdown, LossParts, LossWeights};
pub use params::{ParamId, ParamStore, Side};
pub use scalar::Scalar;
pub use synthesis::{Mode, SynthesisRequest, Synthesizer};
pub use tensor::Tensor;
pub use trainer::{lr_at, EmaState, StepReport, Trainer};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
pub type Trainer32 = Trainer<f32>;
pub type Trainer64 = Trainer<f64>;
