//! Camouflaged-object segmentation network with a feature-shrinkage-pyramid
//! decoder, built on a small dense tensor kernel with reverse-mode
//! differentiation.
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! at the crate root fix it to `f64`, the precision everything is tested in.

pub mod encoder;
pub mod error;
pub mod fsd;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod loss;
pub mod model;
pub mod nl_tem;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod param;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use encoder::{Encoder, EncoderConfig, EncoderOutput, TokenSequence};
pub use error::{Error, Result};
pub use fsd::{build_schedule, DecodeSchedule, Fsd, LateralPrediction};
pub use gradcheck::{check_gradient, check_gradients, check_param_gradients};
pub use graph::{Gradients, Graph, Mode, Var};
pub use loss::{lateral_weights, total_loss};
pub use model::{Fspnet, FspnetConfig, ModelOutput, Variant};
pub use nl_tem::{EnhancedFeature, NlTem, NlTemConfig, NlTemIntermediates};
pub use ops::RunningStats;
pub use optim::{Adam, StepDecay};
pub use param::{BufferId, InitSpec, ParamId, ParamStore, Parameter};
pub use rng::SeededRng;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Graph64 = Graph<f64>;
pub type ParamStore64 = ParamStore<f64>;
