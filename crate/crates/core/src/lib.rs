//! Lossless compression toolkit built on range-variant asymmetric numeral
//! systems: a scalar coder, a vectorized multi-lane coder, composable codecs,
//! equal-mass discretization of continuous latents, analytic latent-variable
//! models, and bits-back coding protocols over them.

pub mod bbans;
pub mod cli;
pub mod codecs;
pub mod container;
pub mod discretize;
pub mod error;
pub mod latent_models;
pub mod rans;
pub mod vrans;

pub use error::CoderError;
pub use rans::{Message, Precisions, QuantizedDistribution, SymbolModel};
pub use codecs::{
    bernoulli_codec, quantize_probs, substack, BbAnsCodec, CategoricalCodec, CdfKernel, Codec,
    DiscretizedObsCodec, GaussianIndexCodec, SerialCodec, Substack, UniformCodec, VCodec, View,
};
pub use discretize::DiscretizationGrid;
pub use vrans::{FlattenMode, HeadCode, VMessage};
