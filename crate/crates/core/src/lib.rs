//! Training-free machinery for multi-dialect speech recognition: hybrid
//! tokenization, temperature-based dataset sampling, sharded manifests,
//! hotword filtering and biasing, CTC beam search with shallow fusion, and
//! WER/BWER/UWER scoring.
//!
//! Numeric modules are generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`.

pub mod biasing;
pub mod datapipe;
pub mod decoder;
pub mod metrics;
pub mod num;
pub mod rng;
pub mod sampler;
pub mod tokenizer;

pub use num::Real;
pub use tokenizer::{TokenId, TokenSequence, TokenizerConfig, TokenizerModel};

pub type Posteriorgram = biasing::Posteriorgram<f64>;
pub type FilterConfig = biasing::FilterConfig<f64>;
pub type Matrix = biasing::Matrix<f64>;
pub type ContextFusionParams = biasing::ContextFusionParams<f64>;
pub type SamplingSpec = sampler::SamplingSpec<f64>;
pub type SamplingPlan = sampler::SamplingPlan<f64>;
pub type ContextTrie = decoder::ContextTrie<f64>;
pub type Hypothesis = decoder::Hypothesis<f64>;

pub type PosteriorgramF32 = biasing::Posteriorgram<f32>;
pub type ContextTrieF32 = decoder::ContextTrie<f32>;
pub type HypothesisF32 = decoder::Hypothesis<f32>;
pub type ContextFusionParamsF32 = biasing::ContextFusionParams<f32>;
