//! The span-generation network, its training loop and constrained decoding.

pub mod bench;
pub mod config;
pub mod decode;
pub mod embed;
pub mod infer;
pub mod model;
pub mod train;

pub use config::{ConfigError, ModelConfig, TokenVocab};
pub use model::{Context, Dropout, Model, ModelError};
pub use decode::{beam_search, extract_graph, greedy, predict, search, DecodeConfig, DecodeError, Decoded, Extraction, MaskMode, Problem, Scorer};
pub use infer::{DecoderState, SourceCache};
pub use train::{batch_gradients, batch_loss, instances, Instance, StepStats, TrainConfig, TrainError, Trainer};
pub use bench::{bench, loglog_slope, BenchPoint, BenchReport};
