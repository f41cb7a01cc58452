//! The relevance-biased encoder–decoder, its checkpoints and training loop.

mod checkpoint;
mod config;
mod decoder;
mod encoder;
mod generator;
mod train;

pub use checkpoint::{AdamMeta, Checkpoint, CheckpointHeader, FORMAT_VERSION};
pub use config::ModelConfig;
pub use decoder::{Decoder, DecoderCache, DecoderLayer, DecoderLayerCache};
pub use encoder::{EmbeddingCache, Encoder, EncoderCache, EncoderLayer, PositionalEmbedding};
pub use generator::{
    prefix_log_probs, BackwardOutput, DecodeSession, DecodeState, EncoderOutput, ForwardCache, Seq2Seq,
};
pub use train::{training_relevance, Batch, JointInputs, JointQa, TrainConfig, TrainExample, Trainer};
