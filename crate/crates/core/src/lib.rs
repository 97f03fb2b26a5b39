//! Recurrent instance segmentation driven by sequences of referring
//! expressions, at desk scale.
//!
//! The pipeline: a small CNN encodes the image into a feature pyramid, each
//! phrase becomes a fixed-length vector (token vectors, mean pooling, PCA),
//! and a ConvLSTM decoder emits one mask per phrase while carrying its state
//! across the phrases of an image.

pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod episode_io;
pub mod error;
pub mod hungarian;
pub mod lang;
pub mod mask;
pub mod model;
pub mod netpbm;
pub mod nn;
pub mod objective;
pub mod synth;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use decoder::{CellState, ConvLstmCell, DecoderConfig, DecoderParams, DecoderState};
pub use encoder::{BackboneConfig, EncoderParams, FeaturePyramid};
pub use episode_io::{load_episodes, read_episode, write_episode};
pub use error::{Error, Result};
pub use hungarian::{hungarian_assign, Assignment, CostMatrix};
pub use lang::{
    EmbeddingSource, PcaModel, PhraseEmbedder, PhraseEmbedding, TokenMatrix, ToyEncoder,
};
pub use mask::Mask;
pub use model::{MaskSequence, ModelConfig, Recurrence, RefRecModel};
pub use nn::{ConvParams, Parameterized};
pub use objective::IouAccumulator;
pub use synth::{
    generate_episode, order_referents, resolve_phrase, Episode, OrderPolicy, Referent, Split,
    SynthConfig,
};
pub use tensor::{grad_check, Elementwise, PoolMode, ReduceMode, Tensor};
pub use train::{
    Adam, OrderMode, Pairing, Segmenter, SplitMetrics, TrainConfig, TrainReport, Trainer,
};
