//! Copy-augmented encoder-decoder corrector over BPE tokens.
//!
//! Both output modes share one normaliser: generate scores over the
//! vocabulary and copy scores over source positions are exponentiated and
//! divided by a common sum. With copying disabled the model is a plain
//! attentional encoder-decoder.

pub mod analysis;
pub mod checkpoint;
pub mod decode;
pub mod model;
pub mod output;
pub mod train;

pub use analysis::{copy_generate_analysis, CopyGenerateAnalysis};
pub use checkpoint::ModelCheckpoint;
pub use decode::{Corrector, Decoded, DecodedToken};
pub use model::{CopyNet, ModelConfig, Source, Specials};
pub use output::{output_distribution, OutputDistribution};
pub use train::{dev_crr, encode_pairs, train, EpochStats, TrainConfig, TrainOutcome, TrainingPair};
