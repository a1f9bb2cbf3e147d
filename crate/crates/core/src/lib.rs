//! Compile, count, search, and sample the full tokenization space of a
//! string under a BPE vocabulary.

pub mod bpe;
pub mod canonicity;
pub mod cli;
pub mod exact;
pub mod hardness;
pub mod logspace;
pub mod mdd;
pub mod model;
pub mod qa;
pub mod sampler;
pub mod search;
pub mod vocab;

pub use bpe::{EncodeError, Tokenizer};
pub use mdd::{Edge, Mdd, MddCompiler, MddError};
pub use model::{Conditioning, ModelError, ScoringModel, SequenceScore};
pub use vocab::{MergeTable, Pretokenizer, TokenId, Tokenization, VocabFile, Vocabulary};
