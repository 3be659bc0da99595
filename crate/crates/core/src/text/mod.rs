//! Packet text and the byte-level BPE tokenizer.

pub mod bpe;
pub mod serialize;

use thiserror::Error;

pub use bpe::{train_bpe, BpeVocab, Special, TokenSequence, BASE_VOCAB, NUM_SPECIAL};
pub use serialize::{column_indices, packet_line, parse_line, parse_packet, render_number, serialize_flow};

#[derive(Debug, Error)]
pub enum TextError {
    #[error("records span flows {0} and {1}")]
    MixedFlows(u32, u32),
    #[error("corpus has no trainable text")]
    CorpusEmpty,
    #[error("vocab size {requested} below the minimum {minimum}")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("token id {id} outside vocabulary of {vocab_size}")]
    UnknownId { id: u32, vocab_size: usize },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("unparseable packet line: {0}")]
    BadLine(String),
    #[error("bad vocabulary: {0}")]
    BadVocab(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
