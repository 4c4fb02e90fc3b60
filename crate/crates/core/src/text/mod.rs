//! Tokenization, vocabularies, word embeddings and GRU question encoding.

pub mod embedding;
pub mod encoder;
pub mod tokenize;
pub mod vocab;

pub use embedding::{load_word_vectors, parse_word_vectors, EmbeddingSource, EmbeddingTable};
pub use encoder::{encode_question, EncodedQuestion, MAX_QUESTION_TOKENS};
pub use tokenize::{normalize, tokenize, tokenize_with_offsets, TokenSpan};
pub use vocab::{Vocabulary, PAD, SEQ_SEP, SEQ_START, UNK};
