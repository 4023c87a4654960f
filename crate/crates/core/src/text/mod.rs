//! Text side of the pipeline: tokens, vocabulary, padding, and explicit features.

pub mod features;
pub mod lexicon;
pub mod tokenize;
pub mod vocab;

pub use features::{extract_text_explicit, sentiment_scores, type_token_ratio, TextExplicitVector, TEXT_FEATURE_DIM, TEXT_FEATURE_NAMES};
pub use lexicon::Lexicons;
pub use tokenize::{sentences, tokenize, tokenize_cased};
pub use vocab::{encode_pad, Vocabulary, OOV_INDEX, PAD_INDEX};
