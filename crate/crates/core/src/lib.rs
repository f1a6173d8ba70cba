//! Cross-lingual question generation driven by type-matched question exemplars.
//!
//! The pipeline has two stages. A question-type classifier reads an answer and
//! its context and predicts one of eight interrogative categories. A
//! sequence-to-sequence generator then receives a fixed set of questions of that
//! type, written in the target language, alongside the answer and context, and
//! produces a question that borrows the exemplars' interrogative structure.
//!
//! The generator is trained on English data only, with its embeddings and
//! decoder frozen, so the target-language knowledge of the backbone survives
//! fine-tuning.

pub mod augmentation;
pub mod backend;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod exemplar;
pub mod language;
pub mod qg;
pub mod qtc;
pub mod question_typing;
pub mod seed;
pub mod tokenizer;
pub mod toy;

pub use error::{QuistError, Result};
pub use question_typing::QuestionType;
