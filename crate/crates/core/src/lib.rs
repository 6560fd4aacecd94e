//! Vocabulary trimming for multilingual language model checkpoints.
//!
//! The pipeline: count token frequencies over a target-language corpus
//! ([`freq`]), turn the table into a trim plan ([`plan`]), slice the
//! vocabulary-indexed tensors of a checkpoint ([`surgeon`]), and account for
//! the result ([`report`]). [`tokenizer`] provides the subword tokenizers
//! everything else is built on; [`profile`] describes model architectures.

pub mod freq;
pub mod plan;
pub mod profile;
pub mod report;
pub mod surgeon;
pub mod tokenizer;
