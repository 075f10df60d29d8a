//! Toolkit for English and Nigerian Pidgin translation and sentiment
//! experiments: corpora, spelling variation, tokenizers, a small
//! encoder-decoder transformer, adaptive training stages and evaluation.

pub mod adapt;
pub mod cli;
pub mod corpus;
pub mod eval;
pub mod model;
pub mod orthography;
pub mod synth;
pub mod tokenize;
