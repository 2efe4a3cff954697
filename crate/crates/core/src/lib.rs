//! Multilingual debiasing for masked language models: counterfactual data
//! augmentation, parameter-efficient fine-tuning of a small in-crate MLM,
//! self-debiased scoring, and CrowS-Pairs / MBE bias evaluation.

pub mod backend;
pub mod cli;
pub mod error;
pub mod eval;
pub mod lang;
pub mod lexicon;
pub mod mcda;
pub mod mlm;
pub mod pipeline;
pub mod selfdebias;
pub mod textproc;

pub use error::{Error, Result};
pub use lang::{Attribute, LanguageCode};
