//! Fisher Vector image classification with layer-wise relevance propagation.

pub mod descriptors;
pub mod evaluation;
mod error;
pub mod experiment;
pub mod fisher;
pub mod gmm;
pub mod imaging;
pub mod lrp;
pub mod nn;
pub mod pipeline;
pub mod svm;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/fisher-vectors.md")]
    mod fisher_vectors {}
    #[doc = include_str!("../../../book/src/fv-relevance.md")]
    mod fv_relevance {}
    #[doc = include_str!("../../../book/src/nn-relevance.md")]
    mod nn_relevance {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic-corpora.md")]
    mod synthetic_corpora {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
