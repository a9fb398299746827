//! Supervised learning to hash with a label-driven teacher network.
//!
//! Training runs in two stages. A small network first learns to hash the label
//! vectors themselves ([`semantic`]); its outputs on every distinct training
//! label become two frozen dictionaries, one of binary codes and one of
//! real-valued features. A second network then learns to hash item features
//! ([`image`]) under a cosine contrastive loss whose per-pair margins are read
//! from the code dictionary, and whose targets include every dictionary entry
//! rather than just the items of the current batch.
//!
//! Retrieval ranks a database by Hamming distance between bit-packed codes and
//! reports MAP, precision-recall and top-k precision ([`eval`]).
//!
//! ```
//! use hashlearn::linalg::{hamming_distance, inner_product, sign_binarize, hamming_from_inner};
//!
//! let a = sign_binarize(&[0.4, -1.2, 0.0, 2.0]);
//! let b = sign_binarize(&[-0.1, -0.3, 0.7, 1.0]);
//! let ip = inner_product(&a.to_reals(), &b.to_reals()).unwrap();
//! assert_eq!(hamming_distance(&a, &b).unwrap() as f64, hamming_from_inner(4, ip).unwrap());
//! ```

pub mod checkpoint;
pub mod crossmodal;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod image;
pub mod linalg;
pub mod loss;
pub mod nn;
pub mod semantic;
pub mod train;

pub use error::{Error, ErrorKind, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/hamming.md")]
    mod hamming {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/crossmodal.md")]
    mod crossmodal {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
