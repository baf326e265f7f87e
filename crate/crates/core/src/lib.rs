//! Content-controlled authorship verification toolkit.
//!
//! The crate is organised along the pipeline:
//!
//! * [`corpus`] loads and filters conversation corpora,
//! * [`taskgen`] samples AV pairs and CAV triples under a content-control level,
//! * [`encoder`] maps text to unit-norm style vectors,
//! * [`training`] fits the encoder with contrastive, triplet or online-contrastive losses,
//! * [`eval`] scores representations (AUC, CAV accuracy),
//! * [`stel`] runs the STEL and STEL-Or-Content probes,
//! * [`cluster`] clusters embeddings and measures author / feature cohesion.
//!
//! [`synth`] builds the planted-structure corpora used by tests and demos.

pub mod cluster;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod rng;
pub mod stel;
pub mod synth;
pub mod taskgen;
pub mod training;

pub use corpus::{Corpus, CorpusError, Utterance};
pub use encoder::{EncoderModel, FeatureConfig, StyleVector};
pub use taskgen::{AvLabel, AvPair, CavTask, CcLevel};
