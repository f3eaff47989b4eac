//! Transition-based AMR parsing with pluggable static and contextual word
//! embeddings.
//!
//! The pipeline: [`corpus`] ingests AMR banks and CoNLL-U annotations,
//! [`aligner`] fills in missing node/token alignments, [`oracle`] turns each
//! annotated sentence into gold [`transition`] sequences and training samples,
//! [`classifiers`] trains the action, label and reentrancy networks, and
//! [`parser`] runs them greedily. [`smatch`] scores the output.

pub mod aligner;
pub mod classifiers;
pub mod concepts;
pub mod corpus;
pub mod embeddings;
pub mod features;
pub mod graph;
pub mod oracle;
pub mod parser;
pub mod penman;
pub mod samples;
pub mod smatch;
pub mod transition;

pub use graph::{AmrGraph, Edge, Node, NodeId, NodeKind, Triple, TripleKind};
pub use penman::{parse_penman, serialize_penman, serialize_penman_compact, PenmanError};
