//! Concept-graph guided long text generation.
//!
//! The pipeline: load a corpus and build a bounded vocabulary, construct a
//! concept graph (PMI co-occurrence edges or imported triples), derive
//! self-supervised hop-labelling and sentence-realization datasets from
//! consecutive sentence pairs, train a hop labeller and a path-aware
//! realizer on a small from-scratch transformer substrate, then generate
//! long text sentence by sentence and score it with diversity and novelty
//! metrics.

pub mod artifact;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod data_builder;
pub mod error;
pub mod generator;
pub mod graph;
pub mod metrics;
pub mod neural;
pub mod reasoner;
pub mod realizer;
pub mod selfcheck;

pub use error::{Error, Result};
