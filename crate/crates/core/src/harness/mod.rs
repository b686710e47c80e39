//! Experiment plumbing: synthetic corpora, ingestion, folds, the genre
//! analysis and transfer comparison, reports and figures.

pub mod config;
pub mod corpus;
pub mod data;
pub mod experiment;
pub mod pipeline;
pub mod render;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] crate::vae::ModelError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Midi(#[from] crate::midi::MidiError),
    #[error("no melodies extracted from {0}")]
    NoMelodies(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
