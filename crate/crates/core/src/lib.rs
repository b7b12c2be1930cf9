//! Dense video captioning toolkit: temporal proposal fusion, event context
//! extraction, concept prediction, caption and diversity metrics, and
//! proposal/caption re-ranking.

pub mod concepts;
pub mod context;
pub mod error;
pub mod fusion;
pub mod interval;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rerank;
pub mod synthetic;

pub use error::{Error, Result};
pub use model::{
    AnnotationSet, Corpus, FeatureMatrix, PredictionEntry, SegmentGrid, TimeInterval, VideoMeta, VideoRecord,
};
