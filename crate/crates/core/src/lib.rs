//! Phrase localization from off-the-shelf detector outputs and word
//! embeddings, with no paired phrase/box training data.

pub mod colour;
pub mod concepts;
pub mod detection;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod flickr30k;
pub mod geometry;
pub mod localize;
pub mod overlay;
pub mod pipeline;
pub mod spell;
pub mod text;

pub use concepts::{represent_query, score_concepts, QueryMode, QueryRepresentation, ScoredConcept};
pub use detection::{ConceptGroup, Detection, DetectionDump, DetectorId, ImageDetections};
pub use embedding::{EmbeddingTable, OovFallback, PhraseVector};
pub use error::{Error, Result};
pub use eval::{Category, EvalRecord, Query};
pub use geometry::{iou, union_box, BoundingBox, ImageSize};
pub use localize::{localize, ConsensusConfig, Localization, Strategy};
pub use pipeline::{DetectionIndex, Engine, Prediction, RunConfig, Similarity};
pub use spell::SpellCorrector;
