//! Temporal action detection at desk scale.
//!
//! The pipeline runs in three stages: confidence maps are decoded into
//! class-agnostic proposals ([`propgen`]), a self-attention relation module
//! re-scores every proposal against the rest of its video ([`relation`]),
//! and proposals are suppressed, fused with video-level class scores and
//! optionally ensembled ([`postproc`]). [`metrics`] implements AR@AN, AUC
//! and average mAP.

pub mod augment;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod postproc;
pub mod propgen;
pub mod relation;
pub mod segment;
pub mod synth;
pub mod weights;

pub use error::{Error, Result};
pub use segment::{tiou, to_normalized, Detection, GroundTruthDB, Proposal, TemporalSegment};
