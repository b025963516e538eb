//! Saliency-guided iterative refinement of instruction-based image edits.
//!
//! The crate has two halves. The offline half builds ground-truth flaw
//! maps from disk annotations ([`gt`]), post-processes predicted maps into
//! masks and boxes ([`perception`]), scores predictions ([`metrics`]),
//! aggregates human ratings into MOS ([`mos`]) and implements the training
//! objectives ([`objectives`]). The online half runs the four-agent
//! refinement loop ([`refine`]) over pluggable [`backends`], one session at a
//! time or as a batch ([`batch`]), and records replayable traces ([`trace`]).

pub mod backends;
pub mod batch;
pub mod error;
pub mod exec;
pub mod gt;
pub mod manifest;
pub mod metrics;
pub mod mos;
pub mod objectives;
pub mod perception;
pub mod raster;
pub mod refine;
pub mod trace;
pub mod types;

pub use error::{Error, Result};
pub use exec::Exec;
pub use types::{
    AnnotatedBox, BinaryMask, BoundingBox, Disk, FlawDiagnosis, ImageRef, PixelSource,
    RegionAnnotation, RegionKind, SaliencyMap,
};
