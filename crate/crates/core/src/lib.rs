//! Multi-level temporal compression of videos.
//!
//! A video is cut into fixed-length segments, each segment gets its own
//! temporal compression rate chosen by a quality/compression score, the
//! per-segment latents are concatenated into one stream with keyframe markers,
//! and a linear keyframe predictor recovers the segment boundaries (and hence
//! the rates) on decode.
//!
//! The learned video autoencoder is replaced by a deterministic decimation
//! codec ([`codec::DecimationCodec`]) so that every stage can be tested
//! against exact oracles.

pub mod codec;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod par;
pub mod planner;
pub mod stream;
pub mod tensor;

pub use codec::{CodecConfig, DecimationCodec, SpatialInterp, TemporalCodec, TemporalInterp};
pub use error::{MtcError, Result};
pub use par::Exec;
pub use planner::{AlphaStats, CompressionPlan, QualityFunctionKind, QualityMatrix};
pub use stream::{KeyframeEmbedding, KeyframePredictor, LatentStream, PositionPolicy};
pub use tensor::{Frame, LatentFrame, LatentSegment, SegmentedVideo, VideoSegment};
