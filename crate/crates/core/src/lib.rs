//! Audio-driven conversational head generation at desk scale.
//!
//! The pipeline has two stages joined by 3DMM head parameters:
//!
//! 1. a recurrent *driver* maps 45-dim per-video-frame audio features to
//!    per-frame residuals over the reference frame's parameters
//!    ([`driver`], trained by [`training`], optionally averaged by [`ensemble`]);
//! 2. a *renderer* turns parameters plus a reference image into frames
//!    ([`renderer`]), after which [`fusion`] pastes the static background of the
//!    reference back over the generated frames.
//!
//! [`metrics`] scores results, [`synth`] produces a procedural dataset with a
//! known audio-to-parameter map, and [`io`] holds every on-disk format.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod driver;
pub mod ensemble;
mod error;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod mfcc;
pub mod params;
pub mod renderer;
pub mod synth;
pub mod training;

pub use audio::{AudioClip, FeatureFrame, FeatureSequence, FEATURE_DIM};
pub use driver::{AttitudeCondition, DriverCheckpoint, DriverConfig, DriverWeights, Mode};
pub use ensemble::{EnsembleKind, EnsembleSpec};
pub use error::{Error, Result};
pub use fusion::{Mask, Segmenter, ThresholdSegmenter};
pub use metrics::{GaussianStats, MetricsReport};
pub use params::{HeadParams, ParamSequence, Selector, PARAM_DIM};
pub use renderer::{Frame, Renderer, SampleGrid, ToyRenderer};
pub use training::{TrainConfig, TrainOutcome};
