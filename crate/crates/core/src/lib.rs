//! Bowel-sound detection, classification and annotation-agreement toolkit.

pub mod audio;
pub mod classify;
pub mod detect;
pub mod dsp;
pub mod error;
pub mod evalstats;
pub mod framefeat;
pub mod patterns;
pub mod pipeline;
pub mod postproc;
pub mod synth;

pub use audio::{AudioClip, ChannelId, Cohort, Recording};
pub use error::{Error, Result};
pub use patterns::{LabelTrack, PatternLabel, Segment, TrackSource};
