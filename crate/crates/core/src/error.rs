use std::path::PathBuf;

use crate::audio::ChannelId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: unsupported encoding: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },

    #[error("{path}: file contains no audio frames")]
    ZeroLength { path: PathBuf },

    #[error("{path}: corrupt header: {detail}")]
    CorruptHeader { path: PathBuf, detail: String },

    #[error("invalid audio: {0}")]
    InvalidAudio(String),

    #[error("slice [{start_s}, {end_s}) outside clip of {duration_s} s")]
    SliceOutOfRange {
        start_s: f64,
        end_s: f64,
        duration_s: f64,
    },

    #[error("clip too short: {frames} frames available, at least {required} needed")]
    ClipTooShort { frames: usize, required: usize },

    #[error("silent baseline: recording carries no signal below the median energy")]
    SilentBaseline,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("channel {channel}: {source}")]
    Channel {
        channel: ChannelId,
        #[source]
        source: Box<Error>,
    },

    #[error("label track: {0}")]
    Label(#[from] crate::patterns::LabelError),

    #[error("segment [{start_s}, {end_s}] exceeds recording duration {total_s} s")]
    SegmentOutOfSpan {
        start_s: f64,
        end_s: f64,
        total_s: f64,
    },

    #[error("track spans differ: reference ends at {reference_s} s, candidate at {candidate_s} s")]
    SpanMismatch { reference_s: f64, candidate_s: f64 },

    #[error("invalid synthesis parameters: {0}")]
    Synth(String),

    #[error("interval of {frames} frames is too short to classify (need at least 2)")]
    IntervalTooShort { frames: usize },

    #[error("invalid class probabilities: {0}")]
    Probabilities(String),

    #[error("training: {0}")]
    Training(String),

    #[error("model: {0}")]
    Model(String),

    #[error("adapter transport failure: {0}")]
    Transport(String),

    #[error("adapter sent malformed reply: {0}")]
    MalformedReply(String),

    #[error("adapter did not reply within {0:?}")]
    Timeout(std::time::Duration),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn in_channel(self, channel: ChannelId) -> Self {
        Error::Channel {
            channel,
            source: Box::new(self),
        }
    }

    /// Short machine-readable tag, used in error JSON emitted by the CLI and
    /// the review service.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::UnsupportedEncoding { .. } => "unsupported_encoding",
            Error::ZeroLength { .. } => "zero_length",
            Error::CorruptHeader { .. } => "corrupt_header",
            Error::InvalidAudio(_) => "invalid_audio",
            Error::SliceOutOfRange { .. } => "slice_out_of_range",
            Error::ClipTooShort { .. } => "clip_too_short",
            Error::SilentBaseline => "silent_baseline",
            Error::Config(_) => "config",
            Error::Channel { source, .. } => source.kind(),
            Error::Label(_) => "label",
            Error::SegmentOutOfSpan { .. } => "segment_out_of_span",
            Error::SpanMismatch { .. } => "span_mismatch",
            Error::Synth(_) => "synth",
            Error::IntervalTooShort { .. } => "interval_too_short",
            Error::Probabilities(_) => "probabilities",
            Error::Training(_) => "training",
            Error::Model(_) => "model",
            Error::Transport(_) => "transport",
            Error::MalformedReply(_) => "malformed_reply",
            Error::Timeout(_) => "timeout",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
