//! Bowel-sound pattern taxonomy, labelled segments and the Audacity label
//! text format (`start<TAB>end<TAB>label`, seconds).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternLabel {
    SB,
    MB,
    CRS,
    HS,
    /// Non-event time, inserted by gap filling.
    None,
}

impl PatternLabel {
    /// Report order: None first, then the event classes.
    pub const ALL: [PatternLabel; 5] = [
        PatternLabel::None,
        PatternLabel::SB,
        PatternLabel::MB,
        PatternLabel::CRS,
        PatternLabel::HS,
    ];

    /// Classifier output classes, in tie-break order.
    pub const EVENTS: [PatternLabel; 4] =
        [PatternLabel::SB, PatternLabel::MB, PatternLabel::CRS, PatternLabel::HS];

    pub fn as_str(self) -> &'static str {
        match self {
            PatternLabel::SB => "SB",
            PatternLabel::MB => "MB",
            PatternLabel::CRS => "CRS",
            PatternLabel::HS => "HS",
            PatternLabel::None => "None",
        }
    }

    pub fn is_event(self) -> bool {
        self != PatternLabel::None
    }

    /// Position in [`PatternLabel::EVENTS`], `None` for the non-event label.
    pub fn event_index(self) -> Option<usize> {
        PatternLabel::EVENTS.iter().position(|&l| l == self)
    }

    pub fn spec(self) -> Option<&'static PatternSpec> {
        PATTERN_SPECS.iter().find(|s| s.label == self)
    }
}

impl fmt::Display for PatternLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PatternLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    Impulsive,
    BurstGroup,
    Continuous,
    Harmonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PatternSpec {
    pub label: PatternLabel,
    pub min_ms: f64,
    pub max_ms: f64,
    pub structure: Structure,
}

impl PatternSpec {
    pub fn centroid_ms(&self) -> f64 {
        0.5 * (self.min_ms + self.max_ms)
    }

    pub fn contains_ms(&self, ms: f64) -> bool {
        ms >= self.min_ms - DURATION_SLACK_MS && ms <= self.max_ms + DURATION_SLACK_MS
    }
}

/// Rounding slack for duration checks on microsecond-resolution times.
const DURATION_SLACK_MS: f64 = 1e-6;

pub const PATTERN_SPECS: [PatternSpec; 4] = [
    PatternSpec {
        label: PatternLabel::SB,
        min_ms: 10.0,
        max_ms: 30.0,
        structure: Structure::Impulsive,
    },
    PatternSpec {
        label: PatternLabel::MB,
        min_ms: 40.0,
        max_ms: 1500.0,
        structure: Structure::BurstGroup,
    },
    PatternSpec {
        label: PatternLabel::CRS,
        min_ms: 200.0,
        max_ms: 4000.0,
        structure: Structure::Continuous,
    },
    PatternSpec {
        label: PatternLabel::HS,
        min_ms: 50.0,
        max_ms: 1500.0,
        structure: Structure::Harmonic,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    pub label: PatternLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl Segment {
    pub fn new(start_s: f64, end_s: f64, label: PatternLabel) -> Self {
        Self {
            start_s,
            end_s,
            label,
            confidence: None,
        }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = Some(confidence);
        self
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn iou(&self, other: &Segment) -> f64 {
        interval_iou(self.start_s, self.end_s, other.start_s, other.end_s)
    }
}

/// Intersection over union of two half-open intervals.
pub fn interval_iou(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    let inter = (a1.min(b1) - a0.max(b0)).max(0.0);
    let union = a1.max(b1) - a0.min(b0);
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackSource {
    #[default]
    Manual,
    Predicted,
    Auto,
    ExpertAdjusted,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LabelError {
    #[error("line {line}: malformed entry: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: end {end_s} is not after start {start_s}")]
    EndNotAfterStart { line: usize, start_s: f64, end_s: f64 },
    #[error("line {line}: segment overlaps the previous one")]
    Overlap { line: usize },
}

/// Sorted, non-overlapping segments. Every constructor enforces both.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LabelTrack {
    segments: Vec<Segment>,
    source: TrackSource,
}

impl LabelTrack {
    pub fn empty(source: TrackSource) -> Self {
        Self {
            segments: Vec::new(),
            source,
        }
    }

    /// Sorts the segments and rejects invalid or overlapping ones. Error
    /// line numbers are 1-based positions in the input order.
    pub fn new(segments: Vec<Segment>, source: TrackSource) -> Result<Self, LabelError> {
        Self::build(segments.into_iter().enumerate().map(|(i, s)| (i + 1, s)).collect(), source)
    }

    fn build(mut entries: Vec<(usize, Segment)>, source: TrackSource) -> Result<Self, LabelError> {
        for (line, s) in &entries {
            if !(s.start_s.is_finite() && s.end_s.is_finite()) || s.start_s < 0.0 {
                return Err(LabelError::Malformed {
                    line: *line,
                    detail: "times must be finite and non-negative".into(),
                });
            }
            if s.end_s <= s.start_s {
                return Err(LabelError::EndNotAfterStart {
                    line: *line,
                    start_s: s.start_s,
                    end_s: s.end_s,
                });
            }
        }
        entries.sort_by(|a, b| {
            a.1.start_s
                .total_cmp(&b.1.start_s)
                .then(a.1.end_s.total_cmp(&b.1.end_s))
        });
        for w in entries.windows(2) {
            if w[1].1.start_s < w[0].1.end_s {
                return Err(LabelError::Overlap {
                    line: w[1].0.max(w[0].0),
                });
            }
        }
        Ok(Self {
            segments: entries.into_iter().map(|(_, s)| s).collect(),
            source,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn into_segments(self) -> Vec<Segment> {
        self.segments
    }

    pub fn source(&self) -> TrackSource {
        self.source
    }

    pub fn with_source(mut self, source: TrackSource) -> Self {
        self.source = source;
        self
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Segments other than None.
    pub fn events(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.label.is_event())
    }

    /// End time of the last segment, 0 for an empty track.
    pub fn end_s(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end_s)
    }
}

impl<'de> Deserialize<'de> for LabelTrack {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            segments: Vec<Segment>,
            #[serde(default)]
            source: TrackSource,
        }
        let raw = Raw::deserialize(d)?;
        LabelTrack::new(raw.segments, raw.source).map_err(serde::de::Error::custom)
    }
}

/// Parse Audacity label text. Blank lines and spectral-selection lines
/// (starting with a backslash) are skipped.
pub fn parse_label_track(text: &str, source: TrackSource) -> Result<LabelTrack, LabelError> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let row = raw.trim_end_matches('\r');
        if row.trim().is_empty() || row.starts_with('\\') {
            continue;
        }
        let mut cols = row.split('\t');
        let (Some(a), Some(b), Some(name), None) = (cols.next(), cols.next(), cols.next(), cols.next())
        else {
            return Err(LabelError::Malformed {
                line,
                detail: "expected start<TAB>end<TAB>label".into(),
            });
        };
        let time = |s: &str| -> Result<f64, LabelError> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| LabelError::Malformed {
                    line,
                    detail: format!("bad time value {s:?}"),
                })
        };
        let start_s = time(a)?;
        let end_s = time(b)?;
        let label = name.trim().parse::<PatternLabel>().map_err(|label| {
            LabelError::UnknownLabel { line, label }
        })?;
        entries.push((line, Segment::new(start_s, end_s, label)));
    }
    LabelTrack::build(entries, source)
}

/// Six-decimal, tab-separated, newline-terminated rows.
pub fn write_label_track(track: &LabelTrack) -> String {
    let mut out = String::with_capacity(track.len() * 28);
    for s in track.segments() {
        out.push_str(&format!("{:.6}\t{:.6}\t{}\n", s.start_s, s.end_s, s.label));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DurationWarning {
    pub index: usize,
    pub label: PatternLabel,
    pub duration_ms: f64,
    pub message: String,
}

/// One warning per event segment whose duration is outside its nominal
/// range. Never an error: real annotations exceed these ranges.
pub fn validate_durations(track: &LabelTrack) -> Vec<DurationWarning> {
    let mut out = Vec::new();
    for (index, seg) in track.segments().iter().enumerate() {
        let Some(spec) = seg.label.spec() else {
            continue;
        };
        let ms = seg.duration_s() * 1000.0;
        if spec.contains_ms(ms) {
            continue;
        }
        let message = if ms > spec.max_ms {
            format!("{} exceeds {} ms", seg.label, spec.max_ms)
        } else {
            format!("{} shorter than {} ms", seg.label, spec.min_ms)
        };
        out.push(DurationWarning {
            index,
            label: seg.label,
            duration_ms: ms,
            message,
        });
    }
    out
}
