//! Event classification into SB / MB / CRS / HS.
//!
//! Three interchangeable backends implement [`Classifier`]: the rule-based
//! decision tree, the trainable spectral model and the external adapter.

pub mod external;
pub mod mel;
pub mod rule;
pub mod spectral;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, Cohort};
use crate::detect::EventInterval;
use crate::error::{Error, Result};
use crate::framefeat::FrameFeatureTrack;
use crate::patterns::{LabelTrack, PatternLabel, Segment, TrackSource};

pub use external::{AdapterEndpoint, ExternalClassifier};
pub use mel::{LogMel, MelConfig};
pub use rule::{rule_classify, RuleClassifier, RuleConfig};
pub use spectral::{train_spectral, SpectralClassifier, SpectralModel, TrainConfig, TrainingItem};

/// Allowed deviation of a probability vector's sum from 1.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// Scores over the four event classes, in [`PatternLabel::EVENTS`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassProbabilities {
    probs: [f64; 4],
}

impl ClassProbabilities {
    pub fn new(probs: [f64; 4]) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && (0.0..=1.0).contains(*p))) {
            return Err(Error::Probabilities(format!("value {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Probabilities(format!("values sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform() -> Self {
        Self { probs: [0.25; 4] }
    }

    /// Softmax of raw scores.
    pub fn from_logits(logits: [f64; 4]) -> Self {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = logits.map(|z| (z - m).exp());
        let s: f64 = e.iter().sum();
        Self { probs: e.map(|v| v / s) }
    }

    /// `winner` gets `p`, the other three share the rest equally.
    pub fn one_hot_soft(winner: PatternLabel, p: f64) -> Self {
        let idx = winner.event_index().expect("event label");
        let rest = (1.0 - p) / 3.0;
        let mut probs = [rest; 4];
        probs[idx] = p;
        Self { probs }
    }

    /// Exactly the four event labels, summing to one.
    pub fn from_map(map: &BTreeMap<String, f64>) -> Result<Self> {
        if map.len() != 4 {
            return Err(Error::Probabilities(format!(
                "expected labels SB, MB, CRS, HS; got {:?}",
                map.keys().collect::<Vec<_>>()
            )));
        }
        let mut probs = [0.0; 4];
        for (k, v) in map {
            let idx = k
                .parse::<PatternLabel>()
                .ok()
                .and_then(PatternLabel::event_index)
                .ok_or_else(|| Error::Probabilities(format!("unexpected label {k:?}")))?;
            probs[idx] = *v;
        }
        Self::new(probs)
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.probs
    }

    pub fn get(&self, label: PatternLabel) -> f64 {
        label.event_index().map_or(0.0, |i| self.probs[i])
    }

    /// Highest-scoring label; ties resolve to the earliest of SB, MB, CRS, HS.
    pub fn argmax(&self) -> PatternLabel {
        let mut best = 0;
        for i in 1..4 {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        PatternLabel::EVENTS[best]
    }

    pub fn confidence(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }
}

impl Serialize for ClassProbabilities {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let map: BTreeMap<&str, f64> = PatternLabel::EVENTS
            .iter()
            .map(|l| (l.as_str(), self.get(*l)))
            .collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ClassProbabilities {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, f64>::deserialize(d)?;
        ClassProbabilities::from_map(&map).map_err(serde::de::Error::custom)
    }
}

/// What a backend sees for one event.
#[derive(Debug, Clone, Copy)]
pub struct ClassifyRequest<'a> {
    /// The whole channel; the event is addressed by `interval`.
    pub clip: &'a AudioClip,
    pub interval: &'a EventInterval,
    /// Frame features of the channel, when already computed.
    pub features: Option<&'a FrameFeatureTrack>,
    pub model_id: &'a str,
}

pub trait Classifier: Send + Sync {
    fn classify(&self, req: &ClassifyRequest<'_>) -> Result<ClassProbabilities>;

    /// Short backend name for manifests.
    fn name(&self) -> &str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Rule,
    Spectral,
    External,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Rule => "rule",
            BackendKind::Spectral => "spectral",
            BackendKind::External => "external",
        })
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rule" => Ok(BackendKind::Rule),
            "spectral" => Ok(BackendKind::Spectral),
            "external" => Ok(BackendKind::External),
            other => Err(Error::Config(format!("unknown backend {other:?}"))),
        }
    }
}

/// Model id per cohort. Unknown cohorts use the combined model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortModelSelector {
    pub healthy: String,
    pub patient: String,
    pub combined: String,
}

impl Default for CohortModelSelector {
    fn default() -> Self {
        Self {
            healthy: "healthy".into(),
            patient: "patient".into(),
            combined: "combined".into(),
        }
    }
}

impl CohortModelSelector {
    pub fn model_for(&self, cohort: Cohort) -> &str {
        match cohort {
            Cohort::Healthy => &self.healthy,
            Cohort::Patient => &self.patient,
            Cohort::Unknown => &self.combined,
        }
    }
}

/// Uses `fallback` whenever `primary` fails to deliver a reply.
pub struct FallbackClassifier<P, F> {
    pub primary: P,
    pub fallback: F,
}

impl<P: Classifier, F: Classifier> Classifier for FallbackClassifier<P, F> {
    fn classify(&self, req: &ClassifyRequest<'_>) -> Result<ClassProbabilities> {
        match self.primary.classify(req) {
            Err(e @ (Error::Transport(_) | Error::Timeout(_) | Error::MalformedReply(_))) => {
                log::warn!("{} failed ({e}); using {}", self.primary.name(), self.fallback.name());
                self.fallback.classify(req)
            }
            other => other,
        }
    }

    fn name(&self) -> &str {
        self.primary.name()
    }
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn classify(&self, req: &ClassifyRequest<'_>) -> Result<ClassProbabilities> {
        (**self).classify(req)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// One classified event.
#[derive(Debug, Clone, Serialize)]
pub struct ClassifiedEvent {
    pub interval: EventInterval,
    pub probs: ClassProbabilities,
}

#[derive(Debug, Default)]
pub struct ClassifiedTrack {
    /// Successfully classified events, labelled with confidence.
    pub track: LabelTrack,
    pub events: Vec<ClassifiedEvent>,
    /// Per-event failures, by index into the input events.
    pub failures: Vec<(usize, Error)>,
}

/// Classify every event with the cohort's model. A failing event is
/// reported in `failures` and left out of the track.
pub fn classify_track(
    clip: &AudioClip,
    events: &[EventInterval],
    features: Option<&FrameFeatureTrack>,
    backend: &dyn Classifier,
    selector: &CohortModelSelector,
    cohort: Cohort,
    source: TrackSource,
) -> Result<ClassifiedTrack> {
    let model_id = selector.model_for(cohort);
    let mut out = ClassifiedTrack {
        track: LabelTrack::empty(source),
        ..Default::default()
    };
    let mut segments = Vec::with_capacity(events.len());
    for (i, ev) in events.iter().enumerate() {
        let req = ClassifyRequest {
            clip,
            interval: ev,
            features,
            model_id,
        };
        match backend.classify(&req) {
            Ok(probs) => {
                segments.push(
                    Segment::new(ev.start_s, ev.end_s, probs.argmax()).with_confidence(probs.confidence()),
                );
                out.events.push(ClassifiedEvent { interval: *ev, probs });
            }
            Err(e) => out.failures.push((i, e)),
        }
    }
    out.track = LabelTrack::new(segments, source)?;
    Ok(out)
}
