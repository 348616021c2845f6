//! Review sessions: a frozen automatic track, an append-only edit log and
//! the working track the log folds to.
//!
//! Segments are addressed by their index in the working track at the
//! session's current revision. Every edit carries the revision it was made
//! against, so an index can never refer to a segment the client has not
//! seen.

use serde::{Deserialize, Serialize};

use bsannot_core::evalstats::{adjustment_report, AdjustmentReport};
use bsannot_core::patterns::{LabelTrack, PatternLabel, Segment, TrackSource};
use bsannot_core::ChannelId;

use crate::error::{ReviewError, ReviewResult};

pub const SESSION_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Edit {
    Relabel {
        segment: usize,
        label: PatternLabel,
    },
    /// Either boundary may be left as it is.
    MoveBoundary {
        segment: usize,
        #[serde(default)]
        start_s: Option<f64>,
        #[serde(default)]
        end_s: Option<f64>,
    },
    Split {
        segment: usize,
        at_s: f64,
    },
    /// Join `segment` and the next segment into one spanning both. The
    /// result takes `label`, or the first segment's label.
    Merge {
        segment: usize,
        #[serde(default)]
        label: Option<PatternLabel>,
    },
    Delete {
        segment: usize,
    },
    Insert {
        start_s: f64,
        end_s: f64,
        label: PatternLabel,
    },
}

impl Edit {
    pub fn op(&self) -> &'static str {
        match self {
            Edit::Relabel { .. } => "relabel",
            Edit::MoveBoundary { .. } => "move-boundary",
            Edit::Split { .. } => "split",
            Edit::Merge { .. } => "merge",
            Edit::Delete { .. } => "delete",
            Edit::Insert { .. } => "insert",
        }
    }

    /// The track after this edit, or why it cannot be applied.
    pub fn apply(&self, track: &LabelTrack) -> ReviewResult<LabelTrack> {
        let mut segs = track.segments().to_vec();
        let get = |i: usize| -> ReviewResult<Segment> {
            segs.get(i).copied().ok_or(ReviewError::UnknownSegment(i))
        };
        match *self {
            Edit::Relabel { segment, label } => {
                let mut s = get(segment)?;
                s.label = label;
                s.confidence = None;
                segs[segment] = s;
            }
            Edit::MoveBoundary { segment, start_s, end_s } => {
                let mut s = get(segment)?;
                if start_s.is_none() && end_s.is_none() {
                    return Err(ReviewError::InvalidEdit("move-boundary needs start_s or end_s".into()));
                }
                s.start_s = start_s.unwrap_or(s.start_s);
                s.end_s = end_s.unwrap_or(s.end_s);
                segs[segment] = s;
            }
            Edit::Split { segment, at_s } => {
                let s = get(segment)?;
                if !(at_s > s.start_s && at_s < s.end_s) {
                    return Err(ReviewError::InvalidEdit(format!(
                        "split point {at_s} outside segment [{}, {}]",
                        s.start_s, s.end_s
                    )));
                }
                segs[segment] = Segment { end_s: at_s, ..s };
                segs.insert(segment + 1, Segment { start_s: at_s, ..s });
            }
            Edit::Merge { segment, label } => {
                let a = get(segment)?;
                let b = get(segment + 1)?;
                let confidence = match (a.confidence, b.confidence) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    _ => None,
                };
                segs[segment] = Segment {
                    start_s: a.start_s,
                    end_s: b.end_s,
                    label: label.unwrap_or(a.label),
                    confidence,
                };
                segs.remove(segment + 1);
            }
            Edit::Delete { segment } => {
                get(segment)?;
                segs.remove(segment);
            }
            Edit::Insert { start_s, end_s, label } => segs.push(Segment::new(start_s, end_s, label)),
        }
        LabelTrack::new(segs, TrackSource::ExpertAdjusted).map_err(|e| ReviewError::InvalidEdit(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub op: String,
    /// Unix time, milliseconds.
    pub timestamp_ms: u64,
    /// Revision the edit produced.
    pub revision: u64,
    pub payload: Edit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSession {
    pub v: u32,
    pub id: String,
    pub recording: String,
    pub quadrant: ChannelId,
    /// Length of the channel, seconds.
    pub duration_s: f64,
    pub auto_track: LabelTrack,
    pub working_track: LabelTrack,
    pub edit_log: Vec<EditRecord>,
    pub revision: u64,
    pub started_at_ms: u64,
    pub finished_at_ms: Option<u64>,
    #[serde(default)]
    pub report: Option<AdjustmentReport>,
}

impl ReviewSession {
    pub fn new(id: String, recording: String, quadrant: ChannelId, duration_s: f64, auto_track: LabelTrack, now_ms: u64) -> Self {
        let auto_track = auto_track.with_source(TrackSource::Auto);
        Self {
            v: SESSION_VERSION,
            id,
            recording,
            quadrant,
            duration_s,
            working_track: auto_track.clone().with_source(TrackSource::ExpertAdjusted),
            auto_track,
            edit_log: Vec::new(),
            revision: 0,
            started_at_ms: now_ms,
            finished_at_ms: None,
            report: None,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.finished_at_ms.is_some()
    }

    /// Apply `edit` made against `revision`. A rejected edit leaves the
    /// session untouched.
    pub fn apply_edit(&mut self, revision: u64, edit: Edit, now_ms: u64) -> ReviewResult<()> {
        if self.is_finished() {
            return Err(ReviewError::AlreadyFinished);
        }
        if revision != self.revision {
            return Err(ReviewError::StaleRevision {
                current: self.revision,
                given: revision,
            });
        }
        let next = edit.apply(&self.working_track)?;
        if let Some(s) = next.segments().last().filter(|s| s.end_s > self.duration_s + 1e-9) {
            return Err(ReviewError::InvalidEdit(format!(
                "segment ends at {} past the recording end {}",
                s.end_s, self.duration_s
            )));
        }
        self.working_track = next;
        self.revision += 1;
        self.edit_log.push(EditRecord {
            op: edit.op().to_string(),
            timestamp_ms: now_ms,
            revision: self.revision,
            payload: edit,
        });
        Ok(())
    }

    /// Fold the edit log over the automatic track.
    pub fn replay(&self) -> ReviewResult<LabelTrack> {
        let start = self.auto_track.clone().with_source(TrackSource::ExpertAdjusted);
        self.edit_log.iter().try_fold(start, |t, r| r.payload.apply(&t))
    }

    pub fn finish(&mut self, now_ms: u64) -> ReviewResult<AdjustmentReport> {
        if self.is_finished() {
            return Err(ReviewError::AlreadyFinished);
        }
        let review_time_s = now_ms.saturating_sub(self.started_at_ms) as f64 / 1000.0;
        let report = adjustment_report(&self.auto_track, &self.working_track, Some(review_time_s))?;
        self.finished_at_ms = Some(now_ms);
        self.report = Some(report.clone());
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use PatternLabel::{MB, SB};

    fn session() -> ReviewSession {
        let auto = LabelTrack::new(
            vec![
                Segment::new(1.0, 1.02, SB),
                Segment::new(1.03, 1.05, SB),
                Segment::new(2.0, 2.5, MB),
            ],
            TrackSource::Auto,
        )
        .unwrap();
        ReviewSession::new("s".into(), "rec".into(), ChannelId::Ruq, 5.0, auto, 1_000)
    }

    #[test]
    fn relabel_changes_one_segment() {
        let mut s = session();
        s.apply_edit(0, Edit::Relabel { segment: 0, label: MB }, 1_001).unwrap();
        assert_eq!(s.working_track.segments()[0].label, MB);
        assert_eq!(s.working_track.segments()[1].label, SB);
        assert_eq!((s.edit_log.len(), s.revision), (1, 1));
    }

    #[test]
    fn overlapping_move_is_rejected() {
        let mut s = session();
        let before = s.clone();
        let err = s
            .apply_edit(0, Edit::MoveBoundary { segment: 0, start_s: None, end_s: Some(1.04) }, 1_001)
            .unwrap_err();
        assert!(matches!(err, ReviewError::InvalidEdit(_)));
        assert_eq!(s, before);
    }

    #[test]
    fn split_inside_segment() {
        let mut s = session();
        s.apply_edit(0, Edit::Split { segment: 2, at_s: 2.2 }, 1_001).unwrap();
        let segs = s.working_track.segments();
        assert_eq!(segs.len(), 4);
        assert_eq!((segs[2].end_s, segs[3].start_s), (2.2, 2.2));
        assert_eq!((segs[2].label, segs[3].label), (MB, MB));
        assert!(s.apply_edit(1, Edit::Split { segment: 0, at_s: 3.0 }, 1_002).is_err());
    }

    #[test]
    fn stale_and_unknown() {
        let mut s = session();
        assert!(matches!(
            s.apply_edit(3, Edit::Delete { segment: 0 }, 1),
            Err(ReviewError::StaleRevision { current: 0, given: 3 })
        ));
        assert!(matches!(
            s.apply_edit(0, Edit::Delete { segment: 9 }, 1),
            Err(ReviewError::UnknownSegment(9))
        ));
        assert!(s
            .apply_edit(0, Edit::Insert { start_s: 4.0, end_s: 5.5, label: SB }, 1)
            .is_err());
    }

    #[test]
    fn finish_reports_merge() {
        let mut s = session();
        s.apply_edit(0, Edit::Merge { segment: 0, label: None }, 1_500).unwrap();
        let r = s.finish(31_000).unwrap();
        assert_eq!(r.merged, 1);
        assert_eq!(r.review_time_s, Some(30.0));
        assert!(matches!(s.finish(32_000), Err(ReviewError::AlreadyFinished)));
        assert!(matches!(
            s.apply_edit(1, Edit::Delete { segment: 0 }, 1),
            Err(ReviewError::AlreadyFinished)
        ));
    }

    #[test]
    fn untouched_session_reports_nothing_removed() {
        let mut s = session();
        assert_eq!(s.finish(2_000).unwrap().pct_removed_or_merged, 0.0);
    }

    #[test]
    fn edit_json_shape() {
        let e: Edit = serde_json::from_str(r#"{"op":"move-boundary","segment":2,"end_s":2.4}"#).unwrap();
        assert_eq!(e, Edit::MoveBoundary { segment: 2, start_s: None, end_s: Some(2.4) });
        assert!(serde_json::from_str::<Edit>(r#"{"op":"explode","segment":2}"#).is_err());
    }

    fn any_edit() -> impl Strategy<Value = Edit> {
        let label = prop::sample::select(PatternLabel::ALL.to_vec());
        prop_oneof![
            (0usize..6, label.clone()).prop_map(|(segment, label)| Edit::Relabel { segment, label }),
            (0usize..6, 0.0f64..5.0).prop_map(|(segment, t)| Edit::MoveBoundary { segment, start_s: Some(t), end_s: None }),
            (0usize..6, 0.0f64..5.0).prop_map(|(segment, t)| Edit::MoveBoundary { segment, start_s: None, end_s: Some(t) }),
            (0usize..6, 0.0f64..5.0).prop_map(|(segment, at_s)| Edit::Split { segment, at_s }),
            (0usize..6).prop_map(|segment| Edit::Merge { segment, label: None }),
            (0usize..6).prop_map(|segment| Edit::Delete { segment }),
            (0.0f64..5.0, 0.001f64..0.5, label).prop_map(|(a, d, label)| Edit::Insert { start_s: a, end_s: a + d, label }),
        ]
    }

    proptest! {
        #[test]
        fn log_replays_to_working_track(edits in prop::collection::vec(any_edit(), 0..40)) {
            let mut s = session();
            for (k, e) in edits.into_iter().enumerate() {
                let rev = s.revision;
                let before = s.clone();
                match s.apply_edit(rev, e, 2_000 + k as u64) {
                    Ok(()) => prop_assert_eq!(s.revision, rev + 1),
                    Err(_) => prop_assert_eq!(&s, &before),
                }
                prop_assert_eq!(s.replay().unwrap(), s.working_track.clone());
            }
        }
    }
}
