//! Temporal refinement of a label track: order, fill long gaps with the
//! non-event label, merge adjacent segments that share a label.
//!
//! Gap comparisons are made on whole microseconds, the resolution of the
//! label file format, so a 100 ms gap written to disk and read back is still
//! exactly 100 ms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patterns::{LabelTrack, PatternLabel, Segment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocConfig {
    /// Gaps strictly longer than this are filled.
    pub gap_fill_min_ms: f64,
    /// Same-label neighbours at most this far apart are merged.
    pub merge_max_gap_ms: f64,
    pub fill_label: PatternLabel,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self {
            gap_fill_min_ms: 100.0,
            merge_max_gap_ms: 0.0,
            fill_label: PatternLabel::None,
        }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_fill_min_ms >= 0.0 && self.gap_fill_min_ms.is_finite()) {
            return Err(Error::Config(format!(
                "gap_fill_min_ms must be >= 0, got {}",
                self.gap_fill_min_ms
            )));
        }
        if !(self.merge_max_gap_ms >= 0.0 && self.merge_max_gap_ms.is_finite()) {
            return Err(Error::Config(format!(
                "merge_max_gap_ms must be >= 0, got {}",
                self.merge_max_gap_ms
            )));
        }
        Ok(())
    }
}

fn us(t_s: f64) -> i64 {
    (t_s * 1e6).round() as i64
}

fn ms_to_us(ms: f64) -> i64 {
    (ms * 1e3).round() as i64
}

/// Sort, fill gaps, merge. The result covers `[0, total_duration_s]` apart
/// from gaps no longer than `gap_fill_min_ms`.
pub fn refine(track: &LabelTrack, total_duration_s: f64, cfg: &PostprocConfig) -> Result<LabelTrack> {
    cfg.validate()?;
    let total_us = us(total_duration_s);
    if let Some(s) = track.segments().iter().find(|s| us(s.end_s) > total_us) {
        return Err(Error::SegmentOutOfSpan {
            start_s: s.start_s,
            end_s: s.end_s,
            total_s: total_duration_s,
        });
    }
    let fill_us = ms_to_us(cfg.gap_fill_min_ms);
    let merge_us = ms_to_us(cfg.merge_max_gap_ms);

    let mut filled: Vec<Segment> = Vec::with_capacity(track.len() * 2 + 1);
    let mut cursor = 0.0;
    for seg in track.segments() {
        if us(seg.start_s) - us(cursor) > fill_us {
            filled.push(Segment::new(cursor, seg.start_s, cfg.fill_label));
        }
        filled.push(*seg);
        cursor = seg.end_s;
    }
    if total_us - us(cursor) > fill_us {
        filled.push(Segment::new(cursor, total_duration_s, cfg.fill_label));
    }

    let mut merged: Vec<Segment> = Vec::with_capacity(filled.len());
    for seg in filled {
        match merged.last_mut() {
            Some(last) if last.label == seg.label && us(seg.start_s) - us(last.end_s) <= merge_us => {
                last.end_s = seg.end_s;
                last.confidence = match (last.confidence, seg.confidence) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    (a, b) => a.or(b),
                };
            }
            _ => merged.push(seg),
        }
    }
    Ok(LabelTrack::new(merged, track.source())?)
}

/// True when refining the refined track changes nothing.
pub fn refine_idempotent_check(track: &LabelTrack, total_duration_s: f64, cfg: &PostprocConfig) -> Result<bool> {
    let once = refine(track, total_duration_s, cfg)?;
    let twice = refine(&once, total_duration_s, cfg)?;
    Ok(once == twice)
}
