//! How much an expert changed an automatic annotation.

use serde::{Deserialize, Serialize};

use super::agreement::match_events;
use super::{check_spans, round_ms, to_us, DEFAULT_IOU_MIN, REPORT_VERSION};
use crate::error::Result;
use crate::patterns::{LabelTrack, PatternLabel, Segment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentRow {
    pub label: PatternLabel,
    pub auto_count: usize,
    pub expert_count: usize,
    pub mean_dur_auto_s: Option<f64>,
    pub mean_dur_expert_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentReport {
    pub v: u32,
    /// None, SB, MB, CRS, HS.
    pub rows: Vec<AdjustmentRow>,
    pub auto_events: usize,
    pub removed: usize,
    pub merged: usize,
    /// `(removed + merged) / auto_events`, in percent. None segments are
    /// not events.
    pub pct_removed_or_merged: f64,
    pub review_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_baseline_s: Option<f64>,
    /// Percent of the manual baseline saved by reviewing instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_reduction_pct: Option<f64>,
}

impl AdjustmentReport {
    pub fn row(&self, label: PatternLabel) -> &AdjustmentRow {
        self.rows.iter().find(|r| r.label == label).expect("every label has a row")
    }

    /// Record how long a fully manual annotation took.
    pub fn with_manual_baseline(mut self, baseline_s: f64) -> Self {
        self.manual_baseline_s = Some(baseline_s);
        self.time_reduction_pct = match self.review_time_s {
            Some(t) if baseline_s > 0.0 => Some(100.0 * (1.0 - t / baseline_s)),
            _ => None,
        };
        self
    }
}

fn mean_duration(segs: &[&Segment]) -> Option<f64> {
    (!segs.is_empty()).then(|| round_ms(segs.iter().map(|s| s.duration_s()).sum::<f64>() / segs.len() as f64))
}

/// An auto event is absorbed by an expert event holding at least half of it.
fn absorbed_by<'a>(auto: &Segment, expert: &[&'a Segment]) -> Option<usize> {
    let (a0, a1) = (to_us(auto.start_s), to_us(auto.end_s));
    expert.iter().position(|e| {
        let overlap = (a1.min(to_us(e.end_s)) - a0.max(to_us(e.start_s))).max(0);
        2 * overlap >= a1 - a0
    })
}

/// Per-label counts and mean durations of both tracks, and the share of
/// auto events the expert removed or merged.
///
/// An expert event absorbing `k >= 2` auto events counts `k - 1` merges.
/// Any other auto event without an expert counterpart at IoU 0.3 counts as
/// removed.
pub fn adjustment_report(auto: &LabelTrack, expert: &LabelTrack, review_time_s: Option<f64>) -> Result<AdjustmentReport> {
    check_spans(auto, expert)?;
    let rows = PatternLabel::ALL
        .iter()
        .map(|&label| {
            let a: Vec<&Segment> = auto.segments().iter().filter(|s| s.label == label).collect();
            let e: Vec<&Segment> = expert.segments().iter().filter(|s| s.label == label).collect();
            AdjustmentRow {
                label,
                auto_count: a.len(),
                expert_count: e.len(),
                mean_dur_auto_s: mean_duration(&a),
                mean_dur_expert_s: mean_duration(&e),
            }
        })
        .collect();

    let a: Vec<&Segment> = auto.events().collect();
    let e: Vec<&Segment> = expert.events().collect();
    let owner: Vec<Option<usize>> = a.iter().map(|s| absorbed_by(s, &e)).collect();
    let mut absorbed = vec![0usize; e.len()];
    for k in owner.iter().flatten() {
        absorbed[*k] += 1;
    }
    let merged: usize = absorbed.iter().map(|&k| k.saturating_sub(1)).sum();
    let mut matched = vec![false; a.len()];
    for p in match_events(&a, &e, DEFAULT_IOU_MIN) {
        matched[p.reference] = true;
    }
    let removed = (0..a.len())
        .filter(|&i| !matched[i] && !owner[i].is_some_and(|k| absorbed[k] >= 2))
        .count();
    let pct = if a.is_empty() {
        0.0
    } else {
        100.0 * (removed + merged) as f64 / a.len() as f64
    };
    Ok(AdjustmentReport {
        v: REPORT_VERSION,
        rows,
        auto_events: a.len(),
        removed,
        merged,
        pct_removed_or_merged: pct,
        review_time_s,
        manual_baseline_s: None,
        time_reduction_pct: None,
    })
}
