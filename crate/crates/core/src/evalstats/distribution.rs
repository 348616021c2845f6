//! Per-label counts and duration statistics.

use serde::{Deserialize, Serialize};

use super::{round_ms, REPORT_VERSION};
use crate::patterns::{LabelTrack, PatternLabel, TrackSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportGroup {
    Original,
    Predicted,
    Auto,
    ExpertAdjusted,
}

impl From<TrackSource> for ReportGroup {
    fn from(s: TrackSource) -> Self {
        match s {
            TrackSource::Manual => ReportGroup::Original,
            TrackSource::Predicted => ReportGroup::Predicted,
            TrackSource::Auto => ReportGroup::Auto,
            TrackSource::ExpertAdjusted => ReportGroup::ExpertAdjusted,
        }
    }
}

/// Seconds, rounded to the millisecond. The median is the lower median and
/// p95 the nearest-rank value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    pub max_s: f64,
}

impl DurationStats {
    pub fn from_durations(durations: &[f64]) -> Option<Self> {
        if durations.is_empty() {
            return None;
        }
        let mut d = durations.to_vec();
        d.sort_by(f64::total_cmp);
        let n = d.len();
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Some(Self {
            mean_s: round_ms(d.iter().sum::<f64>() / n as f64),
            median_s: round_ms(d[(n - 1) / 2]),
            p95_s: round_ms(d[rank - 1]),
            max_s: round_ms(d[n - 1]),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub label: PatternLabel,
    pub count: usize,
    /// Fraction of all segments carrying this label.
    pub normalized_count: f64,
    pub duration_stats: Option<DurationStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub v: u32,
    pub group: ReportGroup,
    pub total_segments: usize,
    /// Set when there were no segments; all counts are then zero.
    pub empty: bool,
    /// One row per label, None first.
    pub labels: Vec<LabelDistribution>,
}

impl DistributionReport {
    pub fn row(&self, label: PatternLabel) -> &LabelDistribution {
        self.labels.iter().find(|r| r.label == label).expect("every label has a row")
    }
}

pub fn distribution(track: &LabelTrack) -> DistributionReport {
    distribution_pooled(std::slice::from_ref(track), track.source().into())
}

/// One report over the segments of several tracks, e.g. all recordings of
/// a cohort.
pub fn distribution_pooled(tracks: &[LabelTrack], group: ReportGroup) -> DistributionReport {
    let total: usize = tracks.iter().map(LabelTrack::len).sum();
    let labels = PatternLabel::ALL
        .iter()
        .map(|&label| {
            let durations: Vec<f64> = tracks
                .iter()
                .flat_map(|t| t.segments())
                .filter(|s| s.label == label)
                .map(|s| s.duration_s())
                .collect();
            LabelDistribution {
                label,
                count: durations.len(),
                normalized_count: if total == 0 {
                    0.0
                } else {
                    durations.len() as f64 / total as f64
                },
                duration_stats: DurationStats::from_durations(&durations),
            }
        })
        .collect();
    DistributionReport {
        v: REPORT_VERSION,
        group,
        total_segments: total,
        empty: total == 0,
        labels,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub label: PatternLabel,
    pub start_s: f64,
    pub end_s: f64,
    pub count: usize,
}

/// Duration histogram of one label with bins of `bin_s`, starting at 0 and
/// ending at the bin holding the longest segment.
pub fn duration_histogram(tracks: &[LabelTrack], label: PatternLabel, bin_s: f64) -> Vec<HistogramBin> {
    assert!(bin_s > 0.0, "bin width must be positive");
    let durations: Vec<f64> = tracks
        .iter()
        .flat_map(|t| t.segments())
        .filter(|s| s.label == label)
        .map(|s| s.duration_s())
        .collect();
    let Some(max) = durations.iter().copied().reduce(f64::max) else {
        return Vec::new();
    };
    let n_bins = (max / bin_s).floor() as usize + 1;
    let mut counts = vec![0usize; n_bins];
    for d in durations {
        counts[((d / bin_s).floor() as usize).min(n_bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            label,
            start_s: round_ms(i as f64 * bin_s),
            end_s: round_ms((i + 1) as f64 * bin_s),
            count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::Segment;
    use proptest::prelude::*;

    fn track(labels: &[(PatternLabel, f64)]) -> LabelTrack {
        let mut t = 0.0;
        let segs = labels
            .iter()
            .map(|&(l, d)| {
                let s = Segment::new(t, t + d, l);
                t += d;
                s
            })
            .collect();
        LabelTrack::new(segs, TrackSource::Manual).unwrap()
    }

    #[test]
    fn single_segment_takes_everything() {
        let r = distribution(&track(&[(PatternLabel::MB, 0.5)]));
        assert_eq!(r.row(PatternLabel::MB).normalized_count, 1.0);
        assert_eq!(r.row(PatternLabel::SB).count, 0);
        assert!(r.row(PatternLabel::SB).duration_stats.is_none());
        assert_eq!(r.group, ReportGroup::Original);
    }

    #[test]
    fn equal_durations() {
        let r = distribution(&track(&[(PatternLabel::SB, 0.1); 7]));
        let d = r.row(PatternLabel::SB).duration_stats.unwrap();
        assert_eq!((d.mean_s, d.median_s, d.p95_s, d.max_s), (0.1, 0.1, 0.1, 0.1));
    }

    #[test]
    fn empty_is_flagged() {
        let r = distribution(&LabelTrack::empty(TrackSource::Auto));
        assert!(r.empty);
        assert!(r.labels.iter().all(|l| l.count == 0 && l.normalized_count == 0.0));
    }

    #[test]
    fn percentile_ranks() {
        let d: Vec<f64> = (1..=20).map(|i| i as f64 / 100.0).collect();
        let s = DurationStats::from_durations(&d).unwrap();
        assert_eq!(s.p95_s, 0.19);
        assert_eq!(s.median_s, 0.10);
        assert_eq!(s.max_s, 0.2);
        assert_eq!(s.mean_s, 0.105);
    }

    #[test]
    fn histogram_bins() {
        let t = track(&[(PatternLabel::SB, 0.01), (PatternLabel::SB, 0.015), (PatternLabel::SB, 0.025)]);
        let h = duration_histogram(&[t], PatternLabel::SB, 0.01);
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), vec![0, 2, 1]);
        assert_eq!(h[2].start_s, 0.02);
    }

    fn any_label() -> impl Strategy<Value = PatternLabel> {
        prop::sample::select(PatternLabel::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn counts_sum_to_one_and_grow(
            segs in prop::collection::vec((any_label(), 0.001f64..2.0), 1..60),
            extra in any_label(),
        ) {
            let r = distribution(&track(&segs));
            let sum: f64 = r.labels.iter().map(|l| l.normalized_count).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            let mut more = segs.clone();
            more.push((extra, 0.05));
            let r2 = distribution(&track(&more));
            if r.row(extra).normalized_count < 1.0 {
                prop_assert!(r2.row(extra).normalized_count > r.row(extra).normalized_count);
            }
        }
    }
}
