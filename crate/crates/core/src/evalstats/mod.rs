//! Class distributions, detection agreement, AUROC and expert-adjustment
//! reports, with JSON and CSV export.

pub mod adjustment;
pub mod agreement;
pub mod auroc;
pub mod distribution;
pub mod export;

use crate::error::{Error, Result};
use crate::patterns::{LabelTrack, PatternLabel};

pub use adjustment::{adjustment_report, AdjustmentReport, AdjustmentRow};
pub use agreement::{agreement, agreement_with, AgreementConfig, AgreementReport, ConfusionMatrix};
pub use auroc::{auroc, binary_auroc, AurocReport, ClassAuroc};
pub use distribution::{
    distribution, distribution_pooled, duration_histogram, DistributionReport, DurationStats, HistogramBin,
    LabelDistribution, ReportGroup,
};

/// Report schema version, the `v` field of every serialised report.
pub const REPORT_VERSION: u32 = 1;

/// Default IoU needed for two events to count as the same event.
pub const DEFAULT_IOU_MIN: f64 = 0.3;

/// Allowed difference of two track spans.
pub const SPAN_TOLERANCE_S: f64 = 0.001;

pub(crate) fn to_us(t_s: f64) -> i64 {
    (t_s * 1e6).round() as i64
}

/// Seconds rounded to the millisecond.
pub(crate) fn round_ms(t_s: f64) -> f64 {
    (t_s * 1000.0).round() / 1000.0
}

/// A track covers its recording span only once gap filling has inserted
/// None segments; bare event lists carry no span and are not compared.
pub(crate) fn check_spans(reference: &LabelTrack, candidate: &LabelTrack) -> Result<()> {
    let covered = |t: &LabelTrack| t.segments().iter().any(|s| s.label == PatternLabel::None);
    if covered(reference) && covered(candidate) && (reference.end_s() - candidate.end_s()).abs() > SPAN_TOLERANCE_S {
        return Err(Error::SpanMismatch {
            reference_s: reference.end_s(),
            candidate_s: candidate.end_s(),
        });
    }
    Ok(())
}
