//! Event-level agreement between a reference and a candidate track.

use serde::{Deserialize, Serialize};

use super::{check_spans, to_us, DEFAULT_IOU_MIN, REPORT_VERSION};
use crate::error::{Error, Result};
use crate::patterns::{interval_iou, LabelTrack, PatternLabel, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgreementConfig {
    pub iou_min: f64,
}

impl Default for AgreementConfig {
    fn default() -> Self {
        Self {
            iou_min: DEFAULT_IOU_MIN,
        }
    }
}

/// Counts over matched events; rows are reference labels, columns
/// candidate labels, both in SB, MB, CRS, HS order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: [PatternLabel; 4],
    pub counts: [[usize; 4]; 4],
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        Self {
            labels: PatternLabel::EVENTS,
            counts: [[0; 4]; 4],
        }
    }
}

impl ConfusionMatrix {
    pub fn is_diagonal(&self) -> bool {
        (0..4).all(|i| (0..4).all(|j| i == j || self.counts[i][j] == 0))
    }

    pub fn transposed(&self) -> Self {
        let mut t = Self::default();
        for i in 0..4 {
            for j in 0..4 {
                t.counts[j][i] = self.counts[i][j];
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    /// Index among the reference events (None segments skipped).
    pub reference: usize,
    pub candidate: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub v: u32,
    pub iou_min: f64,
    pub reference_count: usize,
    pub candidate_count: usize,
    pub matched_events: usize,
    pub missed: usize,
    pub spurious: usize,
    /// Mean absolute onset and offset error over matched pairs.
    pub boundary_mae_ms: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub prevalence_order_preserved: bool,
    pub reference_order: Vec<PatternLabel>,
    pub candidate_order: Vec<PatternLabel>,
    pub pairs: Vec<MatchedPair>,
}

impl AgreementReport {
    pub fn recall(&self) -> Option<f64> {
        (self.reference_count > 0).then(|| self.matched_events as f64 / self.reference_count as f64)
    }

    pub fn precision(&self) -> Option<f64> {
        (self.candidate_count > 0).then(|| self.matched_events as f64 / self.candidate_count as f64)
    }
}

/// Event labels from most to least frequent; equal counts keep the
/// SB, MB, CRS, HS order.
pub fn prevalence_order(events: &[&Segment]) -> Vec<PatternLabel> {
    let mut counted: Vec<(PatternLabel, usize)> = PatternLabel::EVENTS
        .iter()
        .map(|&l| (l, events.iter().filter(|s| s.label == l).count()))
        .collect();
    counted.sort_by(|a, b| b.1.cmp(&a.1));
    counted.into_iter().map(|(l, _)| l).collect()
}

fn key(s: &Segment) -> (i64, i64, usize) {
    (to_us(s.start_s), to_us(s.end_s), s.label.event_index().unwrap_or(4))
}

/// Greedy one-to-one matching by descending IoU. Ties are broken by a key
/// that does not depend on argument order, so swapping the tracks swaps
/// the pairs.
pub fn match_events(reference: &[&Segment], candidate: &[&Segment], iou_min: f64) -> Vec<MatchedPair> {
    let mut edges = Vec::new();
    let mut j0 = 0;
    for (i, r) in reference.iter().enumerate() {
        while j0 < candidate.len() && candidate[j0].end_s <= r.start_s {
            j0 += 1;
        }
        for (j, c) in candidate.iter().enumerate().skip(j0) {
            if c.start_s >= r.end_s {
                break;
            }
            let iou = interval_iou(r.start_s, r.end_s, c.start_s, c.end_s);
            if iou >= iou_min {
                let (ka, kb) = (key(r), key(c));
                edges.push((iou, ka.min(kb), ka.max(kb), i, j));
            }
        }
    }
    edges.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_r = vec![false; reference.len()];
    let mut used_c = vec![false; candidate.len()];
    let mut pairs = Vec::new();
    for (iou, _, _, i, j) in edges {
        if !used_r[i] && !used_c[j] {
            used_r[i] = true;
            used_c[j] = true;
            pairs.push(MatchedPair {
                reference: i,
                candidate: j,
                iou,
            });
        }
    }
    pairs.sort_by_key(|p| p.reference);
    pairs
}

pub fn agreement(reference: &LabelTrack, candidate: &LabelTrack) -> Result<AgreementReport> {
    agreement_with(reference, candidate, &AgreementConfig::default())
}

pub fn agreement_with(reference: &LabelTrack, candidate: &LabelTrack, cfg: &AgreementConfig) -> Result<AgreementReport> {
    if !(cfg.iou_min > 0.0 && cfg.iou_min <= 1.0) {
        return Err(Error::Config(format!("iou_min {} outside (0, 1]", cfg.iou_min)));
    }
    check_spans(reference, candidate)?;
    let r: Vec<&Segment> = reference.events().collect();
    let c: Vec<&Segment> = candidate.events().collect();
    let pairs = match_events(&r, &c, cfg.iou_min);

    let mut confusion = ConfusionMatrix::default();
    let mut abs_err_us: i64 = 0;
    for p in &pairs {
        let (a, b) = (r[p.reference], c[p.candidate]);
        confusion.counts[a.label.event_index().expect("event")][b.label.event_index().expect("event")] += 1;
        abs_err_us += (to_us(a.start_s) - to_us(b.start_s)).abs() + (to_us(a.end_s) - to_us(b.end_s)).abs();
    }
    let boundary_mae_ms = (!pairs.is_empty()).then(|| abs_err_us as f64 / (2 * pairs.len()) as f64 / 1000.0);
    let reference_order = prevalence_order(&r);
    let candidate_order = prevalence_order(&c);
    Ok(AgreementReport {
        v: REPORT_VERSION,
        iou_min: cfg.iou_min,
        reference_count: r.len(),
        candidate_count: c.len(),
        matched_events: pairs.len(),
        missed: r.len() - pairs.len(),
        spurious: c.len() - pairs.len(),
        boundary_mae_ms,
        confusion,
        prevalence_order_preserved: reference_order == candidate_order,
        reference_order,
        candidate_order,
        pairs,
    })
}
