//! One-vs-rest AUROC from the Mann–Whitney U statistic.

use serde::{Deserialize, Serialize};

use super::REPORT_VERSION;
use crate::classify::ClassProbabilities;
use crate::error::{Error, Result};
use crate::patterns::PatternLabel;

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Midranks make tied groups exact: with `R` the rank
/// sum of the positives, `U = R - np(np+1)/2`.
pub fn binary_auroc(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    let (np, nn) = (positives.len(), negatives.len());
    if np == 0 || nn == 0 {
        return None;
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the rank sum, so midranks stay integral.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1, midrank (i + j + 2) / 2
        let mid2 = (i + j + 2) as u64;
        let pos = all[i..=j].iter().filter(|e| e.1).count() as u64;
        rank_sum2 += mid2 * pos;
        i = j + 1;
    }
    let (np, nn) = (np as u64, nn as u64);
    let u2 = rank_sum2 - np * (np + 1);
    Some(u2 as f64 / (2 * np * nn) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAuroc {
    pub label: PatternLabel,
    pub positives: usize,
    pub negatives: usize,
    pub auroc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocReport {
    pub v: u32,
    pub per_class: Vec<ClassAuroc>,
    /// Mean over the classes that could be evaluated.
    pub macro_auroc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Per-class one-vs-rest AUROC of `scores` against true `labels`. Classes
/// lacking positives or negatives are skipped with a note.
pub fn auroc(labels: &[PatternLabel], scores: &[ClassProbabilities]) -> Result<AurocReport> {
    if labels.len() != scores.len() {
        return Err(Error::Config(format!(
            "{} labels but {} score vectors",
            labels.len(),
            scores.len()
        )));
    }
    if let Some(l) = labels.iter().find(|l| !l.is_event()) {
        return Err(Error::Config(format!("label {l} cannot be scored")));
    }
    let per_class: Vec<ClassAuroc> = PatternLabel::EVENTS
        .iter()
        .map(|&label| {
            let (mut pos, mut neg) = (Vec::new(), Vec::new());
            for (l, s) in labels.iter().zip(scores) {
                if *l == label { &mut pos } else { &mut neg }.push(s.get(label));
            }
            let auroc = binary_auroc(&pos, &neg);
            ClassAuroc {
                label,
                positives: pos.len(),
                negatives: neg.len(),
                auroc,
                note: auroc.is_none().then(|| {
                    if pos.is_empty() {
                        "no positive examples".to_string()
                    } else {
                        "no negative examples".to_string()
                    }
                }),
            }
        })
        .collect();
    let evaluated: Vec<f64> = per_class.iter().filter_map(|c| c.auroc).collect();
    let macro_auroc = (!evaluated.is_empty()).then(|| evaluated.iter().sum::<f64>() / evaluated.len() as f64);
    Ok(AurocReport {
        v: REPORT_VERSION,
        per_class,
        macro_auroc,
        note: macro_auroc.is_none().then(|| "undefined: fewer than two classes present".to_string()),
    })
}
