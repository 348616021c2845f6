//! CSV tables for the reports. JSON goes straight through serde.

use std::io::Write;

use serde::Serialize;

use super::{AdjustmentReport, AgreementReport, AurocReport, DistributionReport, HistogramBin};
use crate::error::Result;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

pub fn distribution_csv<W: Write>(reports: &[&DistributionReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "label", "count", "normalized_count", "mean_s", "median_s", "p95_s", "max_s"])?;
    for r in reports {
        let group = serde_json::to_value(r.group)?;
        for row in &r.labels {
            let d = row.duration_stats;
            w.write_record([
                group.as_str().unwrap_or_default().to_string(),
                row.label.to_string(),
                row.count.to_string(),
                format!("{}", row.normalized_count),
                opt(d.map(|d| d.mean_s)),
                opt(d.map(|d| d.median_s)),
                opt(d.map(|d| d.p95_s)),
                opt(d.map(|d| d.max_s)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn adjustment_csv<W: Write>(report: &AdjustmentReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "auto_count", "expert_count", "mean_dur_auto_s", "mean_dur_expert_s"])?;
    for row in &report.rows {
        w.write_record([
            row.label.to_string(),
            row.auto_count.to_string(),
            row.expert_count.to_string(),
            opt(row.mean_dur_auto_s),
            opt(row.mean_dur_expert_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary counts, then the confusion matrix with reference labels as rows.
pub fn agreement_csv<W: Write>(report: &AgreementReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["reference \\ candidate", "SB", "MB", "CRS", "HS"])?;
    for (i, label) in report.confusion.labels.iter().enumerate() {
        let mut rec = vec![label.to_string()];
        rec.extend(report.confusion.counts[i].iter().map(usize::to_string));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn auroc_csv<W: Write>(report: &AurocReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "positives", "negatives", "auroc"])?;
    for c in &report.per_class {
        w.write_record([c.label.to_string(), c.positives.to_string(), c.negatives.to_string(), opt(c.auroc)])?;
    }
    w.write_record(["macro", "", "", &opt(report.macro_auroc)])?;
    w.flush()?;
    Ok(())
}

pub fn histogram_csv<W: Write>(bins: &[HistogramBin], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for b in bins {
        w.serialize(b)?;
    }
    if bins.is_empty() {
        w.write_record(["label", "start_s", "end_s", "count"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}
