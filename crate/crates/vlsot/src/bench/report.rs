//! Aggregated evaluation reports: overall means, per-sequence summaries,
//! per-attribute slices, and the CSV/JSON emission behind the CLI.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::dataset::SequenceAnnotation;
use super::metrics::MetricReport;

/// The five scalar metrics.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auc: f64,
    pub precision: f64,
    pub norm_precision: f64,
    pub cauc: f64,
    pub macc: f64,
}

impl From<&MetricReport> for MetricSummary {
    fn from(r: &MetricReport) -> Self {
        MetricSummary {
            auc: r.auc,
            precision: r.precision,
            norm_precision: r.norm_precision,
            cauc: r.cauc,
            macc: r.macc,
        }
    }
}

impl MetricSummary {
    pub fn mean(items: &[MetricSummary]) -> MetricSummary {
        let n = items.len().max(1) as f64;
        let mut out = MetricSummary::default();
        for s in items {
            out.auc += s.auc;
            out.precision += s.precision;
            out.norm_precision += s.norm_precision;
            out.cauc += s.cauc;
            out.macc += s.macc;
        }
        out.auc /= n;
        out.precision /= n;
        out.norm_precision /= n;
        out.cauc /= n;
        out.macc /= n;
        out
    }
}

/// Metrics over the sequences carrying one attribute value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttributeSlice {
    pub sequences: Vec<String>,
    pub metrics: MetricSummary,
}

/// The eval artifact written to `report.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MetricSummary,
    pub sequences: BTreeMap<String, MetricSummary>,
    pub attributes: BTreeMap<String, AttributeSlice>,
}

/// Group per-sequence reports by attribute slice; slices with no member
/// sequence are omitted.
pub fn attribute_report(
    reports: &BTreeMap<String, MetricReport>,
    annotations: &[SequenceAnnotation],
) -> Result<BTreeMap<String, AttributeSlice>> {
    let mut members: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for annotation in annotations {
        if !reports.contains_key(&annotation.id) {
            continue;
        }
        for label in annotation.attributes.slice_labels() {
            members.entry(label).or_default().push(annotation.id.clone());
        }
    }
    let mut out = BTreeMap::new();
    for (label, ids) in members {
        let summaries: Vec<MetricSummary> = ids
            .iter()
            .map(|id| {
                reports
                    .get(id)
                    .map(MetricSummary::from)
                    .ok_or_else(|| Error::invalid(format!("no report for sequence {id}")))
            })
            .collect::<Result<_>>()?;
        out.insert(
            label,
            AttributeSlice {
                sequences: ids,
                metrics: MetricSummary::mean(&summaries),
            },
        );
    }
    Ok(out)
}

/// Assemble the full report from per-sequence metric reports.
pub fn build_eval_report(
    reports: &BTreeMap<String, MetricReport>,
    annotations: &[SequenceAnnotation],
) -> Result<EvalReport> {
    if reports.is_empty() {
        return Err(Error::invalid("no sequences were evaluated".to_string()));
    }
    let sequences: BTreeMap<String, MetricSummary> = reports
        .iter()
        .map(|(id, r)| (id.clone(), MetricSummary::from(r)))
        .collect();
    let overall = MetricSummary::mean(&sequences.values().copied().collect::<Vec<_>>());
    let attributes = attribute_report(reports, annotations)?;
    Ok(EvalReport {
        overall,
        sequences,
        attributes,
    })
}

fn mean_curve(curves: Vec<&[(f64, f64)]>) -> Vec<(f64, f64)> {
    let n = curves.len() as f64;
    let len = curves[0].len();
    let mut out = vec![(0.0, 0.0); len];
    for curve in &curves {
        for (i, (t, v)) in curve.iter().enumerate() {
            out[i].0 = *t;
            out[i].1 += v / n;
        }
    }
    out
}

fn curve_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("threshold,value\n");
    for (t, v) in curve {
        writeln!(s, "{t},{v}").expect("string write");
    }
    s
}

/// Write dataset-mean success/precision curves as `threshold,value` CSV.
pub fn write_curves(dir: &Path, reports: &BTreeMap<String, MetricReport>) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::invalid("no curves to write".to_string()));
    }
    std::fs::create_dir_all(dir)?;
    let all: Vec<&MetricReport> = reports.values().collect();
    let success = mean_curve(all.iter().map(|r| r.success_curve.as_slice()).collect());
    let precision = mean_curve(all.iter().map(|r| r.precision_curve.as_slice()).collect());
    let norm = mean_curve(
        all.iter()
            .map(|r| r.norm_precision_curve.as_slice())
            .collect(),
    );
    std::fs::write(dir.join("success.csv"), curve_csv(&success))?;
    std::fs::write(dir.join("precision.csv"), curve_csv(&precision))?;
    std::fs::write(dir.join("norm_precision.csv"), curve_csv(&norm))?;
    Ok(())
}

/// Attribute table as CSV (the `report` command's tabular format).
pub fn report_csv(report: &EvalReport, attributes: bool) -> String {
    let mut s = String::from("slice,sequences,auc,precision,norm_precision,cauc,macc\n");
    let row = |s: &mut String, label: &str, count: usize, m: &MetricSummary| {
        writeln!(
            s,
            "{label},{count},{:.6},{:.6},{:.6},{:.6},{:.6}",
            m.auc, m.precision, m.norm_precision, m.cauc, m.macc
        )
        .expect("string write");
    };
    row(&mut s, "overall", report.sequences.len(), &report.overall);
    if attributes {
        for (label, slice) in &report.attributes {
            row(&mut s, label, slice.sequences.len(), &slice.metrics);
        }
    }
    s
}
