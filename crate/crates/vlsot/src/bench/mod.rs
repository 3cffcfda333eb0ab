//! Benchmark toolkit: dataset model and validators, evaluation metrics,
//! attribute reports, and the seeded synthetic-sequence generator.

mod dataset;
mod metrics;
mod report;
mod synth;

pub use dataset::{
    load_dataset, load_predictions, load_sequence, save_predictions, write_annotation_files,
    AttributeSet, Brightness, SequenceAnnotation, VideoLength, ATTRIBUTE_COUNT, ATTRIBUTE_NAMES,
};
pub use metrics::{
    average_relative_speed, compute_metrics, is_small_object, relative_speed, MetricReport,
    SmallObjectDecision, NORM_PRECISION_RANGE, PRECISION_PIXEL_RANGE, PRECISION_REPORT_PIXELS,
    PRECISION_THRESHOLDS, SMALL_ABSOLUTE_SIZE, SMALL_RELATIVE_AREA, SUCCESS_THRESHOLDS,
};
pub use report::{
    attribute_report, build_eval_report, report_csv, write_curves, AttributeSlice, EvalReport,
    MetricSummary,
};
pub use synth::{generate_sequence, generate_synthetic, SpeedRegime, SynthConfig};

use crate::error::Result;
use std::path::Path;

/// Validation findings for one sequence.
#[derive(Debug)]
pub struct SequenceValidation {
    pub id: String,
    pub frames: usize,
    pub small_object: Option<SmallObjectDecision>,
    pub average_relative_speed: Option<f64>,
    pub error: Option<String>,
}

/// Parse and validate a dataset, reporting per-sequence statistics.
/// Malformed sequences are reported, not fatal.
pub fn validate_dataset(root: &Path) -> Result<Vec<SequenceValidation>> {
    let mut dirs: Vec<std::path::PathBuf> = std::fs::read_dir(root)
        .map_err(|e| crate::Error::dataset(root, format!("cannot list dataset: {e}")))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(crate::Error::dataset(root, "no sequence directories found"));
    }
    let mut out = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("?")
            .to_string();
        match load_sequence(&dir) {
            Ok(seq) => out.push(SequenceValidation {
                id: seq.id.clone(),
                frames: seq.len(),
                small_object: is_small_object(&seq, seq.frame_size).ok(),
                average_relative_speed: average_relative_speed(&seq),
                error: None,
            }),
            Err(e) => out.push(SequenceValidation {
                id,
                frames: 0,
                small_object: None,
                average_relative_speed: None,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(out)
}
