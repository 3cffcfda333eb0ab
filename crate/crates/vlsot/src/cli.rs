//! Implementations behind the command-line interface. The binary parses
//! arguments and dispatches here; tests can call these directly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::bench::{
    build_eval_report, compute_metrics, generate_synthetic, load_dataset, load_predictions,
    report_csv, save_predictions, validate_dataset, write_curves, EvalReport,
    SequenceAnnotation, SpeedRegime, SynthConfig,
};
use crate::config::FullConfig;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::model::TrackerModel;
use crate::runtime::{track_sequence, train_run, TrainSequence};
use crate::tensor::{load_checkpoint, save_checkpoint, ParamSet};

pub fn cmd_gen_synthetic(
    out: &Path,
    seed: u64,
    regime: &str,
    sequences: usize,
    frames: usize,
    frame_size: Option<(usize, usize)>,
    distractors: usize,
    occlusion: bool,
) -> Result<()> {
    let mut cfg = SynthConfig {
        regime: SpeedRegime::parse(regime)?,
        seed,
        frames,
        distractors,
        occlusion,
        ..SynthConfig::default()
    };
    if let Some((w, h)) = frame_size {
        cfg.frame_width = w;
        cfg.frame_height = h;
    }
    let ids = generate_synthetic(out, &cfg, sequences)?;
    eprintln!("generated {} sequences under {}", ids.len(), out.display());
    Ok(())
}

pub fn to_train_sequences(seqs: &[SequenceAnnotation]) -> Vec<TrainSequence> {
    seqs.iter()
        .map(|s| TrainSequence {
            id: s.id.clone(),
            frames: s.frames.clone(),
            boxes: s.boxes.clone(),
            visible: s.absent.iter().map(|a| !a).collect(),
            description: s.description.clone(),
        })
        .collect()
}

pub fn cmd_train(data: &Path, config_path: &Path, out: &Path, seed: u64) -> Result<()> {
    let config = FullConfig::load(config_path)?;
    let dataset = load_dataset(data)?;
    let train_data = to_train_sequences(&dataset);
    let mut params = ParamSet::new();
    let model = TrackerModel::new(&mut params, seed, config.model.clone())?;
    eprintln!(
        "training on {} sequences, {} parameters, {} epochs x {} pairs",
        train_data.len(),
        params.scalar_count(),
        config.train.epochs,
        config.train.pairs_per_epoch
    );
    train_run(
        &model,
        &mut params,
        &train_data,
        &config.train,
        &config.runtime,
        seed ^ 0x7261_696e,
        |epoch, stats| {
            eprintln!(
                "epoch {:>4}: total {:.4} (alignment {:.4} reg {:.4} ce {:.4})",
                epoch + 1,
                stats.mean_total,
                stats.mean_alignment,
                stats.mean_reg,
                stats.mean_ce
            );
        },
    )?;
    save_checkpoint(out, &config.to_text(), &params)?;
    eprintln!("saved checkpoint to {}", out.display());
    Ok(())
}

/// Rebuild a model from a checkpoint's embedded configuration.
pub fn load_model(ckpt: &Path) -> Result<(FullConfig, ParamSet, TrackerModel)> {
    let (meta, entries) = load_checkpoint(ckpt)?;
    let config = FullConfig::from_text(&meta)?;
    let mut params = ParamSet::new();
    let model = TrackerModel::new(&mut params, 0, config.model.clone())?;
    params.load_values(&entries)?;
    Ok((config, params, model))
}

pub fn cmd_track(data: &Path, ckpt: &Path, out: &Path, no_language: bool) -> Result<()> {
    let (config, params, model) = load_model(ckpt)?;
    let mut runtime = config.runtime.clone();
    if no_language {
        runtime.use_language = false;
    }
    let dataset = load_dataset(data)?;
    std::fs::create_dir_all(out)?;
    for seq in &dataset {
        let frames = seq.frames.clone();
        let loader = frames.iter().map(|p| Frame::load_png(p));
        let boxes = track_sequence(
            &model,
            &params,
            runtime.clone(),
            seq.boxes[0],
            &seq.description,
            loader,
        )?;
        save_predictions(&out.join(format!("{}.txt", seq.id)), &boxes)?;
        eprintln!("tracked {} ({} frames)", seq.id, boxes.len());
    }
    Ok(())
}

pub fn cmd_eval(data: &Path, pred: &Path, out: &Path, curves: Option<&Path>) -> Result<()> {
    let dataset = load_dataset(data)?;
    let mut reports = BTreeMap::new();
    for seq in &dataset {
        let pred_path = pred.join(format!("{}.txt", seq.id));
        if !pred_path.exists() {
            return Err(Error::dataset(
                &pred_path,
                format!("no predictions for sequence {}", seq.id),
            ));
        }
        let predictions = load_predictions(&pred_path)?;
        reports.insert(seq.id.clone(), compute_metrics(&predictions, seq)?);
    }
    let report = build_eval_report(&reports, &dataset)?;
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(out, json)?;
    if let Some(dir) = curves {
        write_curves(dir, &reports)?;
    }
    eprintln!(
        "AUC {:.4}  P {:.4}  Pnorm {:.4}  cAUC {:.4}  mACC {:.4}  ({} sequences)",
        report.overall.auc,
        report.overall.precision,
        report.overall.norm_precision,
        report.overall.cauc,
        report.overall.macc,
        report.sequences.len()
    );
    Ok(())
}

pub fn cmd_report(input: &Path, attributes: bool, format: &str) -> Result<String> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| Error::dataset(input, format!("cannot read report: {e}")))?;
    let report: EvalReport = serde_json::from_str(&text)?;
    match format {
        "csv" => Ok(report_csv(&report, attributes)),
        "json" => {
            if attributes {
                Ok(serde_json::to_string_pretty(&report.attributes)?)
            } else {
                Ok(serde_json::to_string_pretty(&report.overall)?)
            }
        }
        other => Err(Error::config(format!(
            "unknown format {other} (expected csv | json)"
        ))),
    }
}

pub fn cmd_validate(data: &Path) -> Result<String> {
    let report = validate_dataset(data)?;
    let mut out = String::new();
    use std::fmt::Write as _;
    for seq in &report {
        match &seq.error {
            Some(e) => writeln!(out, "{}: ERROR {e}", seq.id).unwrap(),
            None => {
                let small = seq
                    .small_object
                    .map(|d| {
                        format!(
                            "small={} (abs {:.1} px, rel {:.4}%)",
                            d.small,
                            d.average_absolute_size,
                            d.average_relative_area * 100.0
                        )
                    })
                    .unwrap_or_else(|| "small=n/a".to_string());
                let speed = seq
                    .average_relative_speed
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "n/a".to_string());
                writeln!(
                    out,
                    "{}: {} frames, {small}, avg relative speed {speed}",
                    seq.id, seq.frames
                )
                .unwrap();
            }
        }
    }
    Ok(out)
}

/// Parse a `WxH` frame-size argument.
pub fn parse_frame_size(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::config(format!("frame size must be WxH, got {s:?}")))?;
    Ok((
        w.trim()
            .parse()
            .map_err(|_| Error::config(format!("bad width {w:?}")))?,
        h.trim()
            .parse()
            .map_err(|_| Error::config(format!("bad height {h:?}")))?,
    ))
}

