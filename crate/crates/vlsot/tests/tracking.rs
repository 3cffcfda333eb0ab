//! Integration tests for the online tracking loop: overfit behavior on a
//! stationary target and sequence-level parallelism over a shared frozen
//! model.

use std::path::Path;

use vlsot::boxes::{iou, BoundingBox};
use vlsot::config::FullConfig;
use vlsot::frame::Frame;
use vlsot::model::TrackerModel;
use vlsot::runtime::{track_sequence, train_run, TrainConfig, TrainSequence};
use vlsot::tensor::ParamSet;

const TINY_CONFIG: &str = "\
search_size = 64\ntemplate_size = 32\nchannels = 32\nencoder_repeats = 1\n\
encoder_heads = 4\ndecoder_heads = 4\nffn_hidden = 64\npost_conv_kernel = 3\n\
post_crop_side = 6\nvocab_size = 256\nlang_width = 32\nlang_layers = 1\n\
lang_heads = 2\nlang_tokens = 12\nlang_ffn_hidden = 64\nfusion_width = 32\n\
fusion_layers = 2\nfusion_heads = 4\nfusion_ffn = 64\nhead_hidden = 32\n\
dropout = 0\nlearning_rate = 0.0005\nweight_decay = 0\n";

/// Render a sequence with a target fixed in place over a plain background.
fn stationary_sequence(dir: &Path, id: &str, cx: usize, color: [f64; 3]) -> TrainSequence {
    let frames_dir = dir.join(id);
    std::fs::create_dir_all(&frames_dir).unwrap();
    let mut frames = Vec::new();
    let mut boxes = Vec::new();
    for t in 0..12 {
        let mut frame = Frame::filled(128, 96, [0.35, 0.4, 0.45]);
        for y in 40..54 {
            for x in cx..cx + 14 {
                let checker = if (x / 2 + y / 2) % 2 == 0 { 1.0 } else { 0.8 };
                frame.set_pixel(x, y, [color[0] * checker, color[1] * checker, color[2] * checker]);
            }
        }
        let path = frames_dir.join(format!("{t:06}.png"));
        frame.save_png(&path).unwrap();
        frames.push(path);
        boxes.push(BoundingBox::new(cx as f64, 40.0, 14.0, 14.0).unwrap());
    }
    TrainSequence {
        id: id.to_string(),
        frames,
        boxes,
        visible: vec![true; 12],
        description: format!("the block at column {cx}"),
    }
}

#[test]
fn stationary_target_overfit_exceeds_point_seven_iou() {
    let tmp = tempfile::tempdir().unwrap();
    let data = vec![
        stationary_sequence(tmp.path(), "left", 30, [0.9, 0.2, 0.1]),
        stationary_sequence(tmp.path(), "right", 80, [0.1, 0.3, 0.9]),
    ];
    let config = FullConfig::from_text(TINY_CONFIG).unwrap();
    let mut params = ParamSet::new();
    let model = TrackerModel::new(&mut params, 2, config.model.clone()).unwrap();
    let train_cfg = TrainConfig {
        epochs: 12,
        pairs_per_epoch: 320,
        batch_size: 4,
        aug_translation: Some(6.0),
        ..config.train.clone()
    };
    train_run(
        &model,
        &mut params,
        &data,
        &train_cfg,
        &config.runtime,
        9,
        |_, _| {},
    )
    .unwrap();

    for seq in &data {
        let loader = seq.frames.iter().map(|p| Frame::load_png(p));
        let preds = track_sequence(
            &model,
            &params,
            config.runtime.clone(),
            seq.boxes[0],
            &seq.description,
            loader,
        )
        .unwrap();
        for (t, pred) in preds.iter().enumerate() {
            let overlap = iou(pred, &seq.boxes[t]);
            assert!(
                overlap > 0.7,
                "{} frame {t}: IoU {overlap:.3} below 0.7",
                seq.id
            );
        }
    }
}

#[test]
fn sequences_track_in_parallel_over_a_shared_frozen_model() {
    let tmp = tempfile::tempdir().unwrap();
    let data = vec![
        stationary_sequence(tmp.path(), "a", 40, [0.9, 0.8, 0.1]),
        stationary_sequence(tmp.path(), "b", 70, [0.2, 0.8, 0.7]),
    ];
    let config = FullConfig::from_text(TINY_CONFIG).unwrap();
    let mut params = ParamSet::new();
    let model = TrackerModel::new(&mut params, 4, config.model.clone()).unwrap();

    // Serial reference.
    let serial: Vec<Vec<BoundingBox>> = data
        .iter()
        .map(|seq| {
            let loader = seq.frames.iter().map(|p| Frame::load_png(p));
            track_sequence(
                &model,
                &params,
                config.runtime.clone(),
                seq.boxes[0],
                &seq.description,
                loader,
            )
            .unwrap()
        })
        .collect();

    // One state per sequence on separate threads, shared read-only model.
    let parallel: Vec<Vec<BoundingBox>> = std::thread::scope(|scope| {
        let handles: Vec<_> = data
            .iter()
            .map(|seq| {
                let model = &model;
                let params = &params;
                let runtime = config.runtime.clone();
                scope.spawn(move || {
                    let loader = seq.frames.iter().map(|p| Frame::load_png(p));
                    track_sequence(model, params, runtime, seq.boxes[0], &seq.description, loader)
                        .unwrap()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    assert_eq!(serial, parallel);
}
