//! Seeded synthetic-sequence generation: a textured target moving over a
//! structured background, optional similar distractors and an occlusion
//! window, with the full dataset layout and a programmatically derived
//! attribute set. Identical seeds produce byte-identical datasets.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::boxes::BoundingBox;
use crate::error::{Error, Result};
use crate::frame::Frame;

use super::dataset::{
    write_annotation_files, AttributeSet, Brightness, SequenceAnnotation, VideoLength,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpeedRegime {
    Generic,
    HighSpeed,
}

impl SpeedRegime {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "generic" => Ok(SpeedRegime::Generic),
            "high-speed" => Ok(SpeedRegime::HighSpeed),
            other => Err(Error::config(format!(
                "unknown regime {other} (expected generic | high-speed)"
            ))),
        }
    }

    fn motion_word(self) -> &'static str {
        match self {
            SpeedRegime::Generic => "slowly",
            SpeedRegime::HighSpeed => "quickly",
        }
    }

    /// Per-frame relative-speed range (displacement over target size).
    fn speed_range(self) -> (f64, f64) {
        match self {
            SpeedRegime::Generic => (0.5, 0.9),
            SpeedRegime::HighSpeed => (2.1, 3.5),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub frame_width: usize,
    pub frame_height: usize,
    /// Mean target size `sqrt(w*h)` in pixels.
    pub target_size: f64,
    pub regime: SpeedRegime,
    pub distractors: usize,
    pub occlusion: bool,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frame_width: 320,
            frame_height: 240,
            target_size: 14.0,
            regime: SpeedRegime::Generic,
            distractors: 2,
            occlusion: false,
            frames: 40,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_width < 32 || self.frame_height < 32 {
            return Err(Error::config("frame size must be at least 32x32"));
        }
        if self.frames < 2 {
            return Err(Error::config("a sequence needs at least 2 frames"));
        }
        if self.occlusion && self.frames < 10 {
            return Err(Error::config(
                "occlusion schedules need at least 10 frames",
            ));
        }
        if self.target_size < 3.0 {
            return Err(Error::config("target size must be at least 3 px"));
        }
        let max_side = self.frame_width.min(self.frame_height) as f64;
        if self.target_size * 3.0 > max_side {
            return Err(Error::config(format!(
                "target size {} too large for {}x{} frames",
                self.target_size, self.frame_width, self.frame_height
            )));
        }
        Ok(())
    }
}

const COLORS: [(&str, [f64; 3]); 8] = [
    ("red", [0.85, 0.15, 0.12]),
    ("green", [0.15, 0.75, 0.20]),
    ("blue", [0.15, 0.25, 0.85]),
    ("yellow", [0.90, 0.85, 0.15]),
    ("magenta", [0.85, 0.15, 0.80]),
    ("cyan", [0.15, 0.80, 0.85]),
    ("orange", [0.95, 0.55, 0.10]),
    ("white", [0.95, 0.95, 0.95]),
];

/// Perceptually closest palette entry, used for distractor coloring.
const NEIGHBOR_COLOR: [usize; 8] = [6, 5, 5, 6, 0, 2, 3, 3];

const SHAPES: [&str; 3] = ["square", "disc", "triangle"];
const BACKGROUNDS: [&str; 4] = ["plain field", "cloudy field", "striped field", "mottled field"];

#[derive(Clone, Copy)]
struct Body {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    vx: f64,
    vy: f64,
    color: [f64; 3],
    shape: usize,
}

impl Body {
    fn bounds(&self) -> BoundingBox {
        BoundingBox {
            x: self.cx - self.w / 2.0,
            y: self.cy - self.h / 2.0,
            w: self.w,
            h: self.h,
        }
    }

    fn advance(&mut self, width: f64, height: f64, rng: &mut ChaCha8Rng) {
        let turn: f64 = rng.random_range(-0.25..0.25);
        let (sin, cos) = turn.sin_cos();
        let (vx, vy) = (self.vx, self.vy);
        self.vx = vx * cos - vy * sin;
        self.vy = vx * sin + vy * cos;
        self.cx += self.vx;
        self.cy += self.vy;
        // Reflect off margins so the body stays fully inside the frame.
        let mx = self.w / 2.0 + 1.0;
        let my = self.h / 2.0 + 1.0;
        if self.cx < mx {
            self.cx = 2.0 * mx - self.cx;
            self.vx = -self.vx;
        }
        if self.cx > width - mx {
            self.cx = 2.0 * (width - mx) - self.cx;
            self.vx = -self.vx;
        }
        if self.cy < my {
            self.cy = 2.0 * my - self.cy;
            self.vy = -self.vy;
        }
        if self.cy > height - my {
            self.cy = 2.0 * (height - my) - self.cy;
            self.vy = -self.vy;
        }
    }

    fn stamp(&self, frame: &mut Frame) {
        let b = self.bounds();
        let x0 = b.x.floor().max(0.0) as usize;
        let y0 = b.y.floor().max(0.0) as usize;
        let x1 = (b.right().ceil() as usize).min(frame.width);
        let y1 = (b.bottom().ceil() as usize).min(frame.height);
        for y in y0..y1 {
            for x in x0..x1 {
                let fx = (x as f64 + 0.5 - self.cx) / (self.w / 2.0);
                let fy = (y as f64 + 0.5 - self.cy) / (self.h / 2.0);
                let inside = match self.shape {
                    0 => fx.abs() <= 1.0 && fy.abs() <= 1.0,
                    1 => fx * fx + fy * fy <= 1.0,
                    // Upward triangle inscribed in the box.
                    _ => fy <= 1.0 && fy >= -1.0 && fx.abs() <= (fy + 1.0) / 2.0,
                };
                if inside {
                    // Checker texture keeps the interior non-uniform.
                    let checker = if (x / 2 + y / 2) % 2 == 0 { 1.0 } else { 0.82 };
                    let px = [
                        self.color[0] * checker,
                        self.color[1] * checker,
                        self.color[2] * checker,
                    ];
                    frame.set_pixel(x, y, px);
                }
            }
        }
    }
}

fn render_background(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Frame, usize) {
    let lum: f64 = rng.random_range(0.15..0.85);
    let tint = [
        (lum + rng.random_range(-0.06..0.06)).clamp(0.02, 0.98),
        (lum + rng.random_range(-0.06..0.06)).clamp(0.02, 0.98),
        (lum + rng.random_range(-0.06..0.06)).clamp(0.02, 0.98),
    ];
    let style = rng.random_range(0..BACKGROUNDS.len());
    let mut frame = Frame::filled(cfg.frame_width, cfg.frame_height, tint);
    match style {
        0 => {}
        1 => {
            // Soft blobs.
            for _ in 0..6 {
                let bx = rng.random_range(0.0..cfg.frame_width as f64);
                let by = rng.random_range(0.0..cfg.frame_height as f64);
                let r = rng.random_range(12.0..40.0);
                let shade = rng.random_range(-0.10..0.10);
                let x0 = ((bx - r).max(0.0)) as usize;
                let x1 = ((bx + r).min(cfg.frame_width as f64)) as usize;
                let y0 = ((by - r).max(0.0)) as usize;
                let y1 = ((by + r).min(cfg.frame_height as f64)) as usize;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let d2 = ((x as f64 - bx).powi(2) + (y as f64 - by).powi(2)) / (r * r);
                        if d2 <= 1.0 {
                            let p = frame.pixel(x, y);
                            let f = shade * (1.0 - d2);
                            frame.set_pixel(
                                x,
                                y,
                                [
                                    (p[0] + f).clamp(0.0, 1.0),
                                    (p[1] + f).clamp(0.0, 1.0),
                                    (p[2] + f).clamp(0.0, 1.0),
                                ],
                            );
                        }
                    }
                }
            }
        }
        2 => {
            let period = rng.random_range(12..28);
            let shade = rng.random_range(0.04..0.10);
            for y in 0..cfg.frame_height {
                let f = if (y / period) % 2 == 0 { shade } else { -shade };
                for x in 0..cfg.frame_width {
                    let p = frame.pixel(x, y);
                    frame.set_pixel(
                        x,
                        y,
                        [
                            (p[0] + f).clamp(0.0, 1.0),
                            (p[1] + f).clamp(0.0, 1.0),
                            (p[2] + f).clamp(0.0, 1.0),
                        ],
                    );
                }
            }
        }
        _ => {
            for y in 0..cfg.frame_height {
                for x in 0..cfg.frame_width {
                    let n = ((x * 7919 + y * 104729) % 97) as f64 / 97.0;
                    let f = (n - 0.5) * 0.08;
                    let p = frame.pixel(x, y);
                    frame.set_pixel(
                        x,
                        y,
                        [
                            (p[0] + f).clamp(0.0, 1.0),
                            (p[1] + f).clamp(0.0, 1.0),
                            (p[2] + f).clamp(0.0, 1.0),
                        ],
                    );
                }
            }
        }
    }
    (frame, style)
}

fn spawn_body(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    color: [f64; 3],
    shape: usize,
    size: f64,
) -> Body {
    let aspect: f64 = rng.random_range(0.8..1.25);
    let w = size * aspect.sqrt();
    let h = size / aspect.sqrt();
    let (lo, hi) = cfg.regime.speed_range();
    let speed = rng.random_range(lo..hi) * size;
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    Body {
        cx: rng.random_range(w..cfg.frame_width as f64 - w),
        cy: rng.random_range(h..cfg.frame_height as f64 - h),
        w,
        h,
        vx: speed * theta.cos(),
        vy: speed * theta.sin(),
        color,
        shape,
    }
}

/// Generate one sequence directory; returns its annotation.
pub fn generate_sequence(
    dir: &Path,
    id: &str,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SequenceAnnotation> {
    cfg.validate()?;
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir)
        .map_err(|e| Error::dataset(&frames_dir, format!("cannot create: {e}")))?;

    let (background, style) = render_background(cfg, rng);
    let color_idx = rng.random_range(0..COLORS.len());
    let shape_idx = rng.random_range(0..SHAPES.len());
    let size = cfg.target_size * rng.random_range(0.85..1.15);
    let mut target = spawn_body(cfg, rng, COLORS[color_idx].1, shape_idx, size);

    let mut distractors = Vec::with_capacity(cfg.distractors);
    for _ in 0..cfg.distractors {
        // Similar but distinguishable: same shape in the nearest other
        // color, or the same color in another shape.
        let (color, shape) = if rng.random_range(0..2) == 0 {
            (COLORS[NEIGHBOR_COLOR[color_idx]].1, shape_idx)
        } else {
            let mut s = rng.random_range(0..SHAPES.len());
            if s == shape_idx {
                s = (s + 1) % SHAPES.len();
            }
            (COLORS[color_idx].1, s)
        };
        let dsize = cfg.target_size * rng.random_range(0.85..1.15);
        distractors.push(spawn_body(cfg, rng, color, shape, dsize));
    }

    // Occlusion window over the middle tenth of the sequence; at least
    // one fully covered frame between the two partial edges.
    let occ_start = cfg.frames * 45 / 100;
    let occ_end = (cfg.frames * 55 / 100).max(occ_start + 3);
    let occluder_color = [0.05, 0.05, 0.08];
    let flicker = cfg.occlusion && rng.random_range(0..2) == 0;

    let mut boxes = Vec::with_capacity(cfg.frames);
    let mut absent = Vec::with_capacity(cfg.frames);
    let mut brightness_sum = 0.0;
    let mut frame_paths = Vec::with_capacity(cfg.frames);
    let mut any_partial = false;
    let mut any_full = false;

    for t in 0..cfg.frames {
        let mut frame = background.clone();
        for d in &mut distractors {
            d.advance(cfg.frame_width as f64, cfg.frame_height as f64, rng);
            d.stamp(&mut frame);
        }
        if t > 0 {
            target.advance(cfg.frame_width as f64, cfg.frame_height as f64, rng);
        }
        target.stamp(&mut frame);

        let mut is_absent = false;
        if cfg.occlusion && t >= occ_start && t < occ_end {
            // Full cover in the window interior, half cover at its edges.
            let edge = t == occ_start || t + 1 == occ_end;
            let b = target.bounds();
            let (ow, oh) = (b.w * 1.6, b.h * 1.6);
            let ox = if edge { b.x + b.w * 0.5 } else { b.x - b.w * 0.3 };
            let oy = b.y - b.h * 0.3;
            let x0 = ox.max(0.0) as usize;
            let y0 = oy.max(0.0) as usize;
            let x1 = ((ox + ow).min(cfg.frame_width as f64)) as usize;
            let y1 = ((oy + oh).min(cfg.frame_height as f64)) as usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    frame.set_pixel(x, y, occluder_color);
                }
            }
            if edge {
                any_partial = true;
            } else {
                any_full = true;
                is_absent = true;
            }
        }
        if flicker {
            let f = 1.0 + 0.1 * (t as f64 * 0.7).sin();
            for v in &mut frame.rgb {
                *v = (*v * f).clamp(0.0, 1.0);
            }
        }

        let path = frames_dir.join(format!("{t:06}.png"));
        frame.save_png(&path)?;
        brightness_sum += frame.mean_brightness();
        frame_paths.push(path);
        boxes.push(target.bounds());
        absent.push(is_absent);
    }

    // Derived attributes.
    let mut displacement_sum = 0.0;
    let mut displacement_n = 0usize;
    for t in 1..cfg.frames {
        if !absent[t] && !absent[t - 1] {
            let (ax, ay) = boxes[t - 1].center();
            let (bx, by) = boxes[t].center();
            displacement_sum += ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
            displacement_n += 1;
        }
    }
    let mean_size = boxes.iter().map(|b| b.size()).sum::<f64>() / cfg.frames as f64;
    let fast_motion =
        displacement_n > 0 && displacement_sum / displacement_n as f64 > mean_size;
    let first_area = boxes[0].area();
    let first_aspect = boxes[0].w / boxes[0].h;
    let scale_variation = boxes.iter().any(|b| {
        let r = b.area() / first_area;
        !(0.5..=2.0).contains(&r)
    });
    let aspect_ratio_variation = boxes.iter().any(|b| {
        let r = (b.w / b.h) / first_aspect;
        !(0.5..=2.0).contains(&r)
    });

    let attributes = AttributeSet {
        partial_occlusion: any_partial,
        full_occlusion: any_full,
        similar_distractor: cfg.distractors > 0,
        illumination_variation: flicker,
        brightness: Brightness::from_mean(brightness_sum / cfg.frames as f64),
        fast_motion,
        scale_variation,
        aspect_ratio_variation,
        length: VideoLength::from_frames(cfg.frames),
        ..AttributeSet::none()
    };

    let description = format!(
        "the {} {} moving {} across the {}",
        COLORS[color_idx].0,
        SHAPES[shape_idx],
        cfg.regime.motion_word(),
        BACKGROUNDS[style],
    );

    let annotation = SequenceAnnotation {
        id: id.to_string(),
        frames: frame_paths,
        boxes,
        absent,
        timestamps: (0..cfg.frames).map(|t| t as f64).collect(),
        description,
        attributes,
        frame_size: (cfg.frame_width, cfg.frame_height),
    };
    write_annotation_files(dir, &annotation)?;
    Ok(annotation)
}

/// Generate `sequences` sequences under `root`; returns their ids.
pub fn generate_synthetic(
    root: &Path,
    cfg: &SynthConfig,
    sequences: usize,
) -> Result<Vec<String>> {
    cfg.validate()?;
    if sequences == 0 {
        return Err(Error::config("need at least one sequence"));
    }
    std::fs::create_dir_all(root)
        .map_err(|e| Error::dataset(root, format!("cannot create: {e}")))?;
    let mut ids = Vec::with_capacity(sequences);
    for i in 0..sequences {
        let id = format!("seq_{i:03}");
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        generate_sequence(&root.join(&id), &id, cfg, &mut rng)?;
        ids.push(id);
    }
    Ok(ids)
}
