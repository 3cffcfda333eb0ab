//! Dataset model and on-disk layout:
//!
//! ```text
//! <root>/<sequence>/frames/%06d.png   8-bit RGB, lexicographic order
//!                   groundtruth.txt   x,y,w,h per line, decimal
//!                   absent.txt        0/1 per line
//!                   timestamps.txt    decimal frame time per line
//!                                     (optional; defaults to 0,1,2,...)
//!                   language.txt      single UTF-8 line
//!                   attributes.txt    17 comma-separated values
//! ```
//!
//! Parsing is all-or-nothing per sequence; every malformed file is
//! reported with its path and line number.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boxes::BoundingBox;
use crate::error::{Error, Result};

/// Sequence brightness level: thresholds 83 and 119 on the 0-255 mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Brightness {
    Low,
    Medium,
    High,
}

impl Brightness {
    pub fn from_mean(b: f64) -> Self {
        if b <= 83.0 {
            Brightness::Low
        } else if b <= 119.0 {
            Brightness::Medium
        } else {
            Brightness::High
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Brightness::Low => "low",
            Brightness::Medium => "medium",
            Brightness::High => "high",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "low" => Some(Brightness::Low),
            "medium" | "med" => Some(Brightness::Medium),
            "high" => Some(Brightness::High),
            _ => None,
        }
    }
}

/// Sequence length level: thresholds 600 and 1800 frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VideoLength {
    Short,
    Medium,
    Long,
}

impl VideoLength {
    pub fn from_frames(frames: usize) -> Self {
        if frames <= 600 {
            VideoLength::Short
        } else if frames <= 1800 {
            VideoLength::Medium
        } else {
            VideoLength::Long
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            VideoLength::Short => "short",
            VideoLength::Medium => "medium",
            VideoLength::Long => "long",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "short" => Some(VideoLength::Short),
            "medium" | "med" => Some(VideoLength::Medium),
            "long" => Some(VideoLength::Long),
            _ => None,
        }
    }
}

/// The 17 per-sequence challenge attributes, in file order:
/// CM, VC, PO, FO, OV, ROT, DEF, SD, IV, MB, NAO, PTI, BRI, FM, SV, ARV, LEN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSet {
    /// Abrupt camera motion.
    pub camera_motion: bool,
    /// Viewpoint significantly affects appearance.
    pub viewpoint_change: bool,
    pub partial_occlusion: bool,
    pub full_occlusion: bool,
    /// Target completely leaves the frame.
    pub out_of_view: bool,
    pub rotation: bool,
    pub deformation: bool,
    /// Similar object or background near the target.
    pub similar_distractor: bool,
    pub illumination_variation: bool,
    pub motion_blur: bool,
    /// Natural (true) versus artificial (false) object.
    pub natural_object: bool,
    /// Only part of the target visible in the initial frame.
    pub partial_target_info: bool,
    pub brightness: Brightness,
    /// Object motion exceeds its size.
    pub fast_motion: bool,
    /// Box area ratio to the initial frame outside [0.5, 2].
    pub scale_variation: bool,
    /// Aspect-ratio ratio to the initial frame outside [0.5, 2].
    pub aspect_ratio_variation: bool,
    pub length: VideoLength,
}

pub const ATTRIBUTE_COUNT: usize = 17;
pub const ATTRIBUTE_NAMES: [&str; ATTRIBUTE_COUNT] = [
    "CM", "VC", "PO", "FO", "OV", "ROT", "DEF", "SD", "IV", "MB", "NAO", "PTI", "BRI", "FM",
    "SV", "ARV", "LEN",
];

impl AttributeSet {
    pub fn none() -> Self {
        AttributeSet {
            camera_motion: false,
            viewpoint_change: false,
            partial_occlusion: false,
            full_occlusion: false,
            out_of_view: false,
            rotation: false,
            deformation: false,
            similar_distractor: false,
            illumination_variation: false,
            motion_blur: false,
            natural_object: false,
            partial_target_info: false,
            brightness: Brightness::Medium,
            fast_motion: false,
            scale_variation: false,
            aspect_ratio_variation: false,
            length: VideoLength::Short,
        }
    }

    pub fn to_line(&self) -> String {
        let b = |v: bool| if v { "1" } else { "0" };
        [
            b(self.camera_motion),
            b(self.viewpoint_change),
            b(self.partial_occlusion),
            b(self.full_occlusion),
            b(self.out_of_view),
            b(self.rotation),
            b(self.deformation),
            b(self.similar_distractor),
            b(self.illumination_variation),
            b(self.motion_blur),
            b(self.natural_object),
            b(self.partial_target_info),
            self.brightness.as_str(),
            b(self.fast_motion),
            b(self.scale_variation),
            b(self.aspect_ratio_variation),
            self.length.as_str(),
        ]
        .join(",")
    }

    pub fn parse(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if fields.len() != ATTRIBUTE_COUNT {
            return Err(Error::invalid(format!(
                "expected {ATTRIBUTE_COUNT} attributes, found {}",
                fields.len()
            )));
        }
        let flag = |i: usize| -> Result<bool> {
            match fields[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::invalid(format!(
                    "attribute {} must be 0 or 1, found {other}",
                    ATTRIBUTE_NAMES[i]
                ))),
            }
        };
        Ok(AttributeSet {
            camera_motion: flag(0)?,
            viewpoint_change: flag(1)?,
            partial_occlusion: flag(2)?,
            full_occlusion: flag(3)?,
            out_of_view: flag(4)?,
            rotation: flag(5)?,
            deformation: flag(6)?,
            similar_distractor: flag(7)?,
            illumination_variation: flag(8)?,
            motion_blur: flag(9)?,
            natural_object: flag(10)?,
            partial_target_info: flag(11)?,
            brightness: Brightness::parse(fields[12]).ok_or_else(|| {
                Error::invalid(format!("BRI must be low|medium|high, found {}", fields[12]))
            })?,
            fast_motion: flag(13)?,
            scale_variation: flag(14)?,
            aspect_ratio_variation: flag(15)?,
            length: VideoLength::parse(fields[16]).ok_or_else(|| {
                Error::invalid(format!("LEN must be short|medium|long, found {}", fields[16]))
            })?,
        })
    }

    /// Labels of the attribute slices this sequence belongs to. Binary
    /// challenges contribute when set; leveled attributes always
    /// contribute their level; the object-type attribute contributes one
    /// of its two types.
    pub fn slice_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        let flags = [
            (self.camera_motion, "CM"),
            (self.viewpoint_change, "VC"),
            (self.partial_occlusion, "PO"),
            (self.full_occlusion, "FO"),
            (self.out_of_view, "OV"),
            (self.rotation, "ROT"),
            (self.deformation, "DEF"),
            (self.similar_distractor, "SD"),
            (self.illumination_variation, "IV"),
            (self.motion_blur, "MB"),
            (self.partial_target_info, "PTI"),
            (self.fast_motion, "FM"),
            (self.scale_variation, "SV"),
            (self.aspect_ratio_variation, "ARV"),
        ];
        for (set, name) in flags {
            if set {
                out.push(name.to_string());
            }
        }
        out.push(if self.natural_object {
            "NAO:natural".to_string()
        } else {
            "NAO:artificial".to_string()
        });
        out.push(format!("BRI:{}", self.brightness.as_str()));
        out.push(format!("LEN:{}", self.length.as_str()));
        out
    }
}

impl fmt::Display for AttributeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_line())
    }
}

/// One annotated sequence.
#[derive(Clone, Debug)]
pub struct SequenceAnnotation {
    pub id: String,
    pub frames: Vec<PathBuf>,
    pub boxes: Vec<BoundingBox>,
    pub absent: Vec<bool>,
    pub timestamps: Vec<f64>,
    pub description: String,
    pub attributes: AttributeSet,
    /// (width, height) of the first frame.
    pub frame_size: (usize, usize),
}

impl SequenceAnnotation {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn visible(&self, t: usize) -> bool {
        !self.absent[t]
    }

    pub fn visible_count(&self) -> usize {
        self.absent.iter().filter(|a| !**a).count()
    }

    /// Internal consistency: equal lengths, strictly increasing timestamps.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.frames.len();
        if n == 0 {
            return Err(Error::invalid(format!("sequence {} has no frames", self.id)));
        }
        for (name, len) in [
            ("groundtruth", self.boxes.len()),
            ("absent", self.absent.len()),
            ("timestamps", self.timestamps.len()),
        ] {
            if len != n {
                return Err(Error::invalid(format!(
                    "sequence {}: {name} has {len} entries for {n} frames",
                    self.id
                )));
            }
        }
        for w in self.timestamps.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid(format!(
                    "sequence {}: timestamps not strictly increasing ({} then {})",
                    self.id, w[0], w[1]
                )));
            }
        }
        Ok(())
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::dataset(path, format!("cannot read: {e}")))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn parse_box_line(path: &Path, lineno: usize, line: &str) -> Result<BoundingBox> {
    let parts: Vec<&str> = line.trim().split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::dataset(
            path,
            format!("line {}: expected x,y,w,h, found {line:?}", lineno + 1),
        ));
    }
    let mut vals = [0.0; 4];
    for (i, p) in parts.iter().enumerate() {
        vals[i] = p.parse::<f64>().map_err(|_| {
            Error::dataset(path, format!("line {}: {p:?} is not a number", lineno + 1))
        })?;
    }
    BoundingBox::new(vals[0], vals[1], vals[2], vals[3])
        .map_err(|e| Error::dataset(path, format!("line {}: {e}", lineno + 1)))
}

/// Load one sequence directory.
pub fn load_sequence(dir: &Path) -> Result<SequenceAnnotation> {
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::dataset(dir, "sequence directory has no name"))?
        .to_string();

    let frames_dir = dir.join("frames");
    let mut frames: Vec<PathBuf> = std::fs::read_dir(&frames_dir)
        .map_err(|e| Error::dataset(&frames_dir, format!("cannot list frames: {e}")))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    frames.sort();
    if frames.is_empty() {
        return Err(Error::dataset(&frames_dir, "no .png frames found"));
    }

    let gt_path = dir.join("groundtruth.txt");
    let gt_lines = read_lines(&gt_path)?;
    if gt_lines.len() != frames.len() {
        return Err(Error::dataset(
            &gt_path,
            format!("{} boxes for {} frames", gt_lines.len(), frames.len()),
        ));
    }
    let boxes = gt_lines
        .iter()
        .enumerate()
        .map(|(i, l)| parse_box_line(&gt_path, i, l))
        .collect::<Result<Vec<_>>>()?;

    let absent_path = dir.join("absent.txt");
    let absent_lines = read_lines(&absent_path)?;
    if absent_lines.len() != frames.len() {
        return Err(Error::dataset(
            &absent_path,
            format!("{} flags for {} frames", absent_lines.len(), frames.len()),
        ));
    }
    let absent = absent_lines
        .iter()
        .enumerate()
        .map(|(i, l)| match l.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::dataset(
                &absent_path,
                format!("line {}: expected 0 or 1, found {other:?}", i + 1),
            )),
        })
        .collect::<Result<Vec<_>>>()?;

    let ts_path = dir.join("timestamps.txt");
    let timestamps = if ts_path.exists() {
        let lines = read_lines(&ts_path)?;
        if lines.len() != frames.len() {
            return Err(Error::dataset(
                &ts_path,
                format!("{} timestamps for {} frames", lines.len(), frames.len()),
            ));
        }
        lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.trim().parse::<f64>().map_err(|_| {
                    Error::dataset(&ts_path, format!("line {}: {l:?} is not a number", i + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        (0..frames.len()).map(|i| i as f64).collect()
    };

    let lang_path = dir.join("language.txt");
    let description = std::fs::read_to_string(&lang_path)
        .map_err(|e| Error::dataset(&lang_path, format!("cannot read: {e}")))?
        .trim()
        .to_string();

    let attr_path = dir.join("attributes.txt");
    let attr_text = std::fs::read_to_string(&attr_path)
        .map_err(|e| Error::dataset(&attr_path, format!("cannot read: {e}")))?;
    let attributes = AttributeSet::parse(attr_text.trim())
        .map_err(|e| Error::dataset(&attr_path, e.to_string()))?;

    let frame_size = image::image_dimensions(&frames[0])
        .map(|(w, h)| (w as usize, h as usize))
        .map_err(|e| Error::dataset(&frames[0], format!("cannot read image header: {e}")))?;

    let annotation = SequenceAnnotation {
        id,
        frames,
        boxes,
        absent,
        timestamps,
        description,
        attributes,
        frame_size,
    };
    annotation.check_invariants()?;
    Ok(annotation)
}

/// Load every sequence under `root`, lexicographically ordered.
pub fn load_dataset(root: &Path) -> Result<Vec<SequenceAnnotation>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::dataset(root, format!("cannot list dataset: {e}")))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::dataset(root, "no sequence directories found"));
    }
    dirs.iter().map(|d| load_sequence(d)).collect()
}

/// Write a sequence's annotation files (frames are written separately).
pub fn write_annotation_files(dir: &Path, annotation: &SequenceAnnotation) -> Result<()> {
    use std::fmt::Write as _;
    let mut gt = String::new();
    for b in &annotation.boxes {
        writeln!(gt, "{},{},{},{}", b.x, b.y, b.w, b.h).expect("string write");
    }
    std::fs::write(dir.join("groundtruth.txt"), gt)?;
    let absent: String = annotation
        .absent
        .iter()
        .map(|a| if *a { "1\n" } else { "0\n" })
        .collect();
    std::fs::write(dir.join("absent.txt"), absent)?;
    let mut ts = String::new();
    for t in &annotation.timestamps {
        writeln!(ts, "{t}").expect("string write");
    }
    std::fs::write(dir.join("timestamps.txt"), ts)?;
    std::fs::write(dir.join("language.txt"), format!("{}\n", annotation.description))?;
    std::fs::write(
        dir.join("attributes.txt"),
        format!("{}\n", annotation.attributes.to_line()),
    )?;
    Ok(())
}

/// Predictions: one `x,y,w,h` line per frame, the ground-truth format.
pub fn save_predictions(path: &Path, boxes: &[BoundingBox]) -> Result<()> {
    use std::fmt::Write as _;
    let mut text = String::new();
    for b in boxes {
        writeln!(text, "{},{},{},{}", b.x, b.y, b.w, b.h).expect("string write");
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_predictions(path: &Path) -> Result<Vec<BoundingBox>> {
    let lines = read_lines(path)?;
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_box_line(path, i, l))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Frame;

    fn write_fixture(root: &Path, id: &str, n: usize) -> PathBuf {
        let dir = root.join(id);
        let frames_dir = dir.join("frames");
        std::fs::create_dir_all(&frames_dir).unwrap();
        let mut frames = Vec::new();
        let mut boxes = Vec::new();
        for i in 0..n {
            let path = frames_dir.join(format!("{i:06}.png"));
            Frame::filled(16, 12, [0.5; 3]).save_png(&path).unwrap();
            frames.push(path);
            boxes.push(BoundingBox::new(1.0 + i as f64, 2.0, 3.0, 4.0).unwrap());
        }
        let annotation = SequenceAnnotation {
            id: id.to_string(),
            frames,
            boxes,
            absent: vec![false; n],
            timestamps: (0..n).map(|i| i as f64).collect(),
            description: "the red square moving slowly across the plain".to_string(),
            attributes: AttributeSet::none(),
            frame_size: (16, 12),
        };
        write_annotation_files(&dir, &annotation).unwrap();
        dir
    }

    #[test]
    fn two_frame_fixture_round_trips_exactly() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path(), "seq_a", 2);
        let loaded = load_dataset(tmp.path()).unwrap();
        assert_eq!(loaded.len(), 1);
        let seq = &loaded[0];
        assert_eq!(seq.id, "seq_a");
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.boxes[1], BoundingBox::new(2.0, 2.0, 3.0, 4.0).unwrap());
        assert_eq!(seq.timestamps, vec![0.0, 1.0]);
        assert_eq!(seq.frame_size, (16, 12));
        assert_eq!(
            seq.description,
            "the red square moving slowly across the plain"
        );
        assert_eq!(seq.attributes, AttributeSet::none());
    }

    #[test]
    fn truncated_groundtruth_names_file_and_counts() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_fixture(tmp.path(), "seq_b", 3);
        std::fs::write(dir.join("groundtruth.txt"), "1,1,2,2\n").unwrap();
        let err = load_sequence(&dir).unwrap_err().to_string();
        assert!(err.contains("groundtruth.txt"), "{err}");
        assert!(err.contains('3') && err.contains('1'), "{err}");
    }

    #[test]
    fn malformed_box_reports_line_number() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_fixture(tmp.path(), "seq_c", 2);
        std::fs::write(dir.join("groundtruth.txt"), "1,1,2,2\n1,1,oops,2\n").unwrap();
        let err = load_sequence(&dir).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn missing_timestamps_default_to_frame_index() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_fixture(tmp.path(), "seq_d", 3);
        std::fs::remove_file(dir.join("timestamps.txt")).unwrap();
        let seq = load_sequence(&dir).unwrap();
        assert_eq!(seq.timestamps, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn attribute_line_round_trip() {
        let mut attrs = AttributeSet::none();
        attrs.similar_distractor = true;
        attrs.fast_motion = true;
        attrs.brightness = Brightness::High;
        attrs.length = VideoLength::Medium;
        let line = attrs.to_line();
        assert_eq!(line.split(',').count(), ATTRIBUTE_COUNT);
        assert_eq!(AttributeSet::parse(&line).unwrap(), attrs);
    }

    #[test]
    fn attribute_parse_rejects_wrong_arity_and_values() {
        assert!(AttributeSet::parse("0,0,0").is_err());
        let mut fields = vec!["0"; ATTRIBUTE_COUNT];
        fields[12] = "dim";
        assert!(AttributeSet::parse(&fields.join(",")).is_err());
    }

    #[test]
    fn brightness_and_length_thresholds() {
        assert_eq!(Brightness::from_mean(83.0), Brightness::Low);
        assert_eq!(Brightness::from_mean(83.1), Brightness::Medium);
        assert_eq!(Brightness::from_mean(119.0), Brightness::Medium);
        assert_eq!(Brightness::from_mean(119.1), Brightness::High);
        assert_eq!(VideoLength::from_frames(600), VideoLength::Short);
        assert_eq!(VideoLength::from_frames(601), VideoLength::Medium);
        assert_eq!(VideoLength::from_frames(1800), VideoLength::Medium);
        assert_eq!(VideoLength::from_frames(1801), VideoLength::Long);
    }

    #[test]
    fn slice_labels_cover_levels() {
        let attrs = AttributeSet::none();
        let labels = attrs.slice_labels();
        assert!(labels.contains(&"NAO:artificial".to_string()));
        assert!(labels.contains(&"BRI:medium".to_string()));
        assert!(labels.contains(&"LEN:short".to_string()));
        assert_eq!(labels.len(), 3);
    }

    #[test]
    fn decreasing_timestamps_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_fixture(tmp.path(), "seq_e", 2);
        std::fs::write(dir.join("timestamps.txt"), "1.0\n0.5\n").unwrap();
        assert!(load_sequence(&dir).is_err());
    }
}
