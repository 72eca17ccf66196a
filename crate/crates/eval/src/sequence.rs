//! OTB-style sequence directories: `img/` frames plus `groundtruth_rect.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use tm3_core::BoxF64;

use crate::error::{EvalError, Result};

pub const GROUNDTRUTH_FILE: &str = "groundtruth_rect.txt";
pub const IMAGE_DIR: &str = "img";

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBundle {
    pub name: String,
    pub frames: Vec<PathBuf>,
    /// Zero-based pixel coordinates.
    pub groundtruth: Vec<BoxF64>,
}

impl SequenceBundle {
    pub fn new(name: impl Into<String>, frames: Vec<PathBuf>, groundtruth: Vec<BoxF64>) -> Result<Self> {
        if frames.len() != groundtruth.len() {
            return Err(EvalError::CountMismatch {
                what: "groundtruth boxes",
                expected: frames.len(),
                found: groundtruth.len(),
            });
        }
        if frames.len() < 2 {
            return Err(EvalError::Invalid(format!("sequence needs at least 2 frames, found {}", frames.len())));
        }
        groundtruth[0].validate()?;
        Ok(Self { name: name.into(), frames, groundtruth })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn load_images(&self) -> Result<Vec<RgbImage>> {
        self.frames.iter().map(|p| load_image(p)).collect()
    }
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => EvalError::io(path, e),
        source => EvalError::Image { path: path.to_path_buf(), source },
    })?;
    Ok(img.to_rgb8())
}

/// Parses one `x,y,w,h` box per line; commas, tabs and spaces all separate
/// fields. Input coordinates are one-based and are shifted to zero-based.
pub fn parse_groundtruth(text: &str, file: &str) -> Result<Vec<BoxF64>> {
    let mut boxes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| EvalError::Parse { file: file.to_string(), line: idx + 1, message };
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse::<f64>().map_err(|_| err(format!("not a number: {f:?}")))?;
            if !slot.is_finite() {
                return Err(err(format!("not finite: {f:?}")));
            }
        }
        boxes.push(BoxF64 { x: v[0] - 1.0, y: v[1] - 1.0, w: v[2], h: v[3] });
    }
    Ok(boxes)
}

/// One line per box in one-based `x,y,w,h` form.
pub fn format_groundtruth(boxes: &[BoxF64]) -> String {
    let mut out = String::new();
    for b in boxes {
        out.push_str(&format!("{},{},{},{}\n", fmt_coord(b.x + 1.0), fmt_coord(b.y + 1.0), fmt_coord(b.w), fmt_coord(b.h)));
    }
    out
}

pub(crate) fn fmt_coord(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

pub fn load_sequence(dir: &Path) -> Result<SequenceBundle> {
    let img_dir = dir.join(IMAGE_DIR);
    let entries = fs::read_dir(&img_dir).map_err(|e| EvalError::io(&img_dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| EvalError::io(&img_dir, e))?.path();
        if is_image(&path) {
            frames.push(path);
        }
    }
    frames.sort();
    let gt_path = dir.join(GROUNDTRUTH_FILE);
    let text = fs::read_to_string(&gt_path).map_err(|e| EvalError::io(&gt_path, e))?;
    let groundtruth = parse_groundtruth(&text, GROUNDTRUTH_FILE)?;
    let name = dir
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| dir.display().to_string());
    SequenceBundle::new(name, frames, groundtruth)
}

/// Writes frames as `img/0001.png …` and the groundtruth file.
pub fn write_sequence(dir: &Path, name: &str, images: &[RgbImage], groundtruth: &[BoxF64]) -> Result<SequenceBundle> {
    let img_dir = dir.join(IMAGE_DIR);
    fs::create_dir_all(&img_dir).map_err(|e| EvalError::io(&img_dir, e))?;
    let mut frames = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let path = img_dir.join(format!("{:04}.png", i + 1));
        img.save(&path).map_err(|source| match source {
            image::ImageError::IoError(e) => EvalError::io(&path, e),
            source => EvalError::Image { path: path.clone(), source },
        })?;
        frames.push(path);
    }
    let gt_path = dir.join(GROUNDTRUTH_FILE);
    fs::write(&gt_path, format_groundtruth(groundtruth)).map_err(|e| EvalError::io(&gt_path, e))?;
    SequenceBundle::new(name, frames, groundtruth.to_vec())
}
