//! Glue between sequences, the tracker and the metrics.

use image::RgbImage;
use tm3_core::{track_sequence, BoxF64, TrackerConfig};

use crate::error::{EvalError, Result};
use crate::metrics::{ope_metrics, OpeReport};
use crate::output::ResultRow;

/// Tracks in single precision from `init` on the first frame.
pub fn run_tracker(config: &TrackerConfig, images: &[RgbImage], init: BoxF64) -> Result<Vec<ResultRow>> {
    let results = track_sequence::<f32>(config, images, init.cast::<f32>())?;
    Ok(results
        .iter()
        .enumerate()
        .map(|(frame, r)| ResultRow {
            frame,
            bbox: r.bbox.cast::<f64>(),
            confidence: r.confidence as f64,
            cue: if r.lost { "lost".into() } else { r.cue_origin.as_str().into() },
        })
        .collect())
}

pub fn evaluate(rows: &[ResultRow], truth: &[BoxF64]) -> Result<OpeReport> {
    for (i, r) in rows.iter().enumerate() {
        if r.frame != i {
            return Err(EvalError::Invalid(format!("results row {} has frame {}, expected {}", i + 1, r.frame + 1, i + 1)));
        }
    }
    let boxes: Vec<BoxF64> = rows.iter().map(|r| r.bbox).collect();
    ope_metrics(&boxes, truth)
}

