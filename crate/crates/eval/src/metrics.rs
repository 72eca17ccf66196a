//! One-pass evaluation curves.

use tm3_core::{vor, BoxF64};

use crate::error::{EvalError, Result};

pub const SUCCESS_POINTS: usize = 101;
pub const PRECISION_POINTS: usize = 51;
/// Centre error, in pixels, reported as the headline precision.
pub const PRECISION_THRESHOLD: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct OpeReport {
    /// Fraction of frames with overlap above `k / 100`.
    pub success_curve: Vec<f64>,
    /// Fraction of frames with centre error at most `k` pixels.
    pub precision_curve: Vec<f64>,
    pub auc: f64,
    pub precision_at_20: f64,
    pub mean_vor: f64,
}

pub fn center_error(a: &BoxF64, b: &BoxF64) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

fn success_threshold_met(overlap: f64, k: usize) -> bool {
    if k + 1 == SUCCESS_POINTS {
        // Overlap cannot exceed 1, so the last point counts exact matches.
        overlap >= 1.0 - 1e-9
    } else {
        overlap > k as f64 / 100.0
    }
}

pub fn ope_metrics(results: &[BoxF64], truth: &[BoxF64]) -> Result<OpeReport> {
    if results.len() != truth.len() {
        return Err(EvalError::CountMismatch { what: "result boxes", expected: truth.len(), found: results.len() });
    }
    if truth.is_empty() {
        return Err(EvalError::Invalid("no frames to evaluate".into()));
    }
    let n = truth.len() as f64;
    let overlaps: Vec<f64> = results.iter().zip(truth).map(|(r, t)| vor(r, t)).collect();
    let errors: Vec<f64> = results.iter().zip(truth).map(|(r, t)| center_error(r, t)).collect();

    let success_curve: Vec<f64> = (0..SUCCESS_POINTS)
        .map(|k| overlaps.iter().filter(|&&o| success_threshold_met(o, k)).count() as f64 / n)
        .collect();
    let precision_curve: Vec<f64> = (0..PRECISION_POINTS)
        .map(|k| errors.iter().filter(|&&e| e <= k as f64).count() as f64 / n)
        .collect();
    let auc = success_curve.iter().sum::<f64>() / SUCCESS_POINTS as f64;
    Ok(OpeReport {
        precision_at_20: precision_curve[PRECISION_THRESHOLD],
        auc,
        mean_vor: overlaps.iter().sum::<f64>() / n,
        success_curve,
        precision_curve,
    })
}
