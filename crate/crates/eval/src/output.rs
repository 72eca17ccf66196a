//! CSV writers and readers, and the SVG curve plot.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use tm3_core::theory::{Estimate, QuadratureResult, TheoryReport};
use tm3_core::BoxF64;

use crate::error::{EvalError, Result};
use crate::metrics::OpeReport;
use crate::sequence::fmt_coord;

pub const RESULTS_HEADER: [&str; 7] = ["frame", "x", "y", "w", "h", "confidence", "cue"];

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    /// Zero-based frame index.
    pub frame: usize,
    /// Zero-based pixel coordinates.
    pub bbox: BoxF64,
    pub confidence: f64,
    pub cue: String,
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> EvalError + '_ {
    move |source| EvalError::Csv { path: path.to_path_buf(), source }
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| EvalError::io(path, e))
}

/// Frame numbers and coordinates are written one-based.
pub fn results_to_rows(rows: &[ResultRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                (r.frame + 1).to_string(),
                fmt_coord(r.bbox.x + 1.0),
                fmt_coord(r.bbox.y + 1.0),
                fmt_coord(r.bbox.w),
                fmt_coord(r.bbox.h),
                format!("{:.6}", r.confidence),
                r.cue.clone(),
            ]
        })
        .collect()
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    write_rows(path, &RESULTS_HEADER, &results_to_rows(rows))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let file = path.display().to_string();
    let headers = reader.headers().map_err(csv_err(path))?.clone();
    if headers.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(EvalError::Parse { file, line: 1, message: format!("expected header {}", RESULTS_HEADER.join(",")) });
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| EvalError::Parse { file: file.clone(), line, message: e.to_string() })?;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse::<f64>().map_err(|_| EvalError::Parse {
                file: file.clone(),
                line,
                message: format!("column {} is not a number: {:?}", RESULTS_HEADER[k], &rec[k]),
            })
        };
        let frame = num(0)?;
        if frame < 1.0 || frame.fract() != 0.0 {
            return Err(EvalError::Parse { file: file.clone(), line, message: "frame must be a positive integer".into() });
        }
        out.push(ResultRow {
            frame: frame as usize - 1,
            bbox: BoxF64 { x: num(1)? - 1.0, y: num(2)? - 1.0, w: num(3)?, h: num(4)? },
            confidence: num(5)?,
            cue: rec[6].to_string(),
        });
    }
    Ok(out)
}

pub fn metrics_rows(report: &OpeReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (k, v) in report.success_curve.iter().enumerate() {
        rows.push(vec!["success".into(), format!("{:.2}", k as f64 / 100.0), format!("{v:.6}")]);
    }
    for (k, v) in report.precision_curve.iter().enumerate() {
        rows.push(vec!["precision".into(), k.to_string(), format!("{v:.6}")]);
    }
    rows.push(vec!["auc".into(), String::new(), format!("{:.6}", report.auc)]);
    rows.push(vec!["precision_at_20".into(), "20".into(), format!("{:.6}", report.precision_at_20)]);
    rows.push(vec!["mean_vor".into(), String::new(), format!("{:.6}", report.mean_vor)]);
    rows
}

pub fn write_metrics_csv(path: &Path, report: &OpeReport) -> Result<()> {
    write_rows(path, &["metric", "threshold", "value"], &metrics_rows(report))
}

pub fn theory_rows(report: &TheoryReport, quad: &QuadratureResult) -> Vec<Vec<String>> {
    let est = |name: &str, e: &Estimate| vec![name.to_string(), format!("{:.9e}", e.value), format!("{:.9e}", e.std_error)];
    let exact = |name: &str, v: f64| vec![name.to_string(), format!("{v:.9e}"), String::new()];
    let flag = |name: &str, b: bool| vec![name.to_string(), (b as u8).to_string(), String::new()];
    vec![
        exact("n", report.n as f64),
        exact("m", report.m as f64),
        exact("sigma1", report.sigma1),
        exact("trials", report.trials as f64),
        exact("seed", report.seed as f64),
        est("e_mbs", &report.e_mbs),
        est("e_mbs2", &report.e_mbs2),
        est("e_bbs", &report.e_bbs),
        est("e_bbs2", &report.e_bbs2),
        est("v_mbs", &report.v_mbs),
        est("v_bbs", &report.v_bbs),
        est("mean_x", &report.mean_x),
        est("mean_x2", &report.mean_x2),
        est("lemma3_margin", &report.lemma3_margin),
        est("theorem1_margin", &report.theorem1_margin),
        exact("theorem1_identity_gap", report.theorem1_identity_gap),
        est("exact_e_mbs", &report.exact_e_mbs),
        est("exact_e_mbs2", &report.exact_e_mbs2),
        est("exact_margin", &report.exact_margin),
        exact("quadrature_e_mbs", quad.e_mbs),
        exact("quadrature_e_mbs2", quad.e_mbs2),
        exact("quadrature_e_bbs", quad.e_bbs),
        exact("quadrature_v_mbs", quad.v_mbs),
        exact("quadrature_margin", quad.closed_form_margin),
        exact("mean_field_margin", quad.mean_field_margin),
        flag("lemma3_holds", report.lemma3_holds),
        flag("theorem1_holds", report.theorem1_holds),
    ]
}

pub fn write_theory_csv(path: &Path, report: &TheoryReport, quad: &QuadratureResult) -> Result<()> {
    write_rows(path, &["quantity", "value", "std_error"], &theory_rows(report, quad))
}

/// Success and precision curves side by side.
pub fn curves_svg(report: &OpeReport, title: &str) -> String {
    let (pw, ph, pad) = (300.0, 220.0, 40.0);
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        2.0 * (pw + 2.0 * pad),
        ph + 2.0 * pad + 20.0
    );
    let _ = write!(s, r#"<text x="{}" y="16" font-size="13">{}</text>"#, pad, escape(title));
    let panels = [
        ("Success (AUC {:.3})", &report.success_curve, 1.0, "overlap threshold", report.auc),
        ("Precision (@20 px {:.3})", &report.precision_curve, 50.0, "location error threshold (px)", report.precision_at_20),
    ];
    for (i, (label, curve, xmax, xlabel, headline)) in panels.iter().enumerate() {
        let ox = pad + i as f64 * (pw + 2.0 * pad);
        let oy = pad + 10.0;
        let _ = write!(
            s,
            r#"<rect x="{ox}" y="{oy}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let points: Vec<String> = curve
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let x = ox + pw * (k as f64 / (curve.len() - 1) as f64);
                let y = oy + ph * (1.0 - v);
                format!("{x:.1},{y:.1}")
            })
            .collect();
        let _ = write!(s, r#"<polyline fill="none" stroke="firebrick" stroke-width="2" points="{}"/>"#, points.join(" "));
        let _ = write!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            ox,
            oy - 4.0,
            label.replace("{:.3}", &format!("{headline:.3}"))
        );
        let _ = write!(s, r#"<text x="{}" y="{}">{}</text>"#, ox + pw / 3.0, oy + ph + 28.0, xlabel);
        let _ = write!(s, r#"<text x="{}" y="{}">0</text>"#, ox, oy + ph + 14.0);
        let _ = write!(s, r#"<text x="{}" y="{}">{}</text>"#, ox + pw - 10.0, oy + ph + 14.0, xmax);
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![
            ResultRow { frame: 0, bbox: BoxF64 { x: 9.0, y: 19.5, w: 30.0, h: 20.25 }, confidence: 0.0, cue: "flow_r".into() },
            ResultRow { frame: 1, bbox: BoxF64 { x: 11.0, y: 20.0, w: 31.0, h: 21.0 }, confidence: 1.5, cue: "flow_e_mbs".into() },
        ];
        write_results_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("frame,x,y,w,h,confidence,cue\n1,10,20.5,30,20.25,0.000000,flow_r\n"), "{text}");
        assert_eq!(read_results_csv(&path).unwrap(), rows);
    }

    #[test]
    fn bad_results_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        fs::write(&path, "frame,x,y,w,h,confidence,cue\n1,1,1,4,4,0,flow_r\n2,1,?,4,4,0,flow_r\n").unwrap();
        let err = read_results_csv(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
