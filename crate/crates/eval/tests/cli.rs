use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tm3_eval::output::{write_results_csv, ResultRow};
use tm3_eval::{load_sequence, read_results_csv};

const SPEC: &str = "\
name = cli_demo
width = 160
height = 120
frames = 8
target_w = 30
target_h = 26
start_x = 30
start_y = 40
velocity_x = 2
noise = 3
clutter = 15
seed = 3
";

fn tm3(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tm3")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_into(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("spec.txt");
    fs::write(&spec, SPEC).unwrap();
    let seq = dir.join("seq");
    let out = tm3(&["synth", s(&spec), "--out", s(&seq)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    seq
}

#[test]
fn synth_track_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth_into(dir.path());
    let bundle = load_sequence(&seq).unwrap();
    assert_eq!(bundle.len(), 8);
    assert!(seq.join("img/0001.png").exists());

    let results = dir.path().join("results.csv");
    let out = tm3(&["track", s(&seq), "--out", s(&results)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_results_csv(&results).unwrap();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows[0].bbox, bundle.groundtruth[0]);

    let metrics = dir.path().join("metrics.csv");
    let plot = dir.path().join("curves.svg");
    let out = tm3(&["eval", s(&results), s(&seq), "--out", s(&metrics), "--plot", s(&plot)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&metrics).unwrap();
    assert!(text.starts_with("metric,threshold,value\nsuccess,0.00,"));
    assert_eq!(text.lines().count(), 1 + 101 + 51 + 3);
    assert!(fs::read_to_string(&plot).unwrap().starts_with("<svg"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("auc "));
}

#[test]
fn outputs_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth_into(dir.path());
    let seq2 = dir.path().join("seq2");
    let out = tm3(&["synth", s(&dir.path().join("spec.txt")), "--out", s(&seq2)]);
    assert_eq!(code(&out), 0);
    for f in ["groundtruth_rect.txt", "img/0001.png", "img/0008.png"] {
        assert_eq!(fs::read(seq.join(f)).unwrap(), fs::read(seq2.join(f)).unwrap(), "{f}");
    }

    let (r1, r2) = (dir.path().join("r1.csv"), dir.path().join("r2.csv"));
    assert_eq!(code(&tm3(&["track", s(&seq), "--out", s(&r1)])), 0);
    assert_eq!(code(&tm3(&["track", s(&seq2), "--out", s(&r2)])), 0);
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());

    let (m1, m2) = (dir.path().join("m1.csv"), dir.path().join("m2.csv"));
    assert_eq!(code(&tm3(&["eval", s(&r1), s(&seq), "--out", s(&m1)])), 0);
    assert_eq!(code(&tm3(&["eval", s(&r1), s(&seq), "--out", s(&m2)])), 0);
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
}

#[test]
fn seed_flag_changes_the_tracker_run() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth_into(dir.path());
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_eq!(code(&tm3(&["--seed", "1", "track", s(&seq), "--out", s(&a)])), 0);
    assert_eq!(code(&tm3(&["track", s(&seq), "--seed", "2", "--out", s(&b)])), 0);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn groundtruth_results_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth_into(dir.path());
    let bundle = load_sequence(&seq).unwrap();
    let rows: Vec<ResultRow> = bundle
        .groundtruth
        .iter()
        .enumerate()
        .map(|(frame, &bbox)| ResultRow { frame, bbox, confidence: 1.0, cue: "flow_r".into() })
        .collect();
    let results = dir.path().join("gt.csv");
    write_results_csv(&results, &rows).unwrap();
    let metrics = dir.path().join("metrics.csv");
    let out = tm3(&["eval", s(&results), s(&seq), "--out", s(&metrics)]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&metrics).unwrap();
    assert!(text.contains("\nauc,,1.000000\n"), "{text}");
    assert!(text.contains("\nprecision_at_20,20,1.000000\n"));
}

#[test]
fn verify_theory_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("theory.csv");
    let out = tm3(&["verify-theory", "--trials", "10000", "--n", "8", "--m", "8", "--seed", "5", "--out", s(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("quantity,value,std_error\n"));
    for key in ["e_mbs", "e_mbs2", "v_mbs", "v_bbs", "lemma3_margin", "lemma3_holds", "theorem1_holds"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{key},"))), "missing {key}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&tm3(&["--version"])), 0);
    assert_eq!(code(&tm3(&["--help"])), 0);
    assert_eq!(code(&tm3(&["no-such-command"])), 1);
    assert_eq!(code(&tm3(&["track"])), 1);

    // I/O failures
    let missing = dir.path().join("missing");
    assert_eq!(code(&tm3(&["track", s(&missing)])), 2);
    assert_eq!(code(&tm3(&["synth", s(&missing), "--out", s(&dir.path().join("o"))])), 2);

    // validation failures
    let seq = synth_into(dir.path());
    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "cap_c = 0\n").unwrap();
    let out = tm3(&["track", s(&seq), "--config", s(&bad_cfg), "--out", s(&dir.path().join("r.csv"))]);
    assert_eq!(code(&out), 1);
    fs::write(&bad_cfg, "cap_c = 2\nwhat = 1\n").unwrap();
    let out = tm3(&["track", s(&seq), "--config", s(&bad_cfg), "--out", s(&dir.path().join("r.csv"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let bad_results = dir.path().join("bad.csv");
    fs::write(&bad_results, "frame,x,y,w,h,confidence,cue\n1,1,1,4,4,0,flow_r\n").unwrap();
    let out = tm3(&["eval", s(&bad_results), s(&seq), "--out", s(&dir.path().join("m.csv"))]);
    assert_eq!(code(&out), 1, "row count mismatch is a validation error");

    let bad_spec = dir.path().join("bad_spec.txt");
    fs::write(&bad_spec, "frames = 1\n").unwrap();
    assert_eq!(code(&tm3(&["synth", s(&bad_spec), "--out", s(&dir.path().join("o"))])), 1);
    assert_eq!(code(&tm3(&["verify-theory", "--trials", "10", "--out", s(&dir.path().join("t.csv"))])), 1);
}
