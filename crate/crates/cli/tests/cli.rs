use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn curvetrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curvetrack")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_synth_config(dir: &Path, frames: usize) -> std::path::PathBuf {
    let cfg = dir.join("synth.json");
    fs::write(
        &cfg,
        format!(
            r#"{{
  "width": 48, "height": 48,
  "initial": {{ "shape": "disk", "cx": 22, "cy": 24, "r": 8 }},
  "deformation": {{ "kind": "translate", "dx": 0.5, "dy": 0.0, "frames": {frames} }},
  "seed": 5
}}"#
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn synth_track_eval_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    let synth = curvetrack(&["synth", "--config", path(&write_synth_config(dir.path(), 3)), "--out", path(&seq)]);
    assert_eq!(code(&synth), 0, "{}", String::from_utf8_lossy(&synth.stderr));
    assert!(seq.join("manifest.json").exists());

    let run_cfg = dir.path().join("run.json");
    fs::write(
        &run_cfg,
        r#"{ "input": { "manifest": "seq/manifest.json" },
             "filter": { "n_particles": 4 },
             "render": { "markers": [[14.5, 24.0]] } }"#,
    )
    .unwrap();
    let est = dir.path().join("est");
    let track = curvetrack(&["track", "--config", path(&run_cfg), "--seed", "42", "--workers", "2", "--out", path(&est)]);
    assert_eq!(code(&track), 0, "{}", String::from_utf8_lossy(&track.stderr));
    for f in ["phi_003.ctf", "contour_003.csv", "overlay_003.pgm", "markers.csv", "diagnostics.csv"] {
        assert!(est.join(f).exists(), "{f}");
    }

    let report = dir.path().join("report.csv");
    let eval = curvetrack(&["eval", "--estimate", path(&est), "--truth", path(&seq), "--band", "3", "--out", path(&report)]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("frame,hausdorff,band_rmse,accumulated_rmse"));
    assert_eq!(csv.lines().count(), 5);
    let summary: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(summary["frames"], 4);
}

#[test]
fn flow_writes_a_vector_field() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    assert_eq!(code(&curvetrack(&["synth", "--config", path(&write_synth_config(dir.path(), 1)), "--out", path(&seq)])), 0);
    let out = dir.path().join("flow.ctf");
    let mag = dir.path().join("mag.pgm");
    let flow = curvetrack(&[
        "flow",
        "--prev",
        path(&seq.join("frame_000.pgm")),
        "--next",
        path(&seq.join("frame_001.pgm")),
        "--alpha",
        "7",
        "--out",
        path(&out),
        "--magnitude",
        path(&mag),
    ]);
    assert_eq!(code(&flow), 0, "{}", String::from_utf8_lossy(&flow.stderr));
    let field = curvetrack::io::load_vector_ctf(&out).unwrap();
    assert_eq!(field.dims(), (48, 48));
    assert!(mag.exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&curvetrack(&["synth", "--config", path(&bad), "--out", path(dir.path())])), 2);

    let seq = dir.path().join("seq");
    assert_eq!(code(&curvetrack(&["synth", "--config", path(&write_synth_config(dir.path(), 1)), "--out", path(&seq)])), 0);
    let zero = dir.path().join("zero.json");
    fs::write(&zero, r#"{ "input": { "manifest": "seq/manifest.json" }, "filter": { "n_particles": 0 } }"#).unwrap();
    assert_eq!(code(&curvetrack(&["track", "--config", path(&zero), "--out", path(&dir.path().join("o"))])), 2);

    // unknown flag is rejected by the argument parser with the same code
    assert_eq!(code(&curvetrack(&["flow", "--bogus"])), 2);
}

#[test]
fn degenerate_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    assert_eq!(code(&curvetrack(&["synth", "--config", path(&write_synth_config(dir.path(), 1)), "--out", path(&seq)])), 0);
    // an initial mask without the tracked class has no interface
    let empty = curvetrack::LabelMap::from_fn(48, 48, 2, |_, _| 0).unwrap();
    curvetrack::io::save_labels(&empty, dir.path().join("empty.pgm")).unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{ "input": { "manifest": "seq/manifest.json" }, "initial_mask": "empty.pgm", "filter": { "n_particles": 2 } }"#).unwrap();
    let out = curvetrack(&["track", "--config", path(&cfg), "--out", path(&dir.path().join("o"))]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_files_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.pgm");
    let out = curvetrack(&["flow", "--prev", path(&missing), "--next", path(&missing), "--out", path(&dir.path().join("f.ctf"))]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.pgm"));
    let cfg = curvetrack(&["synth", "--config", path(&dir.path().join("absent.json")), "--out", path(dir.path())]);
    assert_eq!(code(&cfg), 4);
}
