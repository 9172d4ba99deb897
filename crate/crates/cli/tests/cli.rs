use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use quiltrt_core::iohub::gradient_frame;
use quiltrt_core::iohub::wire::{read_frame, write_frame};
use serde_json::Value;

const CALIBRATION: &str = r#"{"pitch":2.0,"slope":-4.0,"center":0.1,"dpi":16.0,"screen_w":24,"screen_h":16}"#;

fn quiltrt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quiltrt")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn calibration(dir: &Path) -> PathBuf {
    let p = dir.join("cal.json");
    std::fs::write(&p, CALIBRATION).unwrap();
    p
}

fn report(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&quiltrt(&[])), 2);
    assert_eq!(code(&quiltrt(&["rt", "--quilt", "6by8"])), 2);
    let o = quiltrt(&["rt", "--input", "moving-gradient 32x24*3"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tempfile::tempdir().unwrap();
    let cal = calibration(dir.path());
    let cal = cal.to_str().unwrap();
    assert_eq!(code(&quiltrt(&["rt", "--calibration", cal, "--fps", "-3"])), 2);
    assert_eq!(code(&quiltrt(&["rt", "--calibration", cal, "--input", "nonsense:"])), 2);
    assert_eq!(code(&quiltrt(&["rt", "--calibration", cal, "--map", cal])), 2);
    assert_eq!(code(&quiltrt(&["serve", "--save-on-exit"])), 2);
}

#[test]
fn synthetic_run_reports_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cal = calibration(dir.path());
    let o = quiltrt(&[
        "rt", "--calibration", cal.to_str().unwrap(), "--quilt", "2x2", "--tile", "16x12",
        "--input", "moving-gradient 32x24*6", "--fps", "50", "--workers", "1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&o);
    assert_eq!(r["geometry"], "2x2 views of 16x12");
    assert_eq!(r["native"], serde_json::json!({"width": 24, "height": 16}));
    assert_eq!(r["stats"]["capture"]["offered"], 6);
    assert!(r["failure"].is_null());
}

#[test]
fn map_file_run_and_lutgen() {
    let dir = tempfile::tempdir().unwrap();
    let cal = calibration(dir.path());
    let map = dir.path().join("toy.map");
    let (cal, map_s) = (cal.to_str().unwrap(), map.to_str().unwrap());
    let o = quiltrt(&["lutgen", "--calibration", cal, "--quilt", "2x2", "--tile", "16x12", "--output", map_s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with(map_s));
    let first = std::fs::read(&map).unwrap();
    assert_eq!(code(&quiltrt(&["lutgen", "--calibration", cal, "--quilt", "2x2", "--tile", "16x12", "--output", map_s])), 2);
    let o = quiltrt(&["lutgen", "--calibration", cal, "--quilt", "2x2", "--tile", "16x12", "--output", map_s, "--force"]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&map).unwrap(), first);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"pitch\": 1}").unwrap();
    let other = dir.path().join("other.map");
    assert_eq!(code(&quiltrt(&["lutgen", "--calibration", bad.to_str().unwrap(), "--output", other.to_str().unwrap()])), 3);
    assert_eq!(code(&quiltrt(&["lutgen", "--calibration", cal, "--quilt", "0x2", "--output", other.to_str().unwrap()])), 2);

    // The MAP header supplies the geometry.
    let o = quiltrt(&["rt", "--map", map_s, "--input", "moving-gradient 20x20*3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(&o)["geometry"], "2x2 views of 16x12");
    let o = quiltrt(&["rt", "--map", map_s, "--quilt", "3x3", "--input", "moving-gradient 20x20*3"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn load_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.map");
    assert_eq!(code(&quiltrt(&["rt", "--map", missing.to_str().unwrap(), "--input", "moving-gradient 8x8*1"])), 3);
    let garbage = dir.path().join("garbage.map");
    std::fs::write(&garbage, b"not a map").unwrap();
    assert_eq!(code(&quiltrt(&["rt", "--map", garbage.to_str().unwrap(), "--input", "moving-gradient 8x8*1"])), 3);
    let cal = calibration(dir.path());
    let o = quiltrt(&["rt", "--calibration", cal.to_str().unwrap(), "--quilt", "2x2", "--tile", "16x12", "--model", "/nonexistent.onnx", "--input", "moving-gradient 8x8*1"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn io_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let cal = calibration(dir.path());
    let cal = cal.to_str().unwrap();
    let missing = dir.path().join("nothing-here");
    let o = quiltrt(&["rt", "--calibration", cal, "--quilt", "2x2", "--tile", "16x12", "--input", &format!("file:{}", missing.display())]);
    assert_eq!(code(&o), 4);
    let o = quiltrt(&["rt", "--calibration", cal, "--quilt", "2x2", "--tile", "16x12", "--input", "camera:0"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn pipe_to_pipe() {
    let dir = tempfile::tempdir().unwrap();
    let cal = calibration(dir.path());
    let mut child = Command::new(env!("CARGO_BIN_EXE_quiltrt"))
        .args(["rt", "--calibration", cal.to_str().unwrap(), "--quilt", "2x2", "--tile", "16x12", "--input", "pipe:-", "--output", "pipe:-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut input = Vec::new();
    for t in 0..4 {
        write_frame(&mut input, &gradient_frame(30, 20, t), t * 100).unwrap();
    }
    child.stdin.take().unwrap().write_all(&input).unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut cur = std::io::Cursor::new(o.stdout);
    let mut n = 0;
    while let Some((f, _)) = read_frame(&mut cur).unwrap() {
        assert_eq!(f.dimensions(), (24, 16));
        n += 1;
    }
    assert_eq!(n, 4);
    let r: Value = serde_json::from_slice(&o.stderr[o.stderr.iter().position(|&b| b == b'{').unwrap()..]).unwrap();
    assert_eq!(r["stats"]["sink"]["processed"], 4);
}

#[test]
fn ini_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cal = calibration(dir.path());
    let out = dir.path().join("out");
    let ini = dir.path().join("run.ini");
    std::fs::write(
        &ini,
        format!(
            "[input]\ntype = synthetic\nwidth = 40\nheight = 30\nframes = 50\n\n[output]\ntype = file\npath = {}\n\n[processing]\ncalibration = {}\nquilt_rows = 2\nquilt_cols = 2\ntile_w = 16\ntile_h = 12\nfps = 100\n",
            out.display(),
            cal.display()
        ),
    )
    .unwrap();
    let o = quiltrt(&["rt", "--ini", ini.to_str().unwrap(), "--input", "moving-gradient 40x30*3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(&o)["stats"]["capture"]["offered"], 3);
    let written = std::fs::read_dir(&out).unwrap().count();
    assert!((1..=3).contains(&written), "{written}");
    let bad = dir.path().join("bad.ini");
    std::fs::write(&bad, "[processing]\nfps = fast\n").unwrap();
    assert_eq!(code(&quiltrt(&["rt", "--ini", bad.to_str().unwrap(), "--input", "moving-gradient 8x8*1"])), 2);
}

#[test]
fn live_cli_on_virtual_screens() {
    let dir = tempfile::tempdir().unwrap();
    let cal = calibration(dir.path());
    let cal = cal.to_str().unwrap();
    let base = ["live-cli", "--calibration", cal, "--quilt", "2x2", "--tile", "16x12", "--virtual-screens", "800x600,640x480"];
    let run = |extra: &[&str]| {
        let mut a = base.to_vec();
        a.extend_from_slice(extra);
        quiltrt(&a)
    };
    let o = run(&["--region", "1:10,10,100x80", "--duration", "1", "--fps", "10"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(report(&o)["stats"]["sink"]["processed"].as_u64().unwrap() >= 5);
    assert_eq!(code(&run(&["--region", "1:600,10,100x80", "--duration", "1"])), 2);
    assert_eq!(code(&run(&["--region", "0:0,0,8x8", "--duration", "1"])), 2);
    assert_eq!(code(&run(&["--region", "2:0,0,100x80", "--duration", "1"])), 4);
    // Without emulated screens this host has no capture.
    assert_eq!(code(&quiltrt(&["live-cli", "--calibration", cal, "--region", "0:0,0,100x80", "--duration", "1"])), 4);
}
