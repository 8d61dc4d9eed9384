mod common;

use std::path::Path;
use std::process::Command;

use common::inputs;
use hsc::runtime::runner::{value_from_json, value_to_json};

fn hsc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hsc"))
}

fn fixture_path(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn build(program: &str, schedule: &str, out: &Path, extra: &[&str]) -> std::process::Output {
    hsc()
        .arg("build")
        .arg(fixture_path(&format!("{program}.jn")))
        .arg("--schedule")
        .arg(fixture_path(&format!("{schedule}.sch")))
        .arg("-o")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn build_reports_zero_spills_for_matmul() {
    let dir = tempfile::tempdir().unwrap();
    let o = build("matmul", "matmul", dir.path(), &["--report-spills", "--emit", "exec"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("total spills 0 copies 0"), "{stdout}");
    for f in ["matmul.hsx", "matmul.plan", "matmul.exec"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn double_write_reports_one_spill() {
    let dir = tempfile::tempdir().unwrap();
    let o = build("double_write", "double_write", dir.path(), &["--report-spills"]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("total spills 1"));
}

#[test]
fn dump_after_reshape_shows_the_block_nest() {
    let dir = tempfile::tempdir().unwrap();
    let o = build("matmul", "matmul", dir.path(), &["--dump-after", "4"]);
    assert!(o.status.success());
    let ir = std::fs::read_to_string(dir.path().join("04_fork-reshape.ir")).unwrap();
    assert!(ir.contains("fork<4, 4>"), "{ir}");
    assert!(ir.contains("fork<n/4>") && ir.contains("fork<l/4>") && ir.contains("fork<m>"));
    assert!(dir.path().join("04_fork-reshape.dot").exists());
}

#[test]
fn missing_source_exits_with_two_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = hsc()
        .args(["build", "does-not-exist.jn", "--schedule"])
        .arg(fixture_path("matmul.sch"))
        .arg("-o")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn schedule_errors_fail_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let sch = dir.path().join("bad.sch");
    std::fs::write(&sch, "fork-chunk![4](nope@l);\n").unwrap();
    let out = dir.path().join("out");
    let o = hsc().arg("build").arg(fixture_path("matmul.jn")).arg("--schedule").arg(&sch).arg("-o").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
    assert!(!out.exists());
}

#[test]
fn run_writes_output_and_metrics_trailer() {
    let dir = tempfile::tempdir().unwrap();
    assert!(build("array_sum", "array_sum_tree", dir.path(), &[]).status.success());
    let args = inputs("array_sum", &[4096], 9);
    let input = dir.path().join("a.json");
    std::fs::write(&input, value_to_json(&args[0]).unwrap().to_string()).unwrap();
    let run = |extra: &[&str]| {
        hsc()
            .arg("run")
            .arg(dir.path().join("array_sum.hsx"))
            .args(["--dc", "n=4096", "--input"])
            .arg(&input)
            .arg("-o")
            .arg(dir.path())
            .args(extra)
            .output()
            .unwrap()
    };
    let o = run(&["--workers", "4", "--race-check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().last().unwrap().starts_with("metrics: wall_ms="), "{stdout}");
    let read_out = || {
        let j: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("array_sum.out.json")).unwrap()).unwrap();
        value_from_json(&j).unwrap()
    };
    let got = read_out();
    assert!(run(&["--oracle"]).status.success());
    assert_eq!(read_out(), got);
    let want: i64 = args[0].scalars().iter().map(|&(_, b)| b as i64).fold(0i64, |a, b| a.wrapping_add(b));
    assert_eq!(got, hsc::runtime::Value::i64(want));
}

#[test]
fn run_rejects_unmet_constraints() {
    let dir = tempfile::tempdir().unwrap();
    assert!(build("matmul", "matmul", dir.path(), &[]).status.success());
    let a = hsc::runtime::Value::f32_array(vec![6, 6], &[1.0; 36]);
    let input = dir.path().join("a.json");
    std::fs::write(&input, value_to_json(&a).unwrap().to_string()).unwrap();
    let o = hsc()
        .arg("run")
        .arg(dir.path().join("matmul.hsx"))
        .args(["--dc", "n=6", "--dc", "m=6", "--dc", "l=6", "--input"])
        .arg(&input)
        .arg("--input")
        .arg(&input)
        .arg("-o")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("violated"));
    assert!(!dir.path().join("matmul.out.json").exists());
}
