use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_anisoseg");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, seeds: &str, extra: &[&str]) {
    let mut args = vec![
        "synth", "--shape", "6x16x16", "--seeds", seeds, "--rng-seed", "5", "--gt-out", "gt.volb", "--aff-out",
        "aff.volb",
    ];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

#[test]
fn eval_of_identical_volumes_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "6", &[]);
    assert_eq!(ok(dir.path(), &["eval", "--seg", "gt.volb", "--gt", "gt.volb"]), "0.000000,0.000000\n");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "6", &[]);
    assert_eq!(run(p, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(p, &[]).status.code(), Some(2));
    assert_eq!(run(p, &["eval", "--seg", "gt.volb"]).status.code(), Some(2));
    assert_eq!(
        run(p, &["watershed", "--aff", "aff.volb", "--out", "w.volb", "--t-low", "0.99"]).status.code(),
        Some(2)
    );
    assert_eq!(run(p, &["eval", "--seg", "missing.volb", "--gt", "gt.volb"]).status.code(), Some(1));
    assert_eq!(run(p, &["eval", "--seg", "aff.volb", "--gt", "gt.volb"]).status.code(), Some(1));
    assert_eq!(run(p, &["--threads", "0", "eval", "--seg", "gt.volb", "--gt", "gt.volb"]).status.code(), Some(2));
    assert_eq!(run(p, &["--help"]).status.code(), Some(0));
}

#[test]
fn noiseless_pipeline_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "6", &[]);
    let out = ok(p, &["pipeline", "--aff", "aff.volb", "--gt", "gt.volb", "--out-dir", "run", "--size-min", "0"]);
    assert_eq!(out, "0.000000,0.000000\n");
    for f in ["watershed.volb", "segmentation.volb", "tree.txt", "eval.csv"] {
        assert!(p.join("run").join(f).exists(), "{f}");
    }
}

#[test]
fn flags_override_config_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "6", &["--sigma", "0.3"]);
    fs::write(
        p.join("run.json"),
        r#"{"watershed": {"aff": "aff.volb", "out": "w.volb", "t_high": 0.5, "t_low": 0.1, "t_merge": 0.1, "size_min": 0}}"#,
    )
    .unwrap();
    let from_config = ok(p, &["--config", "run.json", "watershed"]);
    let explicit = ok(
        p,
        &["watershed", "--aff", "aff.volb", "--out", "w2.volb", "--t-high", "0.5", "--t-low", "0.1", "--t-merge", "0.1", "--size-min", "0"],
    );
    assert_eq!(from_config, explicit);
    let overridden = ok(p, &["--config", "run.json", "watershed", "--t-high", "0.99", "--out", "w3.volb"]);
    let explicit_high = ok(
        p,
        &["watershed", "--aff", "aff.volb", "--out", "w4.volb", "--t-high", "0.99", "--t-low", "0.1", "--t-merge", "0.1", "--size-min", "0"],
    );
    assert_eq!(overridden, explicit_high);
    assert_ne!(overridden, from_config);
    assert_eq!(fs::read(p.join("w3.volb")).unwrap(), fs::read(p.join("w4.volb")).unwrap());
    fs::write(p.join("bad.json"), r#"{"watershed": {"t_hihg": 0.5}}"#).unwrap();
    assert_eq!(run(p, &["--config", "bad.json", "watershed"]).status.code(), Some(2));
}

#[test]
fn inputs_are_never_modified() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "6", &["--sigma", "0.2"]);
    let before = (fs::read(p.join("gt.volb")).unwrap(), fs::read(p.join("aff.volb")).unwrap());
    ok(p, &["watershed", "--aff", "aff.volb", "--out", "w.volb", "--size-min", "0", "--t-high", "0.9"]);
    ok(p, &["malis-grad", "--aff", "aff.volb", "--gt", "gt.volb", "--corrected-out", "c.volb"]);
    ok(p, &["agglomerate", "--labels", "w.volb", "--aff", "aff.volb", "--out", "a.volb", "--tree", "t.txt"]);
    assert_eq!(run(p, &["watershed", "--aff", "aff.volb", "--out", "aff.volb"]).status.code(), Some(2));
    assert_eq!(run(p, &["agglomerate", "--labels", "w.volb", "--aff", "aff.volb", "--out", "w.volb"]).status.code(), Some(2));
    assert_eq!(before, (fs::read(p.join("gt.volb")).unwrap(), fs::read(p.join("aff.volb")).unwrap()));
}

#[test]
fn partitioned_run_stitches_to_the_whole_volume_result() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "4", &[]);
    ok(p, &["watershed", "--aff", "aff.volb", "--out", "whole.volb", "--size-min", "0"]);
    assert_eq!(ok(p, &["partition", "--aff", "aff.volb", "--block", "6x8x8", "--halo", "2x3x3", "--out-dir", "blocks"]), "blocks\n4\n");
    for i in 0..4 {
        let aff = format!("blocks/block_{i:04}.aff.volb");
        let labels = format!("blocks/block_{i:04}.labels.volb");
        ok(p, &["watershed", "--aff", &aff, "--out", &labels, "--size-min", "0"]);
    }
    ok(p, &["stitch", "--manifest", "blocks/manifest.txt", "--out", "stitched.volb"]);
    assert_eq!(ok(p, &["eval", "--seg", "stitched.volb", "--gt", "whole.volb"]), "0.000000,0.000000\n");
}
