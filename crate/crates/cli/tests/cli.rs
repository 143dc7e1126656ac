use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dualx_core::io::{read_clip, write_clip, FrameFormat};
use dualx_core::{Init, Rng, Tensor, VideoClip};
use serde_json::Value;

const DESK: &str = "model.preset=desk";

fn dualx(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualx")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dualx(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn random_clip(dir: &Path, n: usize, h: usize, w: usize, seed: u64) {
    let mut rng = Rng::new(seed);
    let t = Tensor::create(&[1, 3, n, h, w], Init::Uniform { lo: 0.0, hi: 1.0 }, &mut rng).unwrap();
    write_clip(dir, &VideoClip::<f32>::new(t).unwrap(), FrameFormat::Png).unwrap();
}

fn frames(dir: &Path) -> Vec<Vec<u8>> {
    let mut names: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|e| e == "png")).collect();
    names.sort();
    names.iter().map(|p| fs::read(p).unwrap()).collect()
}

#[test]
fn infer_upscales_sixteen_frames_by_four() {
    let d = tempfile::tempdir().unwrap();
    random_clip(&d.path().join("lq"), 16, 64, 64, 1);
    ok(d.path(), &["infer", "--override", DESK, "--override", "tiling.tile=32", "--in", "lq", "--out", "sr", "--plan", "plan.json"]);
    let sr = read_clip::<f32>(&d.path().join("sr")).unwrap();
    assert_eq!(sr.tensor().shape(), &[1, 3, 16, 256, 256]);
    let plan: Value = serde_json::from_str(&fs::read_to_string(d.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["clips"][0]["plan"]["rows"]["starts"].as_array().unwrap().len(), 3);
}

#[test]
fn eval_of_identical_clips_is_perfect() {
    let d = tempfile::tempdir().unwrap();
    random_clip(&d.path().join("hq"), 3, 24, 24, 2);
    let report: Value = serde_json::from_str(&ok(d.path(), &["eval", "--ref", "hq", "--test", "hq"])).unwrap();
    assert_eq!(report["psnr"], 100.0);
    assert!((report["ssim"].as_f64().unwrap() - 1.0).abs() <= 1e-9);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 16);
}

#[test]
fn degrade_is_deterministic_per_seed() {
    let d = tempfile::tempdir().unwrap();
    random_clip(&d.path().join("hq"), 2, 32, 32, 3);
    for out in ["a", "b"] {
        ok(d.path(), &["degrade", "--seed", "7", "--in", "hq", "--out", out]);
    }
    ok(d.path(), &["degrade", "--seed", "8", "--in", "hq", "--out", "c"]);
    assert_eq!(frames(&d.path().join("a")), frames(&d.path().join("b")));
    assert_ne!(frames(&d.path().join("a")), frames(&d.path().join("c")));
    let prov: Value = serde_json::from_str(&fs::read_to_string(d.path().join("a/provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["details"]["params"]["seed"], 7);
}

#[test]
fn datasets_mirror_their_clip_directories() {
    let d = tempfile::tempdir().unwrap();
    random_clip(&d.path().join("hq/one"), 2, 16, 16, 4);
    random_clip(&d.path().join("hq/two"), 3, 16, 24, 5);
    ok(d.path(), &["degrade", "--in", "hq", "--out", "lq"]);
    assert_eq!(read_clip::<f32>(&d.path().join("lq/two")).unwrap().tensor().shape(), &[1, 3, 3, 4, 6]);
    let report: Value = serde_json::from_str(&ok(d.path(), &["eval", "--ref", "hq", "--test", "hq", "--motion", "--override", "eval.motion_block=4", "--override", "eval.motion_search=2"])).unwrap();
    assert_eq!(report["clips"].as_array().unwrap().len(), 2);
}

#[test]
fn usage_errors_exit_two_and_runtime_errors_one() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(dualx(d.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(dualx(d.path(), &["eval", "--bogus"]).status.code(), Some(2));
    let out = dualx(d.path(), &["eval", "--ref", "missing", "--test", "missing"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: "));
    let out = dualx(d.path(), &["profile", "--override", "model.depth=3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_rejects_unknown_keys() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("c.toml"), "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = dualx(d.path(), &["--config", "c.toml", "profile"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn profile_reports_reference_figures() {
    let d = tempfile::tempdir().unwrap();
    let v: Value = serde_json::from_str(&ok(d.path(), &["profile", "--json"])).unwrap();
    assert_eq!(v["profile"]["comparison"]["reference_macs"], 99.41e9);
    assert_eq!(v["profile"]["comparison"]["reference_params"], 127.95e6);
    assert_eq!(v["profile"]["input_shape"], serde_json::json!([1, 3, 16, 64, 64]));
    let text = ok(d.path(), &["profile", "--override", DESK, "--shape", "1,3,4,16,16"]);
    assert!(text.contains("transformer") && text.contains("convention"));
}

#[test]
fn training_writes_checkpoint_trace_and_resumes() {
    let d = tempfile::tempdir().unwrap();
    random_clip(&d.path().join("hq"), 2, 16, 16, 6);
    let common = ["--override", DESK, "--override", "train.crop=16", "--override", "train.frames=2", "--override", "train.iterations=3"];
    let args = |extra: &[&'static str]| common.iter().copied().chain(extra.iter().copied()).collect::<Vec<_>>();
    ok(d.path(), &args(&["train", "--in", "hq", "--out", "m.dxckpt", "--override", "train.checkpoint_every=2"]));
    let trace = fs::read_to_string(d.path().join("m.trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 3);
    let first: Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    assert_eq!(first["iteration"], 0);
    ok(d.path(), &args(&["train", "--in", "hq", "--init", "m.dxckpt", "--out", "m2.dxckpt", "--override", "train.stage=2"]));
    let out = dualx(d.path(), &["train", "--in", "hq", "--init", "m.dxckpt", "--out", "m3.dxckpt"]);
    assert_eq!(out.status.code(), Some(1), "full-size config must not accept a desk checkpoint");
}

#[test]
fn thread_cap_does_not_change_outputs() {
    let d = tempfile::tempdir().unwrap();
    random_clip(&d.path().join("lq"), 3, 12, 20, 7);
    let run = |threads: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_dualx"))
            .current_dir(d.path())
            .env("DUALX_THREADS", threads)
            .args(["infer", "--override", DESK, "--override", "tiling.tile=8", "--override", "tiling.overlap=2", "--override", "seed=4", "--in", "lq", "--out", out])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("1", "a");
    run("4", "b");
    assert_eq!(frames(&d.path().join("a")), frames(&d.path().join("b")));
}

fn ablate(suite: &str) -> Value {
    let d = tempfile::tempdir().unwrap();
    let overrides = [
        DESK,
        "train.crop=16",
        "train.frames=2",
        "train.iterations=1",
        "synth.frames=2",
        "synth.height=32",
        "synth.width=32",
        "eval.holdout_clips=1",
    ];
    let mut args = vec!["ablate", "--suite", suite, "--json"];
    for o in &overrides {
        args.extend(["--override", o]);
    }
    serde_json::from_str(&ok(d.path(), &args)).unwrap()
}

#[test]
fn attention_suite_emits_one_row_per_variant() {
    let v = ablate("table1");
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r["units"] == rows[0]["units"] && r["psnr"].as_f64().unwrap().is_finite()));
    let scores = |name: &str| rows.iter().find(|r| r["name"] == name).unwrap()["score_macs"].as_u64().unwrap();
    assert!(scores("temporal") < scores("dual_axial"));
    assert!(scores("dual_axial") < scores("spatial_temporal"));
    assert!(scores("spatial_temporal") < scores("spatial"));
}

#[test]
fn design_and_training_suites_run() {
    assert_eq!(ablate("table7")["rows"].as_array().unwrap().len(), 4);
    let v = ablate("table8");
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().filter(|r| r["pretrain"] == true).count(), 3);
}
