use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vton-lab"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn vton-lab")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tiny model, 16x16 scenes, two iterations per phase, all five phases.
fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.json");
    ok(&["init-config", "--out", s(&path), "--preset", "cpu-smoke"]);
    let mut cfg: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    cfg["data"] = json!({"num_scenes": 4, "frames": 64, "height": 16, "width": 16});
    let m = &mut cfg["model"];
    m["base_channels"] = json!(4);
    m["channel_multipliers"] = json!([1, 1]);
    m["num_dit_blocks"] = json!(1);
    m["attention_heads"] = json!(1);
    m["pose_embed_channels"] = json!(1);
    cfg["schedule"]["num_steps"] = json!(20);
    let mut phases = Vec::new();
    for (i, t) in [1, 8, 16, 32, 64].into_iter().enumerate() {
        phases.push(json!({
            "name": if t == 1 { "image".to_string() } else { format!("t{t}") },
            "frame_length": t,
            "iterations": 2,
            "batch_size": if t == 1 { 2 } else { 1 },
            "image_batch_size": 2,
            "image_fraction": if t == 1 { 1.0 } else { 0.5 },
            "inflate_temporal": i == 1,
            "inject_resampling": t == 64,
        }));
    }
    cfg["plan"]["phases"] = Value::Array(phases);
    cfg["training"]["optimizer"]["warmup_steps"] = json!(1);
    cfg["training"]["optimizer"]["decay_steps"] = json!(10);
    cfg["sampler"]["num_steps"] = json!(4);
    cfg["eval"]["max_pairs"] = json!(2);
    cfg["eval"]["frames"] = json!(2);
    cfg["eval"]["sampler_steps"] = json!(3);
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

struct Trained {
    _dir: TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
    run: PathBuf,
}

/// One full training run shared by the tests that need checkpoints.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let root = dir.path().to_path_buf();
        let config = tiny_config(&root);
        let data = root.join("data");
        let run_dir = root.join("run");
        ok(&["gen-data", "--config", s(&config), "--out", s(&data)]);
        ok(&["train", "--config", s(&config), "--out", s(&run_dir), "--data", s(&data)]);
        Trained {
            _dir: dir,
            root,
            config,
            data,
            run: run_dir,
        }
    })
}

fn ckpt(phase: &str) -> PathBuf {
    trained().run.join("checkpoints").join(phase)
}

#[test]
fn gen_data_zero_and_ten_scenes() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(dir.path());
    let empty = dir.path().join("empty");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&empty), "--num-scenes", "0"]);
    let m: Value = serde_json::from_slice(&std::fs::read(empty.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["scenes"].as_array().unwrap().len(), 0);

    let ten = dir.path().join("ten");
    let again = dir.path().join("again");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&ten), "--num-scenes", "10", "--seed", "5"]);
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&again), "--num-scenes", "10", "--seed", "5", "--workers", "3"]);
    let a = std::fs::read(ten.join("manifest.json")).unwrap();
    let m: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(m["scenes"].as_array().unwrap().len(), 10);
    assert_eq!(a, std::fs::read(again.join("manifest.json")).unwrap());

    // training on an empty dataset is a usage error
    let out = run(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("r")), "--data", s(&empty)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_writes_every_phase() {
    let t = trained();
    for phase in ["image", "t8", "t16", "t32", "t64"] {
        assert!(ckpt(phase).join("manifest.json").is_file(), "{phase}");
        let log = std::fs::read_to_string(t.run.join("logs").join(format!("{phase}.jsonl"))).unwrap();
        assert_eq!(log.lines().count(), 2);
    }
    let run: Value = serde_json::from_slice(&std::fs::read(t.run.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["prediction_target"], "epsilon");
    assert!(run["config_hash"].as_str().unwrap().len() >= 16);
}

#[test]
fn single_phase_and_config_errors() {
    let t = trained();
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("r");
    ok(&["train", "--config", s(&t.config), "--out", s(&out_dir), "--data", s(&t.data), "--phase", "image"]);
    assert!(out_dir.join("checkpoints/image/manifest.json").is_file());
    assert!(!out_dir.join("checkpoints/t8").exists());

    // resuming with a different config is refused
    let mut cfg: Value = serde_json::from_slice(&std::fs::read(&t.config).unwrap()).unwrap();
    cfg["training"]["dropout"] = json!(0.2);
    let other = dir.path().join("other.json");
    std::fs::write(&other, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let out = run(&[
        "train", "--config", s(&other), "--out", s(&out_dir), "--data", s(&t.data), "--phase", "t8", "--resume",
        s(&out_dir.join("checkpoints/image")),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    let bad = dir.path().join("bad.json");
    cfg["data"]["height"] = json!(15);
    std::fs::write(&bad, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let out = run(&["train", "--config", s(&bad), "--out", s(&out_dir), "--data", s(&t.data)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.height"));

    std::fs::write(&bad, b"{\"seed\": 1, \"surprise\": true}").unwrap();
    assert_eq!(code(&run(&["train", "--config", s(&bad), "--out", s(&out_dir), "--data", s(&t.data)])), 2);
    assert_eq!(code(&run(&["train", "--bogus"])), 2);
}

fn sample_args<'a>(ck: &'a Path, data: &'a Path, out: &'a Path, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "sample", "--ckpt", s(ck), "--data", s(data), "--person", "0", "--garment", "1:3", "--steps", "4", "--out", s(out),
    ];
    v.extend_from_slice(extra);
    v
}

#[test]
fn sample_is_deterministic_and_records_metadata() {
    let t = trained();
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ck = ckpt("t8");
    ok(&sample_args(&ck, &t.data, &a, &["--seed", "7", "--cfg-weights", "1,1,3,1"]));
    ok(&sample_args(&ck, &t.data, &b, &["--seed", "7", "--cfg-weights", "1,1,3,1"]));
    let va = std::fs::read(a.join("video.safetensors")).unwrap();
    assert_eq!(va, std::fs::read(b.join("video.safetensors")).unwrap());
    assert_eq!(std::fs::read_dir(a.join("frames")).unwrap().count(), 8);
    let meta: Value = serde_json::from_slice(&std::fs::read(a.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["weights"], json!([1.0, 1.0, 3.0, 1.0]));
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["num_steps"], 4);
    assert_eq!(meta["phase"], "t8");

    let c = dir.path().join("c");
    ok(&sample_args(&ck, &t.data, &c, &["--seed", "8"]));
    assert_ne!(va, std::fs::read(c.join("video.safetensors")).unwrap());
}

#[test]
fn sample_frame_count_errors() {
    let t = trained();
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x");
    let r = run(&sample_args(&ckpt("t32"), &t.data, &out, &["--frames", "64"]));
    assert_eq!(code(&r), 3);
    assert!(String::from_utf8_lossy(&r.stderr).contains("resampling"));
    let r = run(&sample_args(&ckpt("t64"), &t.data, &out, &["--frames", "7"]));
    assert_eq!(code(&r), 2);
    let r = run(&sample_args(&ckpt("t8"), &t.data, &out, &["--cfg-weights", "1,2"]));
    assert_eq!(code(&r), 2);
    let r = run(&sample_args(&ckpt("t8"), &t.data, &out, &["--steps", "0"]));
    assert_eq!(code(&r), 2);
    let r = run(&sample_args(&t.root.join("nope"), &t.data, &out, &[]));
    assert_eq!(code(&r), 3);
}

#[test]
fn eval_table_is_reproducible() {
    let t = trained();
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ck = ckpt("t16");
    for out in [&a, &b] {
        ok(&["eval", "--ckpt", s(&ck), "--data", s(&t.data), "--out", s(out), "--config", s(&t.config)]);
    }
    let ja = std::fs::read(a.join("scores.json")).unwrap();
    assert_eq!(ja, std::fs::read(b.join("scores.json")).unwrap());
    let table: Value = serde_json::from_slice(&ja).unwrap();
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    for k in ["fid", "fvd", "garment_sim"] {
        assert!(rows[0]["scores"].get(k).is_some(), "{k}");
    }
    assert!(std::fs::read_to_string(a.join("scores.txt")).unwrap().contains("t16"));
}
