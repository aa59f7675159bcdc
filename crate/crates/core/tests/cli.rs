use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn dgir(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dgir"));
    cmd.args(args).env_remove("DGIR_SEED");
    if let Some(s) = seed {
        cmd.env("DGIR_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn run_ok(cmd: &str, config: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = dgir(&args, None);
    assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

fn tiny(root: &Path) -> Value {
    json!({
        "seed": 3,
        "data": {"shape": [32, 32], "train": 4, "test": 2},
        "diffusion": {"architecture": {"widths": [8, 8, 16], "groups": 4, "time_dim": 16}, "steps": 4, "batch": 2},
        "registration": {"steps": 3, "batch": 2},
        "heatmap": {"pairs": 2, "keypoints_per_pair": 2},
        "ablation": {"values": [1, 50], "seeds": [0], "steps": 2},
        "paths": {
            "corpus": root.join("corpus"),
            "denoiser": root.join("denoiser"),
            "registration": root.join("registration")
        }
    })
}

#[test]
fn pipeline_runs_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = write_config(root, &tiny(root));
    run_ok("gen-data", &cfg, &root.join("corpus"), &[]);
    run_ok("train-diffusion", &cfg, &root.join("denoiser"), &[]);
    run_ok("train-registration", &cfg, &root.join("registration"), &[]);
    run_ok("evaluate", &cfg, &root.join("eval1"), &[]);
    run_ok("evaluate", &cfg, &root.join("eval2"), &[]);
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(root.join("eval1/eval_report.json")), read(root.join("eval2/eval_report.json")));
    assert_eq!(read(root.join("eval1/eval.csv")), read(root.join("eval2/eval.csv")));

    let manifest: Value = serde_json::from_slice(&read(root.join("eval1/run_manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "evaluate");
    assert_eq!(manifest["seed"], 3);
    for key in ["corpus", "registration"] {
        assert_eq!(manifest["inputs"][key].as_str().unwrap().len(), 64);
    }

    // The echoed config reproduces the registration run bit for bit.
    let echoed = root.join("registration/config.json");
    run_ok("train-registration", &echoed, &root.join("registration_again"), &[]);
    for f in ["history.json", "manifest.json"] {
        assert_eq!(read(root.join("registration").join(f)), read(root.join("registration_again").join(f)));
    }

    run_ok("heatmap", &cfg, &root.join("heatmap"), &[]);
    for f in ["heatmap_diffusion-cosine.pgm", "heatmap_mse.bin", "heatmap_ngf.json", "matches.json", "matches_overlay.pgm"] {
        assert!(root.join("heatmap").join(f).exists(), "{f}");
    }
    run_ok("ablate", &cfg, &root.join("ablate"), &[]);
    let csv = String::from_utf8(read(root.join("ablate/ablation_timestep.csv"))).unwrap();
    assert!(csv.starts_with("value,seed,dice_mean,"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn defaults_reproduce_the_reference_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &json!({"data": {"train": 1, "test": 1}}));
    let out = tmp.path().join("gen");
    run_ok("gen-data", &cfg, &out, &["--set", "registration.loss.kind=dgir"]);
    let resolved: Value = serde_json::from_slice(&std::fs::read(out.join("config.json")).unwrap()).unwrap();
    let loss = &resolved["registration"]["loss"];
    assert_eq!(loss["lambda"], 1.0);
    assert_eq!(loss["probe"]["t"], 50);
    assert_eq!(resolved["registration"]["lr"], 1e-4);
}

#[test]
fn environment_seed_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &json!({"seed": 1, "data": {"train": 1, "test": 1}}));
    let out = tmp.path().join("gen");
    let o = dgir(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], Some("42"));
    assert!(o.status.success());
    let m: Value = serde_json::from_slice(&std::fs::read(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 42);
}

#[test]
fn error_classes_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let out = root.join("out");
    let o = |cfg: &Path, cmd: &str| dgir(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);

    let bad = write_config(root, &json!({"registration": {"los": {}}}));
    let r = o(&bad, "evaluate");
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("registration.los"));

    let r = dgir(&["gen-data", "--config", bad.to_str().unwrap(), "--out", "x", "--set", "seed"], None);
    assert_eq!(r.status.code(), Some(2));

    let missing = write_config(root, &tiny(root));
    assert_eq!(o(&missing, "evaluate").status.code(), Some(3));
    assert_eq!(o(&root.join("nope.json"), "evaluate").status.code(), Some(3));

    let no_path = write_config(root, &json!({}));
    let r = o(&no_path, "train-diffusion");
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("paths.corpus"));
}
