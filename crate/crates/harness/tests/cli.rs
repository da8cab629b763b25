use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
    "task": "multiclass-toy", "seed": 2,
    "generator": {"clusters": 3, "classes": 3, "points_per_cluster": 20, "input_dim": 4},
    "model": {"hidden": [8], "projection_hidden": [8], "embedding_dim": 4},
    "batch_size": 8, "max_steps": 20, "eval_every": 10,
    "neighborhood": {"n": 3, "refresh_period": 10}
}"#;

fn nt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nt"))
        .args(args)
        .env("NT_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    let r = nt(&["gen", "--config", &cfg, "--out", &out("gen")]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let dataset = String::from_utf8(r.stdout).unwrap().trim().to_string();
    assert!(Path::new(&dataset).exists());

    let r = nt(&["train", "--config", &cfg, "--out", &out("train"), "--mode", "no-refine"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stdout).contains("best kl"));

    let ckpt = out("train/checkpoint-best.ntc");
    let r = nt(&["eval", "--config", &cfg, "--out", &out("eval"), "--checkpoint", &ckpt, "--dataset", &dataset]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert!(report["metrics"]["kl"].as_f64().unwrap() >= 0.0);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    let r = nt(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(report["seed"], 9);
    assert!(out.join("report.json").exists());
    assert!(out.join("config.resolved.json").exists());
}

#[test]
fn compare_prints_one_row_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("cmp");
    let r = nt(&["compare", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let table = String::from_utf8(r.stdout).unwrap();
    assert_eq!(table.lines().count(), 6, "{table}");
    for mode in ["mle", "ce-l2", "augment", "no-refine", "ours"] {
        assert!(table.lines().any(|l| l.starts_with(&format!("{mode},"))), "{mode}");
    }
}

#[test]
fn sweep_writes_a_report_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("sweep");
    let r = nt(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--sweep-lambda", "0,0.1,0.5,1.0"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let groups: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path().join("report.json");
            p.exists().then(|| {
                let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
                v["run_group"].as_str().unwrap().to_string()
            })
        })
        .collect();
    assert_eq!(groups.len(), 4);
    assert!(groups.iter().all(|g| g == &groups[0]));
}

#[test]
fn bad_configs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace(r#""seed": 2"#, r#""seed": 2, "objective": {"lambda": -1}"#));
    let r = nt(&["run", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("lambda"));

    let r = nt(&["run", "--config", "/nonexistent/cfg.json", "--out", dir.path().to_str().unwrap()]);
    assert!(!r.status.success());

    let r = nt(&["run", "--config", &cfg, "--out", "x", "--mode", "bogus"]);
    assert!(!r.status.success());
}

#[test]
fn failed_run_is_flagged_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace(r#""n": 3"#, r#""n": 400"#));
    let out = dir.path().join("run");
    let r = nt(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!r.status.success());
    assert!(out.join("FAILED").exists());
}
