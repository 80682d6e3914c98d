use std::path::Path;
use std::process::{Command, Output};

use divcurriculum::io;
use divcurriculum_cli::{load_config, read_manifest, Manifest};

const TINY: &str = r#"
version = 1
skills = 3
seeds = [0, 1]
exec = "sequential"

[cns]
iterations = 4

[distill]
total_steps = 400
num_envs = 4
batch_size = 16
hidden_size = 8
hidden_depth = 1
num_critics = 2
eval_interval = 200

[eval]
episodes_per_skill = 2
"#;

fn divc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_divc")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

fn run_tiny(dir: &Path, extra: &[&str]) -> (String, Manifest) {
    let cfg = write_config(dir);
    let out = dir.join("run").to_string_lossy().into_owned();
    let mut args = vec!["run", "--config", &cfg, "--out", &out];
    args.extend_from_slice(extra);
    ok(&divc(&args));
    let m = read_manifest(Path::new(&out)).unwrap();
    (out, m)
}

#[test]
fn run_writes_seed_artifacts_and_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, m) = run_tiny(tmp.path(), &["--alpha", "0.5"]);
    for seed in [0, 1] {
        for f in ["archive.jsonl", "metrics.csv", "checkpoint.txt", "eval.jsonl", "summary.json", "cns_trace.csv"] {
            let rel = format!("seed_{seed}/{f}");
            let p = Path::new(&out).join(&rel);
            assert!(p.exists(), "{rel} missing");
            assert_eq!(m.files[&rel], io::sha256_file(&p).unwrap());
        }
    }
    let echoed = load_config(Some(&m.config), &[]).unwrap();
    assert_eq!(echoed.alpha, 0.5);
    assert_eq!(m.command, "run");
    assert!(m.version.starts_with("divcurriculum "));
}

#[test]
fn manifest_config_reproduces_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, m) = run_tiny(tmp.path(), &["--seed", "1"]);
    let echo = tmp.path().join("echo.toml");
    std::fs::write(&echo, &m.config).unwrap();
    let again = tmp.path().join("again");
    ok(&divc(&["run", "--config", echo.to_str().unwrap(), "--out", again.to_str().unwrap()]));
    let a = std::fs::read(Path::new(&out).join("seed_1/metrics.csv")).unwrap();
    let b = std::fs::read(again.join("seed_1/metrics.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(read_manifest(&again).unwrap().files, m.files);
}

#[test]
fn unknown_keys_and_bad_values_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = divc(&["run", "--out", out.to_str().unwrap(), "--set", "cns.iters=3"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("iters"));
    for bad in ["alpha=1.5", "cns.keep_fraction=0.0", "cns.popsize=1"] {
        let o = divc(&["run", "--out", out.to_str().unwrap(), "--set", bad]);
        assert!(!o.status.success(), "{bad} accepted");
    }
    let cfg = tmp.path().join("v.toml");
    std::fs::write(&cfg, "version = 2\n").unwrap();
    let o = divc(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn ablate_tags_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("abl");
    ok(&divc(&["ablate", "--config", &cfg, "--flag", "utd_1", "--seed", "0", "--out", out.to_str().unwrap()]));
    let m = read_manifest(&out).unwrap();
    assert_eq!(m.ablation.as_deref(), Some("utd_1"));
    assert!(load_config(Some(&m.config), &[]).unwrap().ablation.utd_1);
    let summary = std::fs::read_to_string(out.join("seed_0/summary.json")).unwrap();
    assert!(summary.contains("utd_1"));
    let o = divc(&["ablate", "--config", &cfg, "--flag", "bogus", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn exports_have_expected_shape_and_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, _) = run_tiny(tmp.path(), &[]);
    for what in ["paths", "curves", "scatter"] {
        ok(&divc(&["export", "--run", &out, "--what", what]));
    }
    let ex = Path::new(&out).join("export");
    for seed in [0, 1] {
        for skill in 0..3 {
            let (h, rows) =
                io::read_table(io::open(&ex.join(format!("seed_{seed}/skill_{skill}.csv"))).unwrap()).unwrap();
            assert_eq!(h, ["t", "x", "y"]);
            assert_eq!(rows.len(), 100);
        }
    }
    let (h, rows) = io::read_table(io::open(&ex.join("curves.csv")).unwrap()).unwrap();
    assert_eq!(h, ["step", "return_iqm", "diversity_iqm"]);
    assert_eq!(rows.len(), 2);
    let text = std::fs::read(ex.join("scatter.csv")).unwrap();
    let (h, rows) = io::read_table(text.as_slice()).unwrap();
    assert_eq!(rows.len(), 2);
    let mut again = Vec::new();
    io::write_table(&mut again, &h.iter().map(String::as_str).collect::<Vec<_>>(), &rows).unwrap();
    assert_eq!(again, text);
    let o = divc(&["export", "--run", tmp.path().to_str().unwrap(), "--what", "curves"]);
    assert!(!o.status.success());
}

#[test]
fn eval_matches_run_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, _) = run_tiny(tmp.path(), &["--seed", "0"]);
    let ck = Path::new(&out).join("seed_0/checkpoint.txt");
    let dump = tmp.path().join("eval.jsonl");
    let o = divc(&[
        "eval",
        "--run",
        &out,
        "--checkpoint",
        ck.to_str().unwrap(),
        "--seed",
        "0",
        "--out",
        dump.to_str().unwrap(),
    ]);
    ok(&o);
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(&out).join("seed_0/summary.json")).unwrap()).unwrap();
    assert_eq!(printed["mean_return"], summary["mean_return"]);
    assert_eq!(printed["diversity"], summary["diversity"]);
    assert_eq!(std::fs::read(&dump).unwrap(), std::fs::read(Path::new(&out).join("seed_0/eval.jsonl")).unwrap());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let text = std::fs::read_to_string(&path).unwrap();
            load_config(Some(&text), &[]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
