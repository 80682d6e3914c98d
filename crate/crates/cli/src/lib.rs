//! Configuration loading, run orchestration and artifact export behind the `divc` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use divcurriculum::config::{EnvKind, RunConfig, ABLATION_FLAGS};
use divcurriculum::distill::{evaluate_policies, EvalResult};
use divcurriculum::envs::{MazeEnv, PushEnv};
use divcurriculum::io;
use divcurriculum::nn::Checkpoint;
use divcurriculum::pipeline::{self, SeedReport};
use divcurriculum::stats::iqm;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub type CliResult<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Parses `key=value`; the value is read as a TOML literal, falling back to a bare string.
pub fn parse_override(s: &str) -> CliResult<(Vec<String>, toml::Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("override `{s}` is not of the form key=value"))?;
    let path: Vec<String> = k.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(format!("override `{s}` has an empty key segment"));
    }
    let v = v.trim();
    let value = toml::from_str::<toml::Table>(&format!("x = {v}"))
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((path, value))
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> CliResult<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = root;
    for p in parents {
        let entry = node.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| format!("`{p}` is not a table"))?;
    }
    node.insert(last.clone(), value);
    Ok(())
}

/// Builds a validated config from an optional TOML document and dotted overrides.
pub fn load_config(text: Option<&str>, overrides: &[String]) -> CliResult<RunConfig> {
    let mut table: toml::Table = match text {
        Some(t) => toml::from_str(t).map_err(|e| format!("config parse error: {e}"))?,
        None => toml::Table::new(),
    };
    for o in overrides {
        let (path, value) = parse_override(o)?;
        apply_override(&mut table, &path, value)?;
    }
    let cfg: RunConfig =
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| format!("config error: {}", e.message()))?;
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

pub fn read_config_file(path: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?),
        None => None,
    };
    load_config(text.as_deref(), overrides)
}

pub fn config_to_toml(cfg: &RunConfig) -> CliResult<String> {
    toml::to_string(cfg).map_err(err)
}

/// Crate version plus the `git describe` output captured at build time.
pub fn version_string() -> String {
    format!("divcurriculum {} ({})", env!("CARGO_PKG_VERSION"), env!("DIVC_GIT_DESCRIBE"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub ablation: Option<String>,
    pub seeds: Vec<u64>,
    /// Effective configuration as a TOML document.
    pub config: String,
    /// SHA-256 of every artifact, keyed by path relative to the output directory.
    pub files: BTreeMap<String, String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

fn relative(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

/// Runs the pipeline for every seed and writes artifacts plus a manifest.
pub fn run_pipeline(cfg: &RunConfig, out: &Path, command: &str, ablation: Option<&str>) -> CliResult<Manifest> {
    std::fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    let eff = cfg.effective();
    let mut files = BTreeMap::new();
    for &seed in &cfg.seeds {
        log::info!("seed {seed}: running");
        let run = pipeline::run_seed(cfg, seed).map_err(|e| format!("seed {seed}: {e}"))?;
        let dir = pipeline::seed_dir(out, seed);
        for p in pipeline::write_seed(&dir, &run, &eff).map_err(err)? {
            files.insert(relative(out, &p), io::sha256_file(&p).map_err(err)?);
        }
        log::info!("seed {seed}: return {:.2}, diversity {:.3}", run.report.mean_return, run.report.diversity);
    }
    let config = config_to_toml(cfg)?;
    let echo = out.join(CONFIG_ECHO_FILE);
    std::fs::write(&echo, &config).map_err(err)?;
    files.insert(CONFIG_ECHO_FILE.to_string(), io::sha256_file(&echo).map_err(err)?);
    let manifest = Manifest {
        version: version_string(),
        command: command.to_string(),
        ablation: ablation.map(str::to_string),
        seeds: cfg.seeds.clone(),
        config,
        files,
    };
    let f = io::create(&out.join(MANIFEST_FILE)).map_err(err)?;
    serde_json::to_writer_pretty(f, &manifest).map_err(err)?;
    Ok(manifest)
}

pub fn check_ablation_flag(flag: &str) -> CliResult<()> {
    if ABLATION_FLAGS.contains(&flag) {
        Ok(())
    } else {
        Err(format!("unknown ablation flag `{flag}` (expected one of {})", ABLATION_FLAGS.join(", ")))
    }
}

pub fn read_manifest(run: &Path) -> CliResult<Manifest> {
    let f = io::open(&run.join(MANIFEST_FILE)).map_err(err)?;
    serde_json::from_reader(f).map_err(|e| format!("manifest: {e}"))
}

fn seed_file(run: &Path, seed: u64, name: &str) -> CliResult<PathBuf> {
    let p = pipeline::seed_dir(run, seed).join(name);
    if p.exists() {
        Ok(p)
    } else {
        Err(format!("missing artifact {}", p.display()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportKind {
    Paths,
    Curves,
    Scatter,
}

impl std::str::FromStr for ExportKind {
    type Err = String;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "paths" => Ok(Self::Paths),
            "curves" => Ok(Self::Curves),
            "scatter" => Ok(Self::Scatter),
            _ => Err(format!("unknown export `{s}` (expected paths, curves or scatter)")),
        }
    }
}

/// Writes plot-ready CSVs for a completed run and returns their paths.
pub fn export(run: &Path, what: ExportKind, out: &Path) -> CliResult<Vec<PathBuf>> {
    let manifest = read_manifest(run)?;
    let mut written = Vec::new();
    match what {
        ExportKind::Paths => {
            for &seed in &manifest.seeds {
                let recs =
                    io::read_eval(io::open(&seed_file(run, seed, pipeline::EVAL_FILE)?).map_err(err)?).map_err(err)?;
                for r in recs.iter().filter(|r| r.episode == 0) {
                    let rows: Vec<Vec<f64>> = r
                        .features
                        .iter()
                        .enumerate()
                        .map(|(t, f)| {
                            vec![t as f64, f.first().copied().unwrap_or(0.0), f.get(1).copied().unwrap_or(0.0)]
                        })
                        .collect();
                    let p = out.join(format!("seed_{seed}")).join(format!("skill_{}.csv", r.skill));
                    io::write_table(io::create(&p).map_err(err)?, &["t", "x", "y"], &rows).map_err(err)?;
                    written.push(p);
                }
            }
        }
        ExportKind::Curves => {
            let mut per_seed = Vec::new();
            for &seed in &manifest.seeds {
                per_seed.push(
                    io::read_metrics(io::open(&seed_file(run, seed, pipeline::METRICS_FILE)?).map_err(err)?)
                        .map_err(err)?,
                );
            }
            let len = per_seed.iter().map(Vec::len).min().unwrap_or(0);
            let rows: Vec<Vec<f64>> = (0..len)
                .map(|k| {
                    let ret: Vec<f64> = per_seed.iter().map(|m| m[k].eval_return).collect();
                    let div: Vec<f64> = per_seed.iter().map(|m| m[k].eval_diversity).collect();
                    vec![per_seed[0][k].step as f64, iqm(&ret), iqm(&div)]
                })
                .collect();
            let p = out.join("curves.csv");
            io::write_table(io::create(&p).map_err(err)?, &["step", "return_iqm", "diversity_iqm"], &rows)
                .map_err(err)?;
            written.push(p);
        }
        ExportKind::Scatter => {
            let mut rows = Vec::new();
            for &seed in &manifest.seeds {
                let s: SeedReport =
                    serde_json::from_reader(io::open(&seed_file(run, seed, pipeline::SUMMARY_FILE)?).map_err(err)?)
                        .map_err(err)?;
                rows.push(vec![seed as f64, s.mean_return, s.diversity]);
            }
            let p = out.join("scatter.csv");
            io::write_table(io::create(&p).map_err(err)?, &["seed", "return", "diversity"], &rows).map_err(err)?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Evaluates a checkpoint on the environment described by `cfg`.
pub fn eval_checkpoint(cfg: &RunConfig, checkpoint: &Path, seed: u64) -> CliResult<EvalResult> {
    let ck = Checkpoint::load(checkpoint).map_err(err)?;
    let cfg = cfg.effective();
    let (eps, jitter, exec) = (cfg.eval.episodes_per_skill, cfg.eval.jitter, cfg.exec);
    match cfg.env {
        EnvKind::Maze => evaluate_policies(&ck, &MazeEnv::new(cfg.maze.clone()).map_err(err)?, eps, seed, jitter, exec),
        EnvKind::Push => evaluate_policies(&ck, &PushEnv::new(cfg.push.clone()).map_err(err)?, eps, seed, jitter, exec),
    }
    .map_err(err)
}

pub fn eval_summary(r: &EvalResult) -> serde_json::Value {
    json!({ "returns": r.returns, "mean_return": r.mean_return(), "diversity": r.diversity })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_values() {
        assert_eq!(parse_override("alpha=0.5").unwrap(), (vec!["alpha".into()], toml::Value::Float(0.5)));
        assert_eq!(parse_override("cns.iterations = 7").unwrap().1, toml::Value::Integer(7));
        assert_eq!(parse_override("env=push").unwrap().1, toml::Value::String("push".into()));
        assert_eq!(parse_override("seeds=[1, 2]").unwrap().1, toml::Value::Array(vec![1.into(), 2.into()]));
        assert!(parse_override("alpha").is_err());
        assert!(parse_override("a..b=1").is_err());
    }
}
