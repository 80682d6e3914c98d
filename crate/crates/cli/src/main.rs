use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use divcurriculum::io;
use divcurriculum_cli::{
    check_ablation_flag, eval_checkpoint, eval_summary, export, read_config_file, read_manifest, run_pipeline,
    CliResult, ExportKind,
};

#[derive(Parser)]
#[command(name = "divc", version, about = "Constrained novelty search and skill distillation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path override, e.g. `--set cns.iterations=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set alpha=VALUE`.
    #[arg(long)]
    alpha: Option<f64>,
}

impl ConfigArgs {
    fn overrides(&self, extra: &[String]) -> Vec<String> {
        let mut o = self.set.clone();
        if let Some(a) = self.alpha {
            o.push(format!("alpha={a:?}"));
        }
        if let Some(s) = self.seed {
            o.push(format!("seeds=[{s}]"));
        }
        o.extend_from_slice(extra);
        o
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run CNS, filtering, distillation and evaluation for every seed.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline with one ablation flag switched on.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// One of no_vmax, no_symmetric, from_scratch, no_diversity, utd_1, fixed_blend, high_penalty.
        #[arg(long)]
        flag: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit plot-ready CSVs from a completed run directory.
    Export {
        /// Run directory containing manifest.json.
        #[arg(long)]
        run: PathBuf,
        /// paths, curves or scatter.
        #[arg(long)]
        what: ExportKind,
        /// Destination directory; defaults to RUN/export.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint deterministically and write evaluation JSON-lines.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Take the config echoed in this run's manifest instead of --config.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Output JSON-lines file; the summary is printed to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Command::Run { cfg, out } => {
            let config = read_config_file(cfg.config.as_deref(), &cfg.overrides(&[]))?;
            let m = run_pipeline(&config, &out, "run", None)?;
            println!("wrote {} artifacts to {}", m.files.len(), out.display());
        }
        Command::Ablate { cfg, flag, out } => {
            check_ablation_flag(&flag)?;
            let config = read_config_file(cfg.config.as_deref(), &cfg.overrides(&[format!("ablation.{flag}=true")]))?;
            let m = run_pipeline(&config, &out, "ablate", Some(&flag))?;
            println!("wrote {} artifacts to {} [{flag}]", m.files.len(), out.display());
        }
        Command::Export { run, what, out } => {
            let out = out.unwrap_or_else(|| run.join("export"));
            for p in export(&run, what, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Eval { cfg, checkpoint, run, out } => {
            let config = match &run {
                Some(r) => divcurriculum_cli::load_config(Some(&read_manifest(r)?.config), &cfg.overrides(&[]))?,
                None => read_config_file(cfg.config.as_deref(), &cfg.overrides(&[]))?,
            };
            let seed = cfg.seed.unwrap_or(config.seeds[0]).wrapping_add(divcurriculum::pipeline::EVAL_SEED_OFFSET);
            let result = eval_checkpoint(&config, &checkpoint, seed)?;
            if let Some(p) = out {
                let recs = io::eval_records(&result, config.eval.episodes_per_skill);
                io::write_eval(io::create(&p).map_err(|e| e.to_string())?, &recs).map_err(|e| e.to_string())?;
            }
            println!("{}", eval_summary(&result));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
