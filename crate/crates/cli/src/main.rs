use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use lidl::problems::{by_id, reference_sampler, PROBLEM_IDS};
use lidl::SeedSpec;
use lidl_cli::config::ExperimentFile;
use lidl_cli::output::{fmt, run_experiment, Manifest};
use lidl_cli::{compare, exit_code, presets, UsageError};

#[derive(Parser)]
#[command(name = "lidl", version, about = "Ensemble Langevin experiments with mid-run enrichment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment file, a manifest from an earlier run, or a preset.
    Run {
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Join the curves of two or more result directories.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
    },
    /// Draw reference posterior samples for a built-in problem.
    Reference {
        problem: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List the presets, or print one.
    Presets { name: Option<String> },
}

fn load_experiment(config: Option<PathBuf>, preset: Option<String>) -> anyhow::Result<ExperimentFile> {
    match (config, preset) {
        (Some(_), Some(_)) => Err(UsageError("give either a config file or --preset, not both".into()).into()),
        (None, None) => Err(UsageError("give a config file or --preset NAME".into()).into()),
        (None, Some(name)) => presets::preset(&name),
        (Some(path), None) => {
            let text = fs::read_to_string(&path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
            let is_manifest = text.parse::<toml::Table>().is_ok_and(|t| t.contains_key("manifest_version"));
            if is_manifest {
                let dir = path.parent().map(PathBuf::from).unwrap_or_default();
                Ok(Manifest::load(&dir)?.experiment)
            } else {
                ExperimentFile::parse(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, preset, seed, workers, out } => {
            if let Some(n) = workers {
                if n == 0 {
                    return Err(UsageError("--workers must be positive".into()).into());
                }
                rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
            }
            let mut exp = load_experiment(config, preset)?;
            if let Some(s) = seed {
                exp.seed = s;
            }
            if let Some(o) = out {
                exp.out = Some(o);
            }
            let dir = exp.out.clone().unwrap_or_else(|| PathBuf::from("results").join(&exp.name));
            let outcome = run_experiment(&exp, &dir)?;
            println!("{} {}", outcome.manifest.content_hash, outcome.out_dir.display());
            let failed = outcome.failed_runs();
            if failed > 0 {
                anyhow::bail!("{failed} runs failed; partial results are in {}", outcome.out_dir.display());
            }
            Ok(())
        }
        Command::Compare { dirs, out } => {
            for path in compare::compare(&dirs, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Reference { problem, n, out, seed } => {
            let p = by_id(&problem).map_err(|e| UsageError(format!("{e}; known problems: {}", PROBLEM_IDS.join(", "))))?;
            if n == 0 {
                return Err(UsageError("--n must be positive".into()).into());
            }
            let sample = reference_sampler(p.as_ref(), n, &SeedSpec::new(seed, 0))?;
            if let Some(acc) = sample.acceptance {
                log::info!("acceptance rate {acc:.3}");
            }
            if sample.quality_warning {
                log::warn!("low acceptance rate; the reference sample may be poor");
            }
            let d = sample.measure.dim();
            let mut w = csv::Writer::from_path(&out).with_context(|| format!("writing {}", out.display()))?;
            w.write_record((0..d).map(|j| format!("y{j}")))?;
            for i in 0..sample.measure.len() {
                w.write_record(sample.measure.atom(i).iter().map(|v| fmt(*v)))?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Presets { name: None } => {
            for (name, _) in presets::PRESETS {
                println!("{name}");
            }
            Ok(())
        }
        Command::Presets { name: Some(name) } => {
            print!("{}", presets::preset_text(&name)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
