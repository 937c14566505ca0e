use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tdks_runner::manifest::RunManifest;
use tdks_runner::scenario::format_ip_table;
use tdks_runner::{ground_table, parse_config, ConfigError, report, resume_scenario, run_scenario, Preset, RunOptions, RunnerError, ScenarioConfig};

#[derive(Parser)]
#[command(name = "tdks", version, about = "Real-time Kohn-Sham ionisation of diatomics in laser fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve ground states and print ionisation potentials.
    Ground(Common),
    /// Run the full scenario.
    Run(RunArgs),
    /// Continue the scenario recorded in the output directory.
    Resume(RunArgs),
    /// Regenerate yield tables and the summary from a manifest.
    Report {
        /// Output directory holding manifest.json.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML, see docs/config.md).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parameter bundle used when no config is given.
    #[arg(long, value_parser = ["desk", "production"])]
    preset: Option<String>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory, overriding the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Stop every run after this many steps (it stays resumable).
    #[arg(long)]
    max_steps: Option<usize>,
    /// Steps between checkpoints (default: one optical cycle).
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

fn load(common: &Common) -> Result<ScenarioConfig, RunnerError> {
    let mut config = match (&common.config, &common.preset) {
        (Some(path), preset) => {
            let text = fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
            // compiler-style `file:line: message`
            let config = parse_config(&text).map_err(|e| ConfigError {
                line: None,
                message: match e.line {
                    Some(l) => format!("{}:{l}: {}", path.display(), e.message),
                    None => format!("{}: {}", path.display(), e.message),
                },
            })?;
            if let Some(p) = preset {
                if p.parse::<Preset>()? != config.preset {
                    log::warn!("--preset {p} ignored; the config file sets preset = \"{}\"", config.preset);
                }
            }
            config
        }
        (None, Some(p)) => ScenarioConfig::from_preset(p.parse()?),
        (None, None) => ScenarioConfig::from_preset(Preset::Desk),
    };
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn finish(manifest: &RunManifest) -> u8 {
    let done = manifest.runs.iter().filter(|r| r.status == tdks_runner::RunStatus::Complete).count();
    println!("{done}/{} runs complete; manifest in {}", manifest.runs.len(), manifest.config.out_dir.display());
    for r in manifest.runs.iter().filter(|r| r.message.is_some()) {
        eprintln!("{}: {}", r.id, r.message.as_deref().unwrap_or_default());
    }
    manifest.worst_failure().map_or(0, |f| f.exit_code() as u8)
}

fn execute(cli: Cli) -> Result<u8, RunnerError> {
    match cli.command {
        Command::Ground(common) => {
            let config = load(&common)?;
            let rows = ground_table(&config, common.threads)?;
            print!("{}", format_ip_table(&rows));
            Ok(0)
        }
        Command::Run(args) => {
            let config = load(&args.common)?;
            let opts = RunOptions {
                threads: args.common.threads,
                max_steps_per_run: args.max_steps,
                checkpoint_interval: args.checkpoint_every,
            };
            Ok(finish(&run_scenario(&config, &opts)?))
        }
        Command::Resume(args) => {
            let opts = RunOptions {
                threads: args.common.threads,
                max_steps_per_run: args.max_steps,
                checkpoint_interval: args.checkpoint_every,
            };
            let manifest = match (&args.common.config, &args.common.out) {
                (None, Some(out)) => resume_scenario(out, &opts)?,
                _ => run_scenario(&load(&args.common)?, &opts)?,
            };
            Ok(finish(&manifest))
        }
        Command::Report { out } => {
            let manifest = report(&out)?;
            println!("{} artifacts listed in {}", manifest.artifacts.len(), out.join("manifest.json").display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
