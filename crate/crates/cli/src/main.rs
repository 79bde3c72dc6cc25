use clap::{Parser, Subcommand};
use npr::simulators::SimulatorConfig;
use npr_cli::{artifacts, compare, run, simulate, verify, CliError, ConfigError, ExperimentConfig, RunOptions, Suite, Variant, VerifyOptions};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "npr", version, about = "Sequential neural likelihood inference with posterior regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (TOML), or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds run in parallel, at most this many at a time.
    #[arg(long)]
    workers: Option<usize>,
    /// Added to every configured seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured seed and write metrics, samples, checkpoints and a manifest.
    Run(RunArgs),
    /// Run the experiment once per λ schedule with shared seeds.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// NAME=KIND:LAMBDA0[:LAMBDA_FINAL]; replaces the config's variants.
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
    /// Run the oracle suites and print a JSON report; exit 0 iff all pass.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        toy_decay: Option<f64>,
    },
    /// Call a simulator directly and print one JSON line per call.
    Simulate {
        /// Takes the simulator from this config.
        #[arg(long, conflicts_with = "simulator")]
        config: Option<PathBuf>,
        /// Simulator name, with default settings.
        #[arg(long)]
        simulator: Option<String>,
        /// Comma-separated θ; drawn from the prior when absent.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        theta: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Write the JSON lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn options(args: &RunArgs) -> RunOptions {
    RunOptions {
        out: args.out.clone(),
        workers: args
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        seed_offset: args.seed_offset,
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => {
            let config = ExperimentConfig::load(&args.config)?;
            let summary = run(&config, &options(&args))?;
            println!("wrote {} rounds to {}", summary.records.len(), summary.out.display());
        }
        Command::Compare { run: args, variants } => {
            let config = ExperimentConfig::load(&args.config)?;
            let variants = variants
                .iter()
                .map(|v| Variant::parse(v).map_err(|e| ConfigError::new("--variant", format!("`{v}`: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let summary = compare(&config, &variants, &options(&args))?;
            println!(
                "wrote {} variants to {}",
                summary.variants.len(),
                summary.config.output_dir.as_deref().unwrap_or(std::path::Path::new(".")).display()
            );
        }
        Command::Verify {
            suite,
            out,
            seed,
            toy_decay,
        } => {
            let mut opts = VerifyOptions {
                seed,
                ..VerifyOptions::default()
            };
            if let Some(d) = toy_decay {
                opts.toy_decay = d;
            }
            let report = verify(suite, &opts);
            let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
            println!("{text}");
            if let Some(path) = out {
                artifacts::write_file(&path, &format!("{text}\n"))?;
            }
            if !report.passed {
                let failed: Vec<&str> = [
                    ("toy", report.toy.as_ref().map(|t| t.passed)),
                    ("theorem1", report.theorem1.as_ref().map(|t| t.passed)),
                    ("theorem2", report.theorem2.as_ref().map(|t| t.passed)),
                    ("gradcheck", report.gradcheck.as_ref().map(|t| t.passed)),
                ]
                .into_iter()
                .filter(|(_, p)| *p == Some(false))
                .map(|(n, _)| n)
                .collect();
                let mut what = failed.join(", ");
                for e in &report.errors {
                    what.push_str(if what.is_empty() { "" } else { "; " });
                    what.push_str(e);
                }
                return Err(CliError::VerifyFailed(what));
            }
        }
        Command::Simulate {
            config,
            simulator,
            theta,
            seed,
            count,
            out,
        } => {
            let sim = match (config, simulator) {
                (Some(path), _) => ExperimentConfig::load(&path)?.simulator,
                (None, Some(name)) => {
                    let table = format!("name = {}", toml::Value::String(name.clone()));
                    toml::from_str::<SimulatorConfig>(&table)
                        .map_err(|e| ConfigError::new("--simulator", format!("`{name}`: {}", e.message())))?
                }
                (None, None) => return Err(ConfigError::new("--simulator", "pass --simulator or --config").into()),
            };
            let records = simulate(&sim, theta.as_deref(), seed, count)?;
            let mut text = String::new();
            for r in &records {
                text.push_str(&serde_json::to_string(r).map_err(|e| CliError::Runtime(e.to_string()))?);
                text.push('\n');
            }
            match out {
                Some(path) => artifacts::write_file(&path, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
