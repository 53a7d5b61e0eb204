use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tbsim::experiment::{self, has_errors, Config, ExperimentKind, Severity, MANIFEST_FILE};
use tbsim::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Tunable beam splitter simulator.
#[derive(Parser)]
#[command(name = "tbsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Splitting-ratio fringe scan with heralded single photons.
    FringeScan(RunArgs),
    /// Two-photon interference versus relative delay.
    HomScan(RunArgs),
    /// Sampled modulator phase waveform with rise and fall times.
    SwitchTrace(RunArgs),
    /// Event-level feed-forward chain and programmable-delay sweep.
    FeedforwardRun(RunArgs),
    /// Closed-loop phase stabilization.
    LockSim(RunArgs),
    /// Re-run the experiment recorded in a manifest and compare hashes.
    Replay {
        /// manifest.json of an earlier run, or its output directory.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a configuration file without running anything.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the default configuration.
    Defaults,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; defaults are used for anything not set.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn load(path: Option<&Path>) -> Result<Config, Failure> {
    let config = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    Ok(config)
}

fn report(config: &Config) -> Result<(), Failure> {
    let diags = experiment::validate(config);
    for d in &diags {
        eprintln!("{d}");
    }
    if has_errors(&diags) {
        let n = diags.iter().filter(|d| d.severity == Severity::Error).count();
        return Err(Failure {
            code: EXIT_CONFIG,
            message: format!("{n} configuration error(s)"),
        });
    }
    Ok(())
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<(), Failure> {
    let mut config = load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    report(&config)?;
    let manifest = experiment::run_experiment(kind, &config, &args.out)?;
    println!(
        "{}: wrote {} artifact(s) and {MANIFEST_FILE} to {}",
        kind.name(),
        manifest.artifacts.len(),
        args.out.display()
    );
    println!(
        "{}",
        serde_json::to_string_pretty(&manifest.summary).expect("summary serializes")
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::FringeScan(a) => run(ExperimentKind::FringeScan, a),
        Command::HomScan(a) => run(ExperimentKind::HomScan, a),
        Command::SwitchTrace(a) => run(ExperimentKind::SwitchTrace, a),
        Command::FeedforwardRun(a) => run(ExperimentKind::FeedforwardRun, a),
        Command::LockSim(a) => run(ExperimentKind::LockSim, a),
        Command::Replay { manifest, out } => replay(&manifest, &out),
        Command::Validate { config } => load(config.as_deref()).and_then(|c| {
            report(&c)?;
            println!("configuration ok");
            Ok(())
        }),
        Command::Defaults => {
            print!("{}", Config::default().to_toml());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("tbsim: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn replay(manifest: &Path, out: &Path) -> Result<(), Failure> {
    let path = if manifest.is_dir() {
        manifest.join(MANIFEST_FILE)
    } else {
        manifest.to_path_buf()
    };
    let r = experiment::replay(&path, out)?;
    if !r.reproduced() {
        return Err(Failure {
            code: EXIT_RUNTIME,
            message: format!("replay differs in: {}", r.mismatches.join(", ")),
        });
    }
    println!(
        "{}: reproduced {} artifact(s) byte for byte",
        r.original.experiment.name(),
        r.original.artifacts.len()
    );
    Ok(())
}
