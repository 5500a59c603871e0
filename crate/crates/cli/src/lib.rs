//! Command implementations behind the `specsim` binary.

pub mod pipeline;
pub mod sweep;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use specsim::engine::{write_event_log, SimOptions};
use specsim::latency::{synth_profile, SynthSpec};
use specsim::metrics::{write_csv, Report};
use specsim::scenario::{load_workload, run_config};
use specsim::topology::{auto_topology, default_synth_spec, parse_config, Config};
use specsim::workload::write_trace;
use specsim::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "specsim", version, about = "Distributed speculative decoding simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write its report.
    Run(RunArgs),
    /// Run every point of a sweep spec and summarise.
    Sweep(sweep::SweepArgs),
    /// Label a scenario grid by exhaustive window sweeps.
    GenDataset(pipeline::GenDatasetArgs),
    /// Fit the window-control regressor on a dataset.
    Train(pipeline::TrainArgs),
    /// Compare static, dynamic and learned window control on held-out scenarios.
    EvalPolicy(pipeline::EvalArgs),
    /// Write the synthetic workload of a config as a trace file.
    GenTrace(GenTraceArgs),
    /// Generate a dense latency profile from a synthetic spec.
    GenProfile(GenProfileArgs),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    /// Warn about unknown config keys instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Also write a JSONL log of batch and state events.
    #[arg(long)]
    pub event_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenTraceArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct GenProfileArgs {
    /// Synthetic spec (YAML or JSON). Without it, the default profile for
    /// the deployment in `--deployment` (or a one-target, one-draft setup).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Deployment config whose device types the default profile covers.
    #[arg(long)]
    pub deployment: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_config_error() {
            EXIT_CONFIG
        } else {
            EXIT_RUNTIME
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

/// Opens `path` for writing, or stdout.
pub(crate) fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            let f = File::create(p).map_err(|e| io_err(p, e))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(BufWriter::new(std::io::stdout()))),
    }
}

pub(crate) fn write_report_as(report: &Report, format: Format, out: Option<&Path>) -> CliResult<()> {
    let mut w = output(out)?;
    match format {
        Format::Json => w
            .write_all(report.to_json().as_bytes())
            .map_err(|e| CliError::runtime(e.to_string()))?,
        Format::Csv => write_csv(report, &mut w)?,
    }
    w.flush().map_err(|e| CliError::runtime(e.to_string()))
}

pub(crate) fn load_config(path: &Path, lenient: bool) -> CliResult<Config> {
    let (config, warnings) = parse_config(path, !lenient)?;
    for w in warnings {
        eprintln!("warning: {}: unknown key `{w}` ignored", path.display());
    }
    Ok(config)
}

pub fn cmd_run(args: &RunArgs) -> CliResult<()> {
    let config = load_config(&args.config, args.lenient)?;
    let seed = args.seed.unwrap_or_else(|| config.seed_or_default());
    let options = SimOptions {
        event_log: args.event_log.is_some(),
        ..SimOptions::default()
    };
    let (report, out) = run_config(&config, seed, options)?;
    write_report_as(&report, args.format, args.out.as_deref())?;
    if let Some(path) = &args.event_log {
        let mut w = output(Some(path))?;
        write_event_log(&out.events, &mut w)?;
        w.flush().map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

pub fn cmd_gen_trace(args: &GenTraceArgs) -> CliResult<()> {
    let config = load_config(&args.config, args.lenient)?;
    let seed = args.seed.unwrap_or_else(|| config.seed_or_default());
    let topology = auto_topology(&config)?;
    let (records, _) = load_workload(&config.workload, topology.n_drafts(), seed)?;
    let mut w = output(args.out.as_deref())?;
    write_trace(&records, &mut w)?;
    w.flush().map_err(|e| CliError::runtime(e.to_string()))
}

pub fn cmd_gen_profile(args: &GenProfileArgs) -> CliResult<()> {
    let spec: SynthSpec = match (&args.config, &args.deployment) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::from(Error::File {
                path: path.clone(),
                source: e,
            }))?;
            serde_yaml::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        }
        (None, Some(path)) => default_synth_spec(&auto_topology(&load_config(path, false)?)?),
        (None, None) => {
            let (c, _) = specsim::topology::parse_config_str("targets: 1\ndrafts: 1\n", true)?;
            default_synth_spec(&auto_topology(&c)?)
        }
    };
    let profile = synth_profile(&spec)?;
    match &args.out {
        Some(p) => profile.save(p)?,
        None => {
            let text = serde_json::to_string_pretty(profile.file_repr())
                .map_err(|e| CliError::runtime(e.to_string()))?;
            println!("{text}");
        }
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => sweep::cmd_sweep(a),
        Command::GenDataset(a) => pipeline::cmd_gen_dataset(a),
        Command::Train(a) => pipeline::cmd_train(a),
        Command::EvalPolicy(a) => pipeline::cmd_eval_policy(a),
        Command::GenTrace(a) => cmd_gen_trace(a),
        Command::GenProfile(a) => cmd_gen_profile(a),
    }
}

/// Parses `argv` and runs the command; returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

/// Worker pool of the requested width (all cores when `None`).
pub(crate) fn pool(parallel: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = parallel {
        if n == 0 {
            return Err(CliError::usage("--parallel must be at least 1"));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::runtime(e.to_string()))
}
