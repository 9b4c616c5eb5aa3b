//! Command-line driver: `verify`, `train`, `decode`, `bench` and `emissions`.

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use multiblank::{BlankSet, Error, Result};

use crate::config::RunConfig;
use crate::report::RunReport;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "multiblank", version, about = "Multi-blank transducer toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compare the dynamic-programming loss and gradient against the exhaustive oracle.
    Verify(VerifyArgs),
    /// Train a toy model and write a checkpoint.
    Train(TrainArgs),
    /// Greedy-decode a data set with a checkpoint.
    Decode(DecodeArgs),
    /// Compare decoding cost of a baseline and a candidate checkpoint.
    Bench(BenchArgs),
    /// Count emitted labels and blanks per duration.
    Emissions(DecodeArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct CommonArgs {
    /// JSON configuration file; flags take precedence over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Under-normalization strength [default: 0.05].
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Blank durations, comma separated; must include 1.
    #[arg(long)]
    pub blanks: Option<BlankSet>,
    /// Decoding batch size; 1 is exact greedy [default: 1].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Labels allowed per frame before a blank is forced [default: 10].
    #[arg(long)]
    pub max_symbols: Option<usize>,
    /// Directory for the report and any other outputs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Trials that also get a finite-difference gradient check.
    #[arg(long)]
    pub grad_trials: Option<usize>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long)]
    pub max_labels: Option<usize>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// JSON-lines training data; synthesized when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON-lines held-out data; synthesized when omitted.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Utterances per training step.
    #[arg(long)]
    pub train_batch_size: Option<usize>,
    /// Size of the synthesized training set.
    #[arg(long)]
    pub train_count: Option<usize>,
    /// Size of the synthesized held-out set.
    #[arg(long)]
    pub test_count: Option<usize>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// JSON-lines data; the synthesized held-out set when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub test_count: Option<usize>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub candidate: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub test_count: Option<usize>,
}

impl CommonArgs {
    /// Defaults, then the config file, then these flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.sigma {
            c.sigma = v;
        }
        if let Some(v) = &self.blanks {
            c.blanks = v.clone();
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.max_symbols {
            c.max_symbols = v;
        }
        Ok(c)
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Verify(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Decode(a) | Command::Emissions(a) => &a.common,
            Command::Bench(a) => &a.common,
        }
    }

    /// Effective configuration for this invocation.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = self.common().resolve()?;
        match self {
            Command::Verify(a) => {
                set(&mut c.verify.trials, a.trials);
                set(&mut c.verify.grad_trials, a.grad_trials);
                set(&mut c.verify.limits.max_frames, a.max_frames);
                set(&mut c.verify.limits.max_labels, a.max_labels);
                set(&mut c.verify.limits.max_vocab, a.max_vocab);
            }
            Command::Train(a) => {
                if a.data.is_some() {
                    c.data.train = a.data.clone();
                }
                if a.test_data.is_some() {
                    c.data.test = a.test_data.clone();
                }
                set(&mut c.train.steps, a.steps);
                set(&mut c.train.learning_rate, a.lr);
                set(&mut c.train.momentum, a.momentum);
                set(&mut c.train.batch_size, a.train_batch_size);
                set(&mut c.data.synth_train.count, a.train_count);
                set(&mut c.data.synth_test.count, a.test_count);
            }
            Command::Decode(a) | Command::Emissions(a) => {
                if a.checkpoint.is_some() {
                    c.checkpoint = a.checkpoint.clone();
                }
                if a.data.is_some() {
                    c.data.test = a.data.clone();
                }
                set(&mut c.data.synth_test.count, a.test_count);
            }
            Command::Bench(a) => {
                if a.baseline.is_some() {
                    c.baseline = a.baseline.clone();
                }
                if a.candidate.is_some() {
                    c.candidate = a.candidate.clone();
                }
                if a.data.is_some() {
                    c.data.test = a.data.clone();
                }
                set(&mut c.data.synth_test.count, a.test_count);
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Verify(_) => "verify",
            Command::Train(_) => "train",
            Command::Decode(_) => "decode",
            Command::Bench(_) => "bench",
            Command::Emissions(_) => "emissions",
        }
    }
}

/// Runs one command and writes `report.json` into the output directory, if any.
pub fn run(cli: &Cli) -> Result<RunReport> {
    let config = cli.command.resolve()?;
    let out = cli.command.common().out.as_deref();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let mut report = match &cli.command {
        Command::Verify(_) => commands::verify::run(&config, out)?,
        Command::Train(_) => commands::train::run(&config, out)?,
        Command::Decode(_) => commands::decode::run(&config, out)?,
        Command::Bench(_) => commands::bench::run(&config, out)?,
        Command::Emissions(_) => commands::emissions::run(&config, out)?,
    };
    report.check_finite()?;
    if let Some(dir) = out {
        report.artifacts.insert("report".into(), "report.json".into());
        let path = dir.join("report.json");
        fs::write(&path, report.to_json()).map_err(|e| io_error(&path, e))?;
    }
    Ok(report)
}

/// Parses `args`, runs the command, prints the report and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(report) => {
            print!("{}", report.to_json());
            if !report.passed {
                eprintln!("{}: tolerance check failed", report.command);
            }
            report_exit_code(&report)
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn report_exit_code(report: &RunReport) -> i32 {
    if report.passed {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Parse { .. } => EXIT_IO,
        Error::Usage(_) | Error::Config(_) | Error::Infeasible { .. } => EXIT_USAGE,
    }
}

pub(crate) fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
