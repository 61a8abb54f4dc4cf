//! Command-line front end. `run_cli` returns the process exit code:
//! 0 on success, 1 on usage or configuration errors, 2 when an input file
//! cannot be processed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::anon::{anonymize_trace, AnonError, Anonymizer};
use crate::config::{ConfigError, RunConfig};
use crate::pipeline::{load_exports, run_analysis, PipelineError};
use crate::report::{emit_report, OutputFormat, ReportError, ReportInput, XScale};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "tcpmetro",
    version,
    about = "Passive TCP/IP trace analysis",
    after_help = "The anonymization key (32 hex characters) is read from the TCPMETRO_ANON_KEY \
                  environment variable, or from `anon_key_hex` in the config file."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analyze pcap traces and write tables, series, flow export and manifest.
    Analyze(AnalyzeArgs),
    /// Rewrite a pcap trace with anonymized IPv4 addresses.
    Anonymize(AnonymizeArgs),
    /// Rebuild tables and series from earlier flows.csv exports.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Text,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    Log,
    Linear,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// TOML run configuration; flags given here override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Write human-readable .txt tables next to the CSV files.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Bin width of the flow duration PDF, in seconds.
    #[arg(long, value_name = "SECONDS")]
    bin_width: Option<f64>,
    /// Services below this percentage of TCP flows fold into "Other".
    #[arg(long, value_name = "PERCENT")]
    other_threshold: Option<f64>,
    /// x-axis scale recorded for the flow rate CDF.
    #[arg(long, value_enum)]
    rate_scale: Option<ScaleArg>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    output: OutputArgs,
    /// LAN prefix in CIDR notation; repeatable, replaces the config list.
    #[arg(long, value_name = "CIDR")]
    lan: Vec<String>,
    /// MAN prefix in CIDR notation; repeatable, replaces the config list.
    #[arg(long, value_name = "CIDR")]
    man: Vec<String>,
    /// CSV of `cidr,continent` lines.
    #[arg(long, value_name = "FILE")]
    geo_db: Option<PathBuf>,
    /// Services file in /etc/services layout.
    #[arg(long, value_name = "FILE")]
    services: Option<PathBuf>,
    /// Flow idle timeout, in seconds.
    #[arg(long, value_name = "SECONDS")]
    timeout: Option<f64>,
    /// pcap traces; replaces the config's `inputs` when given.
    #[arg(value_name = "TRACE")]
    traces: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct AnonymizeArgs {
    /// TOML run configuration, used only for `anon_key_hex`.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// pcap trace to read.
    input: PathBuf,
    /// Where to write the anonymized trace.
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    output: OutputArgs,
    /// flows.csv files written by `analyze`.
    #[arg(value_name = "FLOWS_CSV", required = true)]
    flows: Vec<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl ToString) -> Failure {
        Failure { code: EXIT_USAGE, message: message.to_string() }
    }

    fn data(message: impl ToString) -> Failure {
        Failure { code: EXIT_DATA, message: message.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Classify(_) => Failure::data(e),
            _ => Failure::usage(e),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::RefusesRawAddresses => Failure::usage(e),
            _ => Failure::data(e),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => c.into(),
            PipelineError::Report(r) => r.into(),
            _ => Failure::data(e),
        }
    }
}

impl From<AnonError> for Failure {
    fn from(e: AnonError) -> Self {
        match e {
            AnonError::BadKeyLength(_) | AnonError::BadKeyHex => Failure::usage(e),
            _ => Failure::data(e),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn apply_output(cfg: &mut RunConfig, o: &OutputArgs) {
    if let Some(out) = &o.out {
        cfg.out = out.clone();
    }
    if let Some(f) = o.format {
        cfg.format = match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Text => OutputFormat::Text,
        };
    }
    if let Some(w) = o.bin_width {
        cfg.bin_width_s = w;
    }
    if let Some(t) = o.other_threshold {
        cfg.other_threshold_percent = t;
    }
    if let Some(s) = o.rate_scale {
        cfg.rate_scale = match s {
            ScaleArg::Log => XScale::Log,
            ScaleArg::Linear => XScale::Linear,
        };
    }
}

fn write(input: &ReportInput, cfg: &RunConfig) -> Result<(), Failure> {
    let written = emit_report(input, &cfg.report_options())?;
    log::info!("wrote {} files to {}", written.len(), cfg.out.display());
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let mut cfg = load_config(a.output.config.as_deref())?;
    apply_output(&mut cfg, &a.output);
    if !a.lan.is_empty() {
        cfg.lan = a.lan;
    }
    if !a.man.is_empty() {
        cfg.man = a.man;
    }
    if a.geo_db.is_some() {
        cfg.geo_db = a.geo_db;
    }
    if a.services.is_some() {
        cfg.services = a.services;
    }
    if let Some(t) = a.timeout {
        cfg.idle_timeout_s = t;
    }
    if !a.traces.is_empty() {
        cfg.inputs = a.traces;
    }
    let input = run_analysis(&cfg)?;
    write(&input, &cfg)
}

fn anonymize(a: AnonymizeArgs) -> Result<(), Failure> {
    let cfg = load_config(a.config.as_deref())?;
    let key = cfg.resolve_key()?.ok_or(ReportError::RefusesRawAddresses)?;
    if !a.input.is_file() {
        return Err(Failure::usage(format!("input trace does not exist: {}", a.input.display())));
    }
    let stats = anonymize_trace(&a.input, &a.output, &Anonymizer::new(&key))?;
    log::info!("{}: {} frames rewritten", a.input.display(), stats.packets_total);
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    let mut cfg = load_config(a.output.config.as_deref())?;
    apply_output(&mut cfg, &a.output);
    cfg.inputs = a.flows;
    cfg.validate(true)?;
    let input = load_exports(&cfg.inputs)?;
    write(&input, &cfg)
}

/// Parses `args` (program name first) and runs the chosen subcommand.
/// Diagnostics go to stderr.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Anonymize(a) => anonymize(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("tcpmetro: {}", f.message);
            f.code
        }
    }
}
