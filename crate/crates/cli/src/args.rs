use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use stnmf::{DispersionSpace, FactorSide, Init, SyntheticSpec};

use crate::commands::{cmd_factorize, cmd_ingest, cmd_rank_scan, cmd_run, cmd_synth, SynthConfig};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "stnmf",
    version,
    about = "Traffic pattern mining with nonnegative matrix factorization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build location × hour count matrices from raw record tables.
    Ingest(PipelineArgs),
    /// Score a range of ranks by cluster dispersion.
    RankScan(PipelineArgs),
    /// Factorize at the fixed or recommended rank and export patterns.
    Factorize(PipelineArgs),
    /// Run every stage and compare the two periods.
    Run(PipelineArgs),
    /// Write synthetic records with planted patterns.
    Synth(SynthArgs),
}

fn parse_enum<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_side(s: &str) -> Result<FactorSide, String> {
    match s {
        "location" => Ok(FactorSide::Location),
        "time" => Ok(FactorSide::Time),
        _ => Err(format!("unknown side `{s}`, expected location or time")),
    }
}

fn parse_space(s: &str) -> Result<DispersionSpace, String> {
    match s {
        "input-rows" => Ok(DispersionSpace::InputRows),
        "factor-rows" => Ok(DispersionSpace::FactorRows),
        _ => Err(format!(
            "unknown space `{s}`, expected input-rows or factor-rows"
        )),
    }
}

/// Flags shared by the pipeline commands. Each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// TOML file with pipeline settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input_a: Option<PathBuf>,
    #[arg(long)]
    pub input_b: Option<PathBuf>,
    /// Period A label, or the value to keep when --period-column is set.
    #[arg(long)]
    pub period_a: Option<String>,
    #[arg(long)]
    pub period_b: Option<String>,
    /// Column holding the period of each row.
    #[arg(long)]
    pub period_column: Option<String>,
    #[arg(long)]
    pub delimiter: Option<char>,
    /// Inclusive hour window, e.g. 7..18.
    #[arg(long)]
    pub hours: Option<String>,
    /// Inclusive rank range to scan, e.g. 2..8.
    #[arg(long)]
    pub ranks: Option<String>,
    #[arg(long)]
    pub rank_a: Option<usize>,
    #[arg(long)]
    pub rank_b: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// random or nndsvd.
    #[arg(long, value_parser = parse_enum::<Init>)]
    pub init: Option<Init>,
    /// Seeded restarts per factorization.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Factor clustered during the rank scan: location or time.
    #[arg(long, value_parser = parse_side)]
    pub side: Option<FactorSide>,
    /// Points the dispersion is measured on: input-rows or factor-rows.
    #[arg(long, value_parser = parse_space)]
    pub space: Option<DispersionSpace>,
    /// Minimum cosine for two patterns to match.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl PipelineArgs {
    /// The config file, if any, with every given flag applied on top.
    pub fn resolve(&self) -> CliResult<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    c.$f = v.clone().into();
                }
            )*};
        }
        set!(input_a, input_b, period_a, period_b, rank_a, rank_b);
        set!(delimiter, hours, ranks, seed, tol, max_iters, init, restarts);
        set!(side, space, threshold, out);
        if let Some(col) = &self.period_column {
            c.columns.period = Some(col.clone());
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "synthetic")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub locations: usize,
    /// Inclusive hour window, e.g. 7..18.
    #[arg(long, default_value = "7..18")]
    pub hours: String,
    /// Planted rank of period A.
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    /// Relative Frobenius deviation from the planted product.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write period B without the last N planted patterns.
    #[arg(long)]
    pub drop: Option<usize>,
    /// Grand total of period B relative to period A.
    #[arg(long, default_value_t = 0.5)]
    pub scale: f64,
    #[arg(long, default_value = "a")]
    pub period_a: String,
    #[arg(long, default_value = "b")]
    pub period_b: String,
}

impl SynthArgs {
    pub fn resolve(&self) -> CliResult<SynthConfig> {
        let window: stnmf::HourWindow = self
            .hours
            .parse()
            .map_err(|e: stnmf::Error| CliError::Usage(format!("--hours: {e}")))?;
        let mut spec = SyntheticSpec::new(self.locations, window.len(), self.rank)
            .with_noise(self.noise)
            .with_seed(self.seed);
        spec.first_hour = window.first;
        spec.period = self.period_a.clone();
        Ok(SynthConfig {
            spec,
            drop: self.drop,
            count_scale: self.scale,
            period_b: self.period_b.clone(),
            out: self.out.clone(),
        })
    }
}

pub fn dispatch(command: &Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(&a.resolve()?, out),
        Command::RankScan(a) => cmd_rank_scan(&a.resolve()?, out),
        Command::Factorize(a) => cmd_factorize(&a.resolve()?, out),
        Command::Run(a) => cmd_run(&a.resolve()?, out),
        Command::Synth(a) => cmd_synth(&a.resolve()?, out),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
/// Reports go to `out`, errors to `err`.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match dispatch(&cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
