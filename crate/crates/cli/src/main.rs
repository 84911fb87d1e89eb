mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use rgpv::estimate::FitOptions;
use rgpv::variance::GpvVarianceKind;

use crate::config::{load_section, Overlay};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "rgpv", version, about = "Value-density estimation and inference for first-price auctions")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file mirroring the flags; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Point estimates and variance estimates of both densities on a grid.
    Estimate(EstimateArgs),
    /// Bootstrap uniform confidence band(s).
    Band(BandArgs),
    /// Monte Carlo coverage and width study.
    Simulate(SimulateArgs),
    /// Regress log bids on covariates and rescale to a reference point.
    Homogenize(HomogenizeArgs),
    /// Asymptotic variance ratio of the two estimators.
    VarianceRatio(VarianceRatioArgs),
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FitArgs {
    /// Bid-density bandwidth.
    #[arg(long = "h-g")]
    pub h_g: Option<f64>,
    /// Value-density bandwidth.
    #[arg(long = "h-f")]
    pub h_f: Option<f64>,
    /// Rearrangement bandwidth.
    #[arg(long = "h-r")]
    pub h_r: Option<f64>,
    /// Riemann resolution of the rearrangement.
    #[arg(long = "riemann-m")]
    pub riemann_m: Option<usize>,
}

impl FitArgs {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            h_g: self.h_g,
            h_f: self.h_f,
            h_r: self.h_r,
            riemann_m: self.riemann_m,
        }
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GridArgs {
    /// Lower end of the grid (default: 30% quantile of the constrained pseudo-values).
    #[arg(long)]
    pub grid_lo: Option<f64>,
    /// Upper end of the grid (default: 70% quantile).
    #[arg(long)]
    pub grid_hi: Option<f64>,
    /// Grid step.
    #[arg(long)]
    pub grid_step: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Gpv,
    Rgpv,
    Both,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthConstants {
    /// `λ_f = λ_g`.
    Equal,
    /// The ratio implied by the rule-of-thumb constants on the design.
    RuleOfThumb,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelOrder {
    Second,
    Fourth,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateArgs {
    /// Bid CSV (`auction_id,bidder_id,bid`), or a covariate panel with `--panel`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output CSV; metadata goes to the same path with a `.json` extension.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Treat the input as a panel with covariates and varying bidder counts.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub panel: Option<bool>,
    /// Reference covariates for `--panel`, comma separated (default: means).
    #[arg(long, value_delimiter = ',')]
    pub x0: Option<Vec<f64>>,
    /// GPV variance estimator: `plug-in` or `sample`
    #[arg(long, value_parser = parse_gpv_variance)]
    pub gpv_variance: Option<GpvVarianceKind>,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BandArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output CSV; with `--method both` one file per method is written.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub panel: Option<bool>,
    #[arg(long, value_delimiter = ',')]
    pub x0: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub method: Option<MethodChoice>,
    /// Nominal non-coverage.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bootstrap replications.
    #[arg(long)]
    pub boot: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// GPV variance estimator: `plug-in` or `sample`
    #[arg(long, value_parser = parse_gpv_variance)]
    pub gpv_variance: Option<GpvVarianceKind>,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateArgs {
    #[arg(long)]
    pub theta: Option<f64>,
    /// Bidders per auction.
    #[arg(long = "n")]
    pub n_bidders: Option<usize>,
    /// Total number of bids `NL`.
    #[arg(long)]
    pub total_bids: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub boot: Option<usize>,
    /// Levels `α`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long)]
    pub interval_lo: Option<f64>,
    #[arg(long)]
    pub interval_hi: Option<f64>,
    #[arg(long)]
    pub grid_step: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// GPV variance estimator: `plug-in` or `sample`
    #[arg(long, value_parser = parse_gpv_variance)]
    pub gpv_variance: Option<GpvVarianceKind>,
    /// JSON report.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Per-replication CSV.
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct HomogenizeArgs {
    /// Panel CSV (`auction_id,bidder_id,bid,n_bidders,x1..xd`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub x0: Option<Vec<f64>>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct VarianceRatioArgs {
    /// Shape parameters, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub theta: Option<Vec<f64>>,
    /// Bidder counts, comma separated.
    #[arg(long = "n", value_delimiter = ',')]
    pub n_bidders: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub bandwidths: Option<BandwidthConstants>,
    #[arg(long, value_enum)]
    pub bid_kernel: Option<KernelOrder>,
    /// Evaluation point (the ratio does not depend on it on this design).
    #[arg(long)]
    pub v: Option<f64>,
    /// JSON table.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_gpv_variance(s: &str) -> Result<GpvVarianceKind, String> {
    s.parse().map_err(|e: rgpv::Error| e.to_string())
}

impl Overlay for FitArgs {
    fn overlay(&mut self, file: Self) {
        let flags = self;
        overlay_fields!(flags, file; h_g, h_f, h_r, riemann_m);
    }
}

impl Overlay for GridArgs {
    fn overlay(&mut self, file: Self) {
        let flags = self;
        overlay_fields!(flags, file; grid_lo, grid_hi, grid_step);
    }
}

impl Overlay for EstimateArgs {
    fn overlay(&mut self, file: Self) {
        self.grid.overlay(file.grid.clone());
        self.fit.overlay(file.fit.clone());
        let flags = self;
        overlay_fields!(flags, file; input, output, panel, x0, gpv_variance);
    }
}

impl Overlay for BandArgs {
    fn overlay(&mut self, file: Self) {
        self.grid.overlay(file.grid.clone());
        self.fit.overlay(file.fit.clone());
        let flags = self;
        overlay_fields!(flags, file; input, output, panel, x0, method, alpha, boot, seed, gpv_variance);
    }
}

impl Overlay for SimulateArgs {
    fn overlay(&mut self, file: Self) {
        self.fit.overlay(file.fit.clone());
        let flags = self;
        overlay_fields!(flags, file; theta, n_bidders, total_bids, reps, boot, alphas, interval_lo,
            interval_hi, grid_step, seed, gpv_variance, output, records);
    }
}

impl Overlay for HomogenizeArgs {
    fn overlay(&mut self, file: Self) {
        let flags = self;
        overlay_fields!(flags, file; input, output, x0);
    }
}

impl Overlay for VarianceRatioArgs {
    fn overlay(&mut self, file: Self) {
        let flags = self;
        overlay_fields!(flags, file; theta, n_bidders, bandwidths, bid_kernel, v, output);
    }
}

fn merged<T: Overlay>(mut flags: T, path: Option<&PathBuf>, name: &str, threads: &mut Option<usize>) -> Result<T, CliError> {
    if let Some(p) = path {
        let (file, file_threads) = load_section::<T>(p, name)?;
        flags.overlay(file);
        if threads.is_none() {
            *threads = file_threads;
        }
    }
    Ok(flags)
}

fn set_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(error::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| error::usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut threads = cli.threads;
    let cfg = cli.config.as_ref();
    match cli.command {
        Command::Estimate(a) => {
            let a = merged(a, cfg, "estimate", &mut threads)?;
            set_threads(threads)?;
            commands::estimate(&a)
        }
        Command::Band(a) => {
            let a = merged(a, cfg, "band", &mut threads)?;
            set_threads(threads)?;
            commands::band(&a)
        }
        Command::Simulate(a) => {
            let a = merged(a, cfg, "simulate", &mut threads)?;
            set_threads(threads)?;
            commands::simulate(&a)
        }
        Command::Homogenize(a) => {
            let a = merged(a, cfg, "homogenize", &mut threads)?;
            set_threads(threads)?;
            commands::homogenize(&a)
        }
        Command::VarianceRatio(a) => {
            let a = merged(a, cfg, "variance-ratio", &mut threads)?;
            set_threads(threads)?;
            commands::variance_ratio(&a)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
