//! Command-line front end: fit one model and publish its summary, fuse an
//! internal dataset with an external summary, attach bootstrap intervals,
//! or run a whole simulation scenario. All heavy lifting lives in the
//! `estfuse` library; this crate is config plumbing and file output.

pub mod config;
pub mod plots;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use estfuse::bootstrap;
use estfuse::error::{Error, Result};
use estfuse::fusion::ExternalSummary;
use estfuse::io;
use estfuse::sandwich::{self, ModelPair};
use estfuse::scenarios;
use estfuse::zsolve::{self, SolveOptions};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "estfuse", version, about = "Fuse internal M-estimates with external study summaries")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the configured model and write its transferable summary.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Summary file destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fuse the configured internal dataset with an external summary.
    Fuse {
        #[arg(long)]
        config: PathBuf,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fuse, then attach percentile intervals from the weighted bootstrap.
    #[command(name = "bootstrap-ci")]
    BootstrapCi {
        #[arg(long)]
        config: PathBuf,
        /// Override [bootstrap].replicates.
        #[arg(long)]
        replicates: Option<usize>,
        /// Override [bootstrap].seed.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulation scenario and write report.csv + raw.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if absent.
        #[arg(long)]
        out: PathBuf,
        /// Override [scenario].replicates.
        #[arg(long)]
        replicates: Option<usize>,
        /// Override [scenario].seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write an SVG chart per report.
        #[arg(long)]
        plots: bool,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { config, out } => fit(&config, out.as_deref()),
        Command::Fuse { config, out } => fuse(&config, out.as_deref()),
        Command::BootstrapCi { config, replicates, seed, out } => {
            bootstrap_ci(&config, replicates, seed, out.as_deref())
        }
        Command::Simulate { config, out, replicates, seed, plots } => {
            simulate(&config, &out, replicates, seed, plots)
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(Error::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn fit(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let roles = cfg.roles()?;
    let data = io::read_dataset_csv(&cfg.data()?.csv, &roles)?;
    let family = cfg.internal_family(&roles)?;
    let solved = zsolve::solve(&family, &data, &SolveOptions::default())?;
    let model = sandwich::sandwich_fit(&family, &data, &solved)?;
    let summary = ExternalSummary::from_fit(&model, cfg.transform_spec()?);
    emit(out, &io::external_summary_to_string(&summary))
}

/// Load everything a fuse-style run needs: internal data, the external
/// summary, and the model pair refitted on internal rows.
fn fuse_inputs(cfg: &RunConfig) -> Result<(estfuse::equations::Dataset, ExternalSummary, ModelPair)> {
    let roles = cfg.roles()?;
    let data = io::read_dataset_csv(&cfg.data()?.csv, &roles)?;
    let ext = io::read_external_summary(cfg.external_summary_path()?)?;
    if let Some(declared) = &cfg.transform {
        let spec = cfg.transform_spec()?;
        if spec != ext.transform {
            return Err(Error::Config(format!(
                "transform: config declares {} {:?} but the external summary declares {} {:?}; \
                 both studies must use the same transform",
                spec.name(),
                declared.indices,
                ext.transform.name(),
                ext.transform.indices
            )));
        }
    }
    let theta = cfg.external_family(&roles)?;
    if theta.id != ext.family {
        return Err(Error::Config(format!(
            "model.external_family: config declares {} but the summary was fitted as {}",
            theta.id.name(),
            ext.family.name()
        )));
    }
    let gamma = cfg.internal_family(&roles)?;
    Ok((data, ext, ModelPair::Separate { theta, gamma }))
}

fn fuse(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let (data, ext, pair) = fuse_inputs(&cfg)?;
    let fit = bootstrap::fuse_once(&pair, &data, &ext, &cfg.loss_spec()?)?;
    emit(out, &io::fuse_csv(&fit.cond, &fit.shrink))
}

fn bootstrap_ci(
    config: &Path,
    replicates: Option<usize>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let (data, ext, pair) = fuse_inputs(&cfg)?;
    let mut bcfg = cfg.bootstrap_config()?;
    if let Some(r) = replicates {
        bcfg.replicates = r;
    }
    if let Some(s) = seed {
        bcfg.base_seed = s;
    }
    let result = bootstrap::bootstrap_fuse(&pair, &data, &ext, &cfg.loss_spec()?, &bcfg)?;
    emit(out, &io::bootstrap_csv(&result))
}

fn simulate(
    config: &Path,
    out_dir: &Path,
    replicates: Option<usize>,
    seed: Option<u64>,
    plots: bool,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let mut spec = cfg.scenario_spec()?;
    if let Some(r) = replicates {
        spec.mc_replicates = r;
    }
    if let Some(s) = seed {
        spec.base_seed = s;
    }
    let report = scenarios::run_scenario(&spec)?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.csv"), io::report_csv(&report))?;
    std::fs::write(out_dir.join("raw.csv"), io::raw_csv(&report))?;
    if plots {
        let name = format!("{}_pmse.svg", report.kind.name());
        std::fs::write(out_dir.join(name), plots::pmse_chart(&report))?;
    }
    Ok(())
}
