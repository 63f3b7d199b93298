use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use coff::bench::{cmd_ablate, cmd_generate, cmd_register, cmd_subset, cmd_sweep, with_jobs, AblationAxis};
use coff::config::PipelineConfig;
use coff::io::manifest::load_manifest;
use coff::metrics::{linspace, SweepGrid};
use coff::synthetic::{GeneratorParams, SceneKind};

#[derive(Parser)]
#[command(name = "coff", version, about = "Coarse-to-fine point cloud registration with image feature fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Pipeline configuration (JSON); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Register every pair of a manifest and write metrics.
    Register {
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        /// textured_plane, symmetric_pair, cluttered or mixed_planarity.
        #[arg(long, default_value = "textured_plane")]
        kind: SceneKind,
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        #[arg(long, default_value_t = 0.02)]
        spacing: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Select the pairs whose overlap is dominated by one plane.
    Subset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tau1: Option<f64>,
        #[arg(long)]
        tau2: Option<f64>,
    },
    /// Compare pipeline variants along one or more axes.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of features, selection, num_images.
        #[arg(long, value_delimiter = ',', default_value = "features")]
        axes: Vec<AblationAxis>,
    },
    /// Sweep metric thresholds over one registration run.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Inlier radii as `lo:hi:n`.
        #[arg(long)]
        ir_radii: Option<String>,
        /// Minimum inlier ratios as `lo:hi:n`.
        #[arg(long)]
        min_irs: Option<String>,
        /// RMSE thresholds as `lo:hi:n`.
        #[arg(long)]
        rmse: Option<String>,
    },
}

fn parse_range(s: &str) -> coff::Result<Vec<f64>> {
    let bad = || coff::Error::InvalidArgument(format!("expected lo:hi:n, got `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    Ok(linspace(lo, hi, n))
}

fn load_config(common: &Common) -> coff::Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn manifest_path(common: &Common) -> coff::Result<&Path> {
    common
        .manifest
        .as_deref()
        .ok_or_else(|| coff::Error::InvalidArgument("--manifest is required".into()))
}

/// Ok(true) when some pairs failed.
fn run(command: Command) -> coff::Result<bool> {
    match command {
        Command::Register { common } => {
            let cfg = load_config(&common)?;
            let manifest = load_manifest(manifest_path(&common)?)?;
            let report = with_jobs(common.jobs, || cmd_register(&manifest, &cfg, &common.out_dir))??;
            let s = &report.summary;
            println!("pairs {} registered {} RR {:.4} FMR {:.4} failures {}", s.pairs, s.registered, s.registration_recall, s.feature_match_recall, s.failures);
            Ok(report.has_failures())
        }
        Command::Generate { common, kind, pairs, spacing, noise } => {
            let params = GeneratorParams {
                pairs,
                spacing,
                noise,
                seed: common.seed.unwrap_or(0),
                ..Default::default()
            };
            let path = with_jobs(common.jobs, || cmd_generate(kind, &params, &common.out_dir))??;
            println!("{}", path.display());
            Ok(false)
        }
        Command::Subset { common, tau1, tau2 } => {
            let mut cfg = load_config(&common)?.planarity;
            cfg.tau1 = tau1.unwrap_or(cfg.tau1);
            cfg.tau2 = tau2.unwrap_or(cfg.tau2);
            let manifest = load_manifest(manifest_path(&common)?)?;
            let report = with_jobs(common.jobs, || cmd_subset(&manifest, &cfg, &common.out_dir))??;
            println!("selected {}/{} pairs -> {}", report.selected, report.total, report.manifest_path.display());
            Ok(false)
        }
        Command::Ablate { common, axes } => {
            let cfg = load_config(&common)?;
            let manifest = load_manifest(manifest_path(&common)?)?;
            let rows = with_jobs(common.jobs, || cmd_ablate(&manifest, &cfg, &axes, &common.out_dir))??;
            for r in &rows {
                println!("{:<10} {:<10} RR {:.4} FMR {:.4}", r.axis, r.setting, r.summary.registration_recall, r.summary.feature_match_recall);
            }
            Ok(rows.iter().any(|r| r.summary.failures > 0))
        }
        Command::Sweep { common, ir_radii, min_irs, rmse } => {
            let cfg = load_config(&common)?;
            let manifest = load_manifest(manifest_path(&common)?)?;
            let mut grid = SweepGrid::default();
            if let Some(s) = ir_radii {
                grid.ir_radii = parse_range(&s)?;
            }
            if let Some(s) = min_irs {
                grid.min_irs = parse_range(&s)?;
            }
            if let Some(s) = rmse {
                grid.rmse_thresholds = parse_range(&s)?;
            }
            let (rows, outcomes) = with_jobs(common.jobs, || cmd_sweep(&manifest, &cfg, &grid, &common.out_dir))??;
            println!("{} sweep rows -> {}", rows.len(), common.out_dir.join("sweep.csv").display());
            Ok(outcomes.iter().any(|o| o.failure.is_some()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COFF_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            error!("{e}");
            ExitCode::from(1)
        }
    }
}
