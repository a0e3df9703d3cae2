use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mpirecon::config::{PipelineConfig, Stage};
use mpirecon::io;
use mpirecon::pipeline::{build_phantom, image_profile, run_pipeline, score_name, sweep, RunSummary};
use mpirecon::profile::Axis;

#[derive(Parser)]
#[command(name = "mpirecon", version, about = "Model-based MPI reconstruction pipeline")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace); RUST_LOG overrides.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config file; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides `[pipeline] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the stages listed in the config.
    Run(Common),
    /// Run up to Core Stage once, then deconvolve over the [sweep] grid.
    Sweep(Common),
    /// Write the configured phantom as <out>/phantom.img and .pgm.
    Phantom(Common),
    /// Simulate the scan signal.
    Simulate(Common),
    /// Divide out the transfer function and apply SNR thresholding.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Overrides `[input] signal`; defaults to the config value.
        #[arg(long)]
        signal: Option<PathBuf>,
    },
    /// Reconstruct the core operator from a preprocessed signal.
    Core {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        signal: Option<PathBuf>,
    },
    /// Deconvolve a core operator field.
    Deconvolve {
        #[command(flatten)]
        common: Common,
        /// `core.manifest` written by the core stage.
        #[arg(long)]
        core: Option<PathBuf>,
    },
    /// Print a line profile of an image and its dip metric.
    Profile {
        /// `.img` file.
        image: PathBuf,
        /// Row index; the middle row when neither --row nor --column is given.
        #[arg(long, conflicts_with = "column")]
        row: Option<usize>,
        #[arg(long)]
        column: Option<usize>,
        /// Write the profile CSV here instead of stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> anyhow::Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::from_file(path).context("reading config")?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn only(mut config: PipelineConfig, stage: Stage) -> PipelineConfig {
    config.stages = vec![stage];
    config
}

fn report(summary: &RunSummary, out: &Path) {
    for (stage, t) in &summary.timings {
        log::info!("{} finished in {:.3} s", stage.name(), t.as_secs_f64());
    }
    println!("wrote {} files to {}", summary.files.len(), out.display());
    if let Some(dip) = &summary.dip {
        println!("dip {:.4} (row {})", dip.value, dip.row);
    }
}

fn single_with_signal(common: &Common, signal: Option<PathBuf>, stage: Stage) -> anyhow::Result<()> {
    let mut config = only(load(common)?, stage);
    if signal.is_some() {
        config.input.signal = signal;
    }
    report(&run_pipeline(&config, &common.out)?, &common.out);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(common) => {
            let config = load(&common)?;
            report(&run_pipeline(&config, &common.out)?, &common.out);
        }
        Command::Sweep(common) => {
            let config = load(&common)?;
            let summary = sweep(&config, &common.out)?;
            println!("score {}", score_name(summary.score));
            for (i, e) in summary.ranking.iter().enumerate() {
                match &e.outcome {
                    Ok(v) => println!("{:>3}  h_sat {:e}  nu0 {:e}  {v:.4}", i + 1, e.h_sat, e.nu0),
                    Err(msg) => println!("{:>3}  h_sat {:e}  nu0 {:e}  failed: {msg}", i + 1, e.h_sat, e.nu0),
                }
            }
        }
        Command::Phantom(common) => {
            let config = load(&common)?;
            let phantom = build_phantom(&config).map_err(|e| e.in_stage("phantom"))?;
            for p in io::write_image(&common.out.join("phantom"), &phantom)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Simulate(common) => {
            let config = only(load(&common)?, Stage::Simulate);
            report(&run_pipeline(&config, &common.out)?, &common.out);
        }
        Command::Preprocess { common, signal } => single_with_signal(&common, signal, Stage::Preprocess)?,
        Command::Core { common, signal } => single_with_signal(&common, signal, Stage::Core)?,
        Command::Deconvolve { common, core } => {
            let mut config = only(load(&common)?, Stage::Deconvolve);
            if core.is_some() {
                config.input.core = core;
            }
            report(&run_pipeline(&config, &common.out)?, &common.out);
        }
        Command::Profile {
            image,
            row,
            column,
            out,
        } => {
            let img = io::read_image(&image)?;
            let (axis, index) = match (row, column) {
                (_, Some(c)) => (Axis::Column, c),
                (Some(r), None) => (Axis::Row, r),
                (None, None) => (Axis::Row, img.geometry.rows / 2),
            };
            let (profile, dip) = image_profile(&img, axis, index)?;
            let csv = io::format_profile_csv(&profile);
            match out {
                Some(path) => io::write_text(&path, &csv)?,
                None => print!("{csv}"),
            }
            eprintln!("dip {dip:.4}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .parse_env("RUST_LOG")
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
