//! Command implementations behind the `skywarp` binary. Each subcommand is a
//! plain function so tests can drive it without spawning a process.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use skywarp::{MirrorModel, WarpConfig};

pub mod calibrate;
pub mod evaluate;
pub mod fixtures;
pub mod forecast;
pub mod model_file;
pub mod synth;
pub mod warp;
pub mod windows;

/// Process exit status contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    PartialFailure = 1,
    InvalidInvocation = 2,
}

/// Error meaning the command was called wrongly rather than failing on data.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Map a command error to its exit status.
pub fn status_of(err: &anyhow::Error) -> Status {
    if err.downcast_ref::<UsageError>().is_some() {
        Status::InvalidInvocation
    } else {
        Status::PartialFailure
    }
}

#[derive(Debug, Parser)]
#[command(name = "skywarp", version, about = "Height-invariant warping and forecasting of hemispherical sky images")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct GlobalArgs {
    /// Mirror model file (`cx=.. cy=.. radius_px=..`).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Largest normalized ground radius kept by the warp.
    #[arg(long, global = true, default_value_t = 3.0)]
    pub rho_max: f64,
    /// Warped canvas pixels per original pixel at the zenith.
    #[arg(long, global = true, default_value_t = 3)]
    pub upsample: usize,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

impl Default for GlobalArgs {
    fn default() -> Self {
        Self { model: None, rho_max: 3.0, upsample: 3, jobs: None }
    }
}

impl GlobalArgs {
    pub fn warp_config(&self) -> Result<WarpConfig<f64>> {
        let cfg = WarpConfig { rho_max: self.rho_max, upsample: self.upsample, ..WarpConfig::default() };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn require_model(&self) -> Result<MirrorModel<f64>> {
        let path = self.model.as_ref().ok_or_else(|| usage("--model is required"))?;
        model_file::read_model(path)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the mirror model from a frame or a directory of frames.
    Calibrate(calibrate::Args),
    /// Resample raw frames into the warped representation.
    Warp(warp::Args),
    /// Resample warped frames back to the original geometry.
    Unwarp(warp::UnwarpArgs),
    /// Render a synthetic translating cloud layer.
    Synth(synth::Args),
    /// Segment a frame directory and write the window manifest.
    Windows(windows::Args),
    /// Produce baseline forecasts for every manifest window.
    Forecast(forecast::Args),
    /// Score predictions against the manifest targets.
    Evaluate(evaluate::Args),
    /// Write loss-parity fixtures for external implementations.
    Fixtures(fixtures::Args),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Persistence,
    Flow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Space {
    Raw,
    Warped,
}

/// Run a parsed command line.
pub fn run(cli: Cli) -> Result<Status> {
    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let g = &cli.global;
    match cli.command {
        Command::Calibrate(a) => calibrate::run(g, &a),
        Command::Warp(a) => warp::run_warp(g, &a),
        Command::Unwarp(a) => warp::run_unwarp(g, &a),
        Command::Synth(a) => synth::run(g, &a),
        Command::Windows(a) => windows::run(g, &a),
        Command::Forecast(a) => forecast::run(g, &a),
        Command::Evaluate(a) => evaluate::run(g, &a),
        Command::Fixtures(a) => fixtures::run(g, &a),
    }
}

/// Parse and run, returning the exit status. Errors are logged here.
pub fn main_with_args<I, S>(args: I) -> Status
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Status::InvalidInvocation } else { Status::Success };
        }
    };
    match run(cli) {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e:#}");
            status_of(&e)
        }
    }
}

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Parse `WxH`.
pub fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    if w == 0 || h == 0 {
        return Err("size must be positive".into());
    }
    Ok((w, h))
}

/// `dir/<name>` with the extension replaced by `.png`.
pub fn png_in(dir: &Path, input: &Path) -> PathBuf {
    let stem = input.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    dir.join(stem).with_extension("png")
}
