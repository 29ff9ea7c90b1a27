use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use skywarp::dataset::{load_sequence, make_windows, write_manifest, ImageSequence, SequenceOptions, DEFAULT_TIMESTAMP_PATTERN};

use crate::{usage, GlobalArgs, Status};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Directory of timestamped frames.
    #[arg(long)]
    pub dir: PathBuf,
    /// Nominal seconds between frames.
    #[arg(long, default_value_t = 30.0)]
    pub period: f64,
    /// Allowed deviation from the period before a new segment starts.
    #[arg(long, default_value_t = 5.0)]
    pub tolerance: f64,
    /// Number of target frames per window.
    #[arg(long, default_value_t = 5)]
    pub horizon: usize,
    /// Write `<output>.train.csv` (earlier years) and `<output>.test.csv`
    /// (this year and later) instead of one manifest.
    #[arg(long)]
    pub split_year: Option<i32>,
    /// strftime template of the timestamp inside file names.
    #[arg(long, default_value = DEFAULT_TIMESTAMP_PATTERN)]
    pub pattern: String,
    /// Drop frames darker than this mean intensity in [0, 1].
    #[arg(long)]
    pub min_brightness: Option<f64>,
    /// Manifest path.
    #[arg(short, long)]
    pub output: PathBuf,
}

fn write_one(seq: &ImageSequence, horizon: usize, path: &Path) -> Result<usize> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let n = write_manifest(BufWriter::new(f), horizon, make_windows(seq, horizon))?;
    println!(
        "{}: {} frame(s), {} segment(s), {} window(s)",
        path.display(),
        seq.len(),
        seq.segments().len(),
        n
    );
    Ok(n)
}

fn suffixed(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("manifest");
    path.with_file_name(format!("{stem}.{tag}.csv"))
}

pub fn run(_g: &GlobalArgs, args: &Args) -> Result<Status> {
    if args.horizon == 0 {
        return Err(usage("--horizon must be at least 1"));
    }
    let options = SequenceOptions {
        timestamp_pattern: args.pattern.clone(),
        period_s: args.period,
        tolerance_s: args.tolerance,
        min_mean_brightness: args.min_brightness,
    };
    if !args.dir.is_dir() {
        return Err(usage(format!("{} is not a directory", args.dir.display())));
    }
    let seq = load_sequence(&args.dir, &options).map_err(|e| match e {
        skywarp::Error::Sequence(msg) | skywarp::Error::InvalidParameter(msg) => usage(msg),
        other => other.into(),
    })?;
    if seq.skipped() > 0 {
        eprintln!("skipped {} file(s) without a timestamp", seq.skipped());
    }
    match args.split_year {
        None => {
            write_one(&seq, args.horizon, &args.output)?;
        }
        Some(year) => {
            let (train, test) = seq.split_by_year(year)?;
            write_one(&train, args.horizon, &suffixed(&args.output, "train"))?;
            write_one(&test, args.horizon, &suffixed(&args.output, "test"))?;
        }
    }
    Ok(Status::Success)
}
