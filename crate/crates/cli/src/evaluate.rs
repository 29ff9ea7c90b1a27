use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::warn;
use rayon::prelude::*;
use skywarp::image::load_mask;
use skywarp::metrics::{format_sig10, gradient_loss, intensity_loss, motion_loss, psnr, MetricReport, METRIC_REPORT_HEADER};
use skywarp::{FlowParams, LossTerms, LossWeights, SkyImage};

use crate::forecast::{load_manifest, prediction_path, FlowArgs};
use crate::{list_images, usage, GlobalArgs, Status};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Directory of `<anchor_ts>_pred<k>.png` files (or plain frames with
    /// `--truth-dir`).
    pub pred_dir: PathBuf,
    /// Window manifest whose targets are the truth.
    #[arg(long, required_unless_present = "truth_dir", conflicts_with = "truth_dir")]
    pub manifest: Option<PathBuf>,
    /// Compare each file with the same-named file here instead; one row with
    /// horizon 0 and no motion loss.
    #[arg(long)]
    pub truth_dir: Option<PathBuf>,
    /// Static mask image; dark pixels are excluded everywhere.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Number of horizons to score.
    #[arg(long, default_value_t = 5)]
    pub horizon: usize,
    /// Skip the flow-based motion loss (reported as nan).
    #[arg(long)]
    pub no_motion_loss: bool,
    /// Report CSV; a gnuplot `.dat` is written next to it.
    #[arg(short, long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub flow: FlowArgs,
}

pub const REPORT_EXTRA_COLUMNS: [&str; 2] = ["psnr_std", "n_windows"];

/// Scores of one prediction.
#[derive(Debug, Clone, Copy)]
struct Sample {
    psnr: f64,
    terms: LossTerms<f64>,
    n_valid: usize,
}

/// Per-horizon aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSummary {
    pub report: MetricReport,
    pub psnr_std: f64,
    pub n_windows: usize,
}

fn load_masked(path: &Path, mask: Option<&(usize, usize, Vec<bool>)>) -> Result<SkyImage<f32>> {
    let img = SkyImage::<f32>::load(path)?;
    match mask {
        None => Ok(img),
        Some((w, h, m)) => {
            if (*w, *h) != img.dims() {
                anyhow::bail!("mask is {w}x{h} but {} is {}x{}", path.display(), img.width(), img.height());
            }
            Ok(img.with_mask(m.clone())?)
        }
    }
}

fn score(
    pred: &SkyImage<f32>,
    truth: &SkyImage<f32>,
    current: Option<&SkyImage<f32>>,
    params: &FlowParams<f32>,
) -> Result<Sample> {
    let n_valid = SkyImage::joint_mask(&[pred, truth])?.iter().filter(|&&m| m).count();
    let l_op = match current {
        Some(c) => motion_loss(pred, truth, c, params)? as f64,
        None => f64::NAN,
    };
    Ok(Sample {
        psnr: psnr(pred, truth, None)? as f64,
        terms: LossTerms { l_int: intensity_loss(pred, truth)? as f64, l_gd: gradient_loss(pred, truth)? as f64, l_op },
        n_valid,
    })
}

/// Mean and population standard deviation. Infinite PSNR (perfect
/// predictions) gives an infinite mean; the spread is zero when every value
/// is infinite and undefined when only some are.
fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let infinite = values.iter().filter(|v| v.is_infinite()).count();
    if infinite > 0 {
        let std = if infinite == values.len() { 0.0 } else { f64::NAN };
        return (values.iter().sum::<f64>() / n, std);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summarize(horizon: usize, samples: &[Sample]) -> HorizonSummary {
    let col = |f: &dyn Fn(&Sample) -> f64| samples.iter().map(f).collect::<Vec<f64>>();
    let (psnr_mean, psnr_std) = mean_std(&col(&|s| s.psnr));
    let mean = |v: Vec<f64>| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let terms = LossTerms {
        l_int: mean(col(&|s| s.terms.l_int)),
        l_gd: mean(col(&|s| s.terms.l_gd)),
        l_op: mean(col(&|s| s.terms.l_op)),
    };
    HorizonSummary {
        report: MetricReport {
            horizon,
            psnr_db: psnr_mean,
            l_int: terms.l_int,
            l_gd: terms.l_gd,
            l_op: terms.l_op,
            l_total: terms.combine(&LossWeights::default()),
            n_valid_pixels: samples.iter().map(|s| s.n_valid).sum(),
        },
        psnr_std,
        n_windows: samples.len(),
    }
}

pub fn evaluate(args: &Args) -> Result<Vec<HorizonSummary>> {
    let mask = args.mask.as_ref().map(load_mask).transpose().context("reading mask")?;
    let params = args.flow.params()?;
    if let Some(truth_dir) = &args.truth_dir {
        let preds = list_images(&args.pred_dir)?;
        let samples: Vec<Sample> = preds
            .par_iter()
            .filter_map(|p| {
                let truth = truth_dir.join(p.file_name()?);
                if !truth.exists() {
                    warn!("no truth for {}", p.display());
                    return None;
                }
                let r = (|| score(&load_masked(p, mask.as_ref())?, &load_masked(&truth, mask.as_ref())?, None, &params))();
                r.map_err(|e| warn!("{}: {e:#}", p.display())).ok()
            })
            .collect();
        if samples.is_empty() {
            return Err(usage(format!("no prediction in {} has a matching truth", args.pred_dir.display())));
        }
        return Ok(vec![summarize(0, &samples)]);
    }
    let manifest = args.manifest.as_ref().expect("clap enforces manifest or truth dir");
    let rows = load_manifest(manifest)?;
    if args.horizon == 0 {
        return Err(usage("--horizon must be at least 1"));
    }
    let mut out = Vec::new();
    for k in 1..=args.horizon {
        let samples: Vec<Sample> = rows
            .par_iter()
            .filter_map(|row| {
                let truth = row.targets.get(k - 1)?;
                let pred = prediction_path(&args.pred_dir, &row.anchor_ts, k);
                if !pred.exists() {
                    warn!("missing prediction {}", pred.display());
                    return None;
                }
                let r = (|| {
                    let current = if args.no_motion_loss { None } else { Some(load_masked(&row.inputs[3], mask.as_ref())?) };
                    score(&load_masked(&pred, mask.as_ref())?, &load_masked(truth, mask.as_ref())?, current.as_ref(), &params)
                })();
                r.map_err(|e| warn!("{}: {e:#}", pred.display())).ok()
            })
            .collect();
        out.push(summarize(k, &samples));
    }
    Ok(out)
}

pub fn write_report(path: &Path, rows: &[HorizonSummary]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    w.write_record(METRIC_REPORT_HEADER.iter().chain(&REPORT_EXTRA_COLUMNS))?;
    for r in rows {
        let mut fields = r.report.csv_fields();
        fields.push(format_sig10(r.psnr_std));
        fields.push(r.n_windows.to_string());
        w.write_record(fields)?;
    }
    w.flush()?;

    let dat = path.with_extension("dat");
    let mut d = BufWriter::new(File::create(&dat).with_context(|| format!("creating {}", dat.display()))?);
    writeln!(d, "# horizon psnr_mean_db psnr_std_db n_windows")?;
    for r in rows {
        writeln!(d, "{} {} {} {}", r.report.horizon, format_sig10(r.report.psnr_db), format_sig10(r.psnr_std), r.n_windows)?;
    }
    d.flush()?;
    Ok(())
}

pub fn run(_g: &GlobalArgs, args: &Args) -> Result<Status> {
    let rows = evaluate(args)?;
    write_report(&args.output, &rows)?;
    for r in &rows {
        println!(
            "horizon {}: psnr {} dB (std {}) over {} window(s)",
            r.report.horizon,
            format_sig10(r.report.psnr_db),
            format_sig10(r.psnr_std),
            r.n_windows
        );
    }
    let missing = rows.iter().any(|r| r.n_windows == 0);
    Ok(if missing { Status::PartialFailure } else { Status::Success })
}
