use std::path::PathBuf;

use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use skywarp::{estimate_horizon_circle, mirror_from_horizon, MirrorModel, SkyImage};

use crate::model_file::{format_model, write_model};
use crate::{list_images, usage, GlobalArgs, Status};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// A frame, or a directory of frames (the median model is kept).
    pub input: PathBuf,
    /// Skip detection and use this horizon circle: `cx,cy,horizon_radius`.
    #[arg(long = "override", value_name = "CX,CY,RH")]
    pub override_circle: Option<String>,
    /// Where to write the model; printed to stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn parse_override(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("--override expects cx,cy,rh, got {s:?}")))?;
    match parts[..] {
        [cx, cy, rh] => Ok((cx, cy, rh)),
        _ => Err(usage(format!("--override expects three numbers, got {s:?}"))),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn calibrate(args: &Args) -> Result<(MirrorModel<f64>, Status)> {
    if let Some(s) = &args.override_circle {
        let (cx, cy, rh) = parse_override(s)?;
        return Ok((mirror_from_horizon(rh, (cx, cy)).map_err(|e| usage(e.to_string()))?, Status::Success));
    }
    let files = if args.input.is_dir() {
        list_images(&args.input)?
    } else if args.input.is_file() {
        vec![args.input.clone()]
    } else {
        return Err(usage(format!("{} does not exist", args.input.display())));
    };
    if files.is_empty() {
        return Err(usage(format!("no frames in {}", args.input.display())));
    }
    let fits: Vec<_> = files
        .par_iter()
        .map(|p| {
            let img: SkyImage<f32> = SkyImage::load(p)?;
            let c = estimate_horizon_circle(&img)?;
            Ok::<_, skywarp::Error>(c)
        })
        .collect();
    let mut circles = Vec::new();
    for (path, fit) in files.iter().zip(fits) {
        match fit {
            Ok(c) => circles.push(c),
            Err(e) => warn!("{}: {e}", path.display()),
        }
    }
    if circles.is_empty() {
        anyhow::bail!("calibration failed on every frame");
    }
    let status = if circles.len() == files.len() { Status::Success } else { Status::PartialFailure };
    let cx = median(circles.iter().map(|c| c.center.0).collect());
    let cy = median(circles.iter().map(|c| c.center.1).collect());
    let rh = median(circles.iter().map(|c| c.radius).collect());
    info!("horizon circle from {} frame(s): center ({cx:.2}, {cy:.2}) radius {rh:.2}", circles.len());
    Ok((mirror_from_horizon(rh, (cx, cy)).context("building mirror model")?, status))
}

pub fn run(_g: &GlobalArgs, args: &Args) -> Result<Status> {
    let (model, status) = calibrate(args)?;
    match &args.output {
        Some(path) => write_model(path, &model)?,
        None => print!("{}", format_model(&model)),
    }
    Ok(status)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn override_bypasses_detection() {
        let args = Args { input: "/nonexistent".into(), override_circle: Some("10,20,100".into()), output: None };
        let (m, s) = calibrate(&args).unwrap();
        assert_eq!(s, Status::Success);
        assert_eq!(m.center(), (10.0, 20.0));
        assert!((m.radius_px() - 100.0 * 2f64.sqrt()).abs() < 1e-9);
        let bad = Args { override_circle: Some("1,2".into()), ..args };
        assert_eq!(crate::status_of(&calibrate(&bad).unwrap_err()), Status::InvalidInvocation);
    }
}
