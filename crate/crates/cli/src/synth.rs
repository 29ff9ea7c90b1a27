use std::path::PathBuf;

use anyhow::{Context, Result};
use chrono::{Duration, NaiveDateTime};
use rayon::prelude::*;
use skywarp::dataset::ANCHOR_TS_FORMAT;
use skywarp::{render_frame, unwarp_radius, MirrorModel, SceneSpec, SkyImage, SynthScene};

use crate::model_file::write_model;
use crate::{parse_size, usage, GlobalArgs, Status};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Scene file with `seed`, `height_m`, `vx`, `vy`, `frames` lines.
    pub scene: PathBuf,
    pub out_dir: PathBuf,
    /// Frame size `WxH`.
    #[arg(long, value_parser = parse_size, default_value = "352x288")]
    pub size: (usize, usize),
    /// Timestamp of frame 0, `YYYYMMDDHHMMSS`.
    #[arg(long, default_value = "20020601120000")]
    pub start: String,
    /// Also write the mirror model used for rendering.
    #[arg(long, value_name = "PATH")]
    pub model_out: Option<PathBuf>,
}

/// Mirror centered in the frame whose `rho_max` circle nearly fills the
/// shorter side.
pub fn default_model(size: (usize, usize), rho_max: f64) -> Result<MirrorModel<f64>> {
    let unit = MirrorModel::new(1.0, (0.0, 0.0))?;
    let fov_fraction = unwarp_radius(rho_max, &unit)?;
    let half = 0.5 * size.0.min(size.1) as f64 - 1.0;
    let center = (0.5 * (size.0 as f64 - 1.0), 0.5 * (size.1 as f64 - 1.0));
    Ok(MirrorModel::new(half / fov_fraction, center)?)
}

pub fn run(g: &GlobalArgs, args: &Args) -> Result<Status> {
    let text = std::fs::read_to_string(&args.scene).with_context(|| format!("reading {}", args.scene.display()))?;
    let spec: SceneSpec = text.parse().map_err(|e: skywarp::Error| usage(e.to_string()))?;
    let start = NaiveDateTime::parse_from_str(&args.start, ANCHOR_TS_FORMAT)
        .map_err(|_| usage(format!("--start must look like 20020601120000, got {:?}", args.start)))?;
    let model = match &g.model {
        Some(_) => g.require_model()?,
        None => default_model(args.size, g.rho_max)?,
    };
    let mut scene = SynthScene::new(spec.seed, spec.height_m, (spec.vx, spec.vy), model)?;
    scene.rho_max = g.rho_max;
    std::fs::create_dir_all(&args.out_dir)?;
    if let Some(path) = &args.model_out {
        write_model(path, &model)?;
    }
    (0..spec.frames).into_par_iter().try_for_each(|k| {
        let img: SkyImage<f32> = render_frame(&scene, k as i64, args.size)?;
        let ts = start + Duration::milliseconds((k as f64 * scene.frame_period_s * 1000.0).round() as i64);
        let path = args.out_dir.join(format!("{}.png", ts.format(ANCHOR_TS_FORMAT)));
        img.save(&path).with_context(|| format!("writing {}", path.display()))
    })?;
    Ok(Status::Success)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_model_fits_the_frame() {
        let m = default_model((352, 288), 3.0).unwrap();
        let fov = unwarp_radius(3.0, &m).unwrap();
        assert!((fov - 143.0).abs() < 1e-9);
        assert_eq!(m.center(), (175.5, 143.5));
    }
}
