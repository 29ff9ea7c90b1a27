use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::error;
use rayon::prelude::*;
use skywarp::dataset::{read_manifest, ManifestRow};
use skywarp::{forecast_frames, fov_mask, FlowParams, ForecastMethod, ForecastSpace, SkyImage};

use crate::warp::obtain_maps;
use crate::{usage, GlobalArgs, Method, Space, Status};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Window manifest from `windows`.
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "flow")]
    pub method: Method,
    #[arg(long, value_enum, default_value = "raw")]
    pub space: Space,
    /// Lookup tables from `warp --save-maps`. With these or `--model`,
    /// pixels outside the field of view are ignored.
    #[arg(long, value_name = "DIR")]
    pub load_maps: Option<PathBuf>,
    /// Predict only the first N targets of each window.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[command(flatten)]
    pub flow: FlowArgs,
}

#[derive(Debug, Clone, clap::Args)]
pub struct FlowArgs {
    /// Horn-Schunck smoothness weight.
    #[arg(long, default_value_t = 15.0)]
    pub alpha: f32,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
}

impl FlowArgs {
    pub fn params(&self) -> Result<FlowParams<f32>> {
        let p = FlowParams { alpha: self.alpha, iterations: self.iterations, pyramid_levels: self.levels };
        p.validate().map_err(|e| usage(e.to_string()))?;
        Ok(p)
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_manifest(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn prediction_path(dir: &Path, anchor_ts: &str, k: usize) -> PathBuf {
    dir.join(format!("{anchor_ts}_pred{k}.png"))
}

pub fn run(g: &GlobalArgs, args: &Args) -> Result<Status> {
    let rows = load_manifest(&args.manifest)?;
    let Some(first) = rows.first() else {
        return Ok(Status::Success);
    };
    let horizon = args.horizon.unwrap_or(first.horizon());
    if horizon == 0 || horizon > first.horizon() {
        return Err(usage(format!("--horizon must be in 1..={}", first.horizon())));
    }
    let params = args.flow.params()?;
    let method = match args.method {
        Method::Persistence => ForecastMethod::Persistence,
        Method::Flow => ForecastMethod::Flow,
    };
    let maps = match args.space {
        Space::Raw => None,
        Space::Warped => {
            let dims = image::image_dimensions(&first.inputs[3])
                .ok()
                .map(|(w, h)| (w as usize, h as usize));
            Some(obtain_maps(g, args.load_maps.as_deref(), dims)?)
        }
    };
    // raw frames carry no mask; without one the dark border is advected inward
    let fov = match (&maps, &g.model) {
        (Some((tw, _)), _) => Some((tw.model, tw.config.rho_max)),
        (None, Some(_)) => Some((g.require_model()?, g.rho_max)),
        (None, None) => None,
    };
    let space = match &maps {
        None => ForecastSpace::Raw,
        Some((tw, to)) => ForecastSpace::Warped { to_warped: tw, to_original: to },
    };
    std::fs::create_dir_all(&args.out_dir)?;
    let failures: usize = rows
        .par_iter()
        .map(|row| {
            let result = (|| -> Result<()> {
                let mut previous = SkyImage::<f32>::load(&row.inputs[2])?;
                let mut current = SkyImage::<f32>::load(&row.inputs[3])?;
                if let Some((model, rho_max)) = &fov {
                    let mask = fov_mask(model, *rho_max, current.dims())?;
                    previous = previous.with_mask(mask.clone())?;
                    current = current.with_mask(mask)?;
                }
                let preds = forecast_frames(&previous, &current, horizon, method, space, &params)?;
                for (k, p) in preds.iter().enumerate() {
                    p.save(prediction_path(&args.out_dir, &row.anchor_ts, k + 1))?;
                }
                Ok(())
            })();
            if let Err(e) = &result {
                error!("window {}: {e:#}", row.anchor_ts);
            }
            result.is_err() as usize
        })
        .sum();
    Ok(if failures == 0 { Status::Success } else { Status::PartialFailure })
}
