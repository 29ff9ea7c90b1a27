use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{error, info};
use rayon::prelude::*;
use skywarp::{build_warp_maps, unwarp_image, warp_image, SkyImage, WarpDirection, WarpMaps, WarpedCanvas};

use crate::{list_images, parse_size, png_in, usage, GlobalArgs, Status};

pub const TO_WARPED_FILE: &str = "to_warped.swmp";
pub const TO_ORIGINAL_FILE: &str = "to_original.swmp";

#[derive(Debug, clap::Args)]
pub struct Args {
    pub in_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Store both lookup tables in this directory.
    #[arg(long, value_name = "DIR")]
    pub save_maps: Option<PathBuf>,
    /// Reuse lookup tables stored by an earlier `--save-maps`.
    #[arg(long, value_name = "DIR", conflicts_with = "save_maps")]
    pub load_maps: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct UnwarpArgs {
    pub in_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Size of the original frames, `WxH`.
    #[arg(long, value_parser = parse_size)]
    pub orig_size: Option<(usize, usize)>,
    #[arg(long, value_name = "DIR")]
    pub save_maps: Option<PathBuf>,
    #[arg(long, value_name = "DIR", conflicts_with_all = ["save_maps", "orig_size"])]
    pub load_maps: Option<PathBuf>,
}

pub fn read_maps(path: &Path) -> Result<WarpMaps> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    WarpMaps::read_from(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn save_maps(dir: &Path, to_warped: &WarpMaps, to_original: &WarpMaps) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, maps) in [(TO_WARPED_FILE, to_warped), (TO_ORIGINAL_FILE, to_original)] {
        let path = dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        maps.write_to(BufWriter::new(f))?;
    }
    Ok(())
}

/// Both tables, either loaded from `dir` or built for raw frames of `dims`.
pub fn obtain_maps(g: &GlobalArgs, load: Option<&Path>, dims: Option<(usize, usize)>) -> Result<(WarpMaps, WarpMaps)> {
    if let Some(dir) = load {
        let tw = read_maps(&dir.join(TO_WARPED_FILE))?;
        let to = read_maps(&dir.join(TO_ORIGINAL_FILE))?;
        if tw.direction != WarpDirection::ToWarped || to.direction != WarpDirection::ToOriginal {
            bail!("map files in {} have the wrong directions", dir.display());
        }
        return Ok((tw, to));
    }
    let model = g.require_model()?;
    let cfg = g.warp_config()?;
    let dims = dims.ok_or_else(|| usage("original frame size unknown: pass --orig-size or --load-maps"))?;
    Ok(build_warp_maps(&model, &cfg, dims)?)
}

/// Apply `f` to every image of `in_dir`, writing PNGs to `out_dir`. Failures
/// are logged and reported as a partial failure.
fn batch(in_dir: &Path, out_dir: &Path, f: impl Fn(SkyImage<f32>) -> Result<SkyImage<f32>> + Sync) -> Result<Status> {
    require_dir(in_dir)?;
    let files = list_images(in_dir)?;
    if files.is_empty() {
        return Err(usage(format!("no frames in {}", in_dir.display())));
    }
    std::fs::create_dir_all(out_dir)?;
    let failures = files
        .par_iter()
        .map(|path| {
            let result = SkyImage::<f32>::load(path)
                .map_err(anyhow::Error::from)
                .and_then(&f)
                .and_then(|out| Ok(out.save(png_in(out_dir, path))?));
            if let Err(e) = &result {
                error!("{}: {e:#}", path.display());
            }
            result.is_err() as usize
        })
        .sum::<usize>();
    info!("{} of {} frame(s) written to {}", files.len() - failures, files.len(), out_dir.display());
    Ok(if failures == 0 { Status::Success } else { Status::PartialFailure })
}

/// Dimensions of the first decodable image header in `dir`.
fn first_dims(dir: &Path) -> Result<Option<(usize, usize)>> {
    for p in list_images(dir)? {
        if let Ok((w, h)) = image::image_dimensions(&p) {
            return Ok(Some((w as usize, h as usize)));
        }
    }
    Ok(None)
}

fn require_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{} is not a directory", dir.display())))
    }
}

pub fn run_warp(g: &GlobalArgs, args: &Args) -> Result<Status> {
    require_dir(&args.in_dir)?;
    let dims = first_dims(&args.in_dir)?;
    if dims.is_none() && args.load_maps.is_none() {
        return Err(usage(format!("no readable frames in {}", args.in_dir.display())));
    }
    let (tw, to) = obtain_maps(g, args.load_maps.as_deref(), dims)?;
    if let Some(dir) = &args.save_maps {
        save_maps(dir, &tw, &to)?;
    }
    batch(&args.in_dir, &args.out_dir, |img| Ok(warp_image(&img, &tw)?))
}

pub fn run_unwarp(g: &GlobalArgs, args: &UnwarpArgs) -> Result<Status> {
    require_dir(&args.in_dir)?;
    let (tw, to) = obtain_maps(g, args.load_maps.as_deref(), args.orig_size)?;
    if let Some(dir) = &args.save_maps {
        save_maps(dir, &tw, &to)?;
    }
    let canvas = WarpedCanvas::new(&to.model, &to.config)?;
    batch(&args.in_dir, &args.out_dir, |img| {
        // PNG carries no mask; canvas pixels beyond the warp radius are fill
        let img = with_canvas_mask(img, &canvas)?;
        Ok(unwarp_image(&img, &to)?)
    })
}

/// Mark canvas pixels outside the warped disk as invalid.
pub fn with_canvas_mask(img: SkyImage<f32>, canvas: &WarpedCanvas) -> Result<SkyImage<f32>> {
    let (w, h) = img.dims();
    if (w, h) != (canvas.side, canvas.side) {
        bail!("expected a {0}x{0} warped frame, got {w}x{h}", canvas.side);
    }
    let mask = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64 - canvas.center, (i / w) as f64 - canvas.center);
            x.hypot(y) <= canvas.radius
        })
        .collect();
    Ok(img.with_mask(mask)?)
}
