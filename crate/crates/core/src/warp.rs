//! Resampling tables between raw mirror images and the height-invariant
//! warped canvas, plus their binary on-disk form.
//!
//! The warped canvas is a square of side `2N + 1` centered on pixel `(N, N)`,
//! with `N = ceil(upsample * s_max)` and `s_max` the pixel radius imaging
//! `rho_max`. Output radius is linear in `rho_tilde`: radius `N` is `rho_max`.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{unwarp_radius, warp_radius, MirrorModel, WarpConfig};
use crate::image::SkyImage;
use crate::scalar::Scalar;

const SWMP_MAGIC: &[u8; 4] = b"SWMP";
const SWMP_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpDirection {
    /// Raw mirror image to warped canvas.
    ToWarped,
    /// Warped canvas back to raw mirror image.
    ToOriginal,
}

impl WarpDirection {
    fn code(self) -> u8 {
        match self {
            WarpDirection::ToWarped => 0,
            WarpDirection::ToOriginal => 1,
        }
    }
}

/// Layout of the warped canvas for a given mirror and config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpedCanvas {
    pub side: usize,
    /// Canvas pixel holding the mirror center, on both axes.
    pub center: f64,
    /// Output radius, in canvas pixels, of `rho_max`.
    pub radius: f64,
}

impl WarpedCanvas {
    pub fn new(model: &MirrorModel<f64>, config: &WarpConfig<f64>) -> Result<Self> {
        config.validate()?;
        let s_max = unwarp_radius(config.rho_max, model)?;
        let half = (config.upsample as f64 * s_max).ceil().max(1.0) as usize;
        Ok(Self { side: 2 * half + 1, center: half as f64, radius: half as f64 })
    }

    /// Canvas pixels per unit of normalized ground radius.
    pub fn pixels_per_rho(&self, rho_max: f64) -> f64 {
        self.radius / rho_max
    }
}

/// Per-output-pixel source coordinates. Out-of-domain entries hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpMaps {
    pub direction: WarpDirection,
    pub out_width: usize,
    pub out_height: usize,
    pub src_x: Vec<f32>,
    pub src_y: Vec<f32>,
    pub model: MirrorModel<f64>,
    pub config: WarpConfig<f64>,
    /// Dimensions of the images the table samples from, when known.
    pub src_dims: Option<(usize, usize)>,
}

impl WarpMaps {
    #[inline]
    pub fn source(&self, x: usize, y: usize) -> Option<(f32, f32)> {
        let i = y * self.out_width + x;
        let (sx, sy) = (self.src_x[i], self.src_y[i]);
        (!sx.is_nan() && !sy.is_nan()).then_some((sx, sy))
    }

    pub fn sentinel_count(&self) -> usize {
        self.src_x.iter().filter(|v| v.is_nan()).count()
    }

    /// Bilinear interpolation of the coordinate table itself. `None` if any
    /// supporting entry is a sentinel or the point is off the table.
    pub fn interpolate(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let max_x = (self.out_width - 1) as f64;
        let max_y = (self.out_height - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
            return None;
        }
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as usize, y0 as usize);
        let x1 = (x0 + 1).min(self.out_width - 1);
        let y1 = (y0 + 1).min(self.out_height - 1);
        let mut acc = (0.0, 0.0);
        for (xi, yi, w) in [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ] {
            if w == 0.0 {
                continue;
            }
            let (sx, sy) = self.source(xi, yi)?;
            acc.0 += w * sx as f64;
            acc.1 += w * sy as f64;
        }
        Some(acc)
    }

    /// Largest local magnification (output pixels per source pixel) of the
    /// table around an output pixel, from finite differences of the source
    /// coordinates.
    fn magnification(&self, x: usize, y: usize) -> Option<f64> {
        let here = self.source(x, y)?;
        let diff = |a: Option<(f32, f32)>, b: Option<(f32, f32)>, span: f64| {
            a.zip(b).map(|(a, b)| (((a.0 - b.0) as f64) / span, ((a.1 - b.1) as f64) / span))
        };
        let along = |prev: Option<(f32, f32)>, next: Option<(f32, f32)>| {
            diff(next, prev, 2.0)
                .or_else(|| diff(next, Some(here), 1.0))
                .or_else(|| diff(Some(here), prev, 1.0))
        };
        let left = (x > 0).then(|| self.source(x - 1, y)).flatten();
        let right = (x + 1 < self.out_width).then(|| self.source(x + 1, y)).flatten();
        let up = (y > 0).then(|| self.source(x, y - 1)).flatten();
        let down = (y + 1 < self.out_height).then(|| self.source(x, y + 1)).flatten();
        let (a, c) = along(left, right)?;
        let (b, d) = along(up, down)?;
        let sum_sq = a * a + b * b + c * c + d * d;
        let det = a * d - b * c;
        let disc = (sum_sq * sum_sq - 4.0 * det * det).max(0.0).sqrt();
        let sigma_min = ((sum_sq - disc) / 2.0).max(0.0).sqrt();
        Some(if sigma_min > 0.0 { 1.0 / sigma_min } else { f64::INFINITY })
    }

    /// Axis-aligned bound of every non-sentinel source coordinate.
    fn source_extent(&self) -> Option<(f32, f32)> {
        self.src_x
            .iter()
            .zip(&self.src_y)
            .filter(|(x, y)| !x.is_nan() && !y.is_nan())
            .fold(None, |acc, (&x, &y)| match acc {
                None => Some((x, y)),
                Some((mx, my)) => Some((mx.max(x), my.max(y))),
            })
    }

    fn check_source<T: Scalar>(&self, img: &SkyImage<T>) -> Result<()> {
        match self.src_dims {
            Some(dims) => crate::error::check_dims(dims, img.dims()),
            None => {
                if let Some((mx, my)) = self.source_extent() {
                    if mx as f64 > (img.width() - 1) as f64 + 1e-3 || my as f64 > (img.height() - 1) as f64 + 1e-3 {
                        return Err(Error::DimensionMismatch {
                            expected: (mx.ceil() as usize + 1, my.ceil() as usize + 1),
                            actual: img.dims(),
                        });
                    }
                }
                Ok(())
            }
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(SWMP_MAGIC)?;
        w.write_all(&SWMP_VERSION.to_le_bytes())?;
        w.write_all(&[self.direction.code()])?;
        w.write_all(&(self.out_width as u32).to_le_bytes())?;
        w.write_all(&(self.out_height as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.src_x.len() * 8);
        for (x, y) in self.src_x.iter().zip(&self.src_y) {
            buf.extend_from_slice(&canonical_nan(*x).to_le_bytes());
            buf.extend_from_slice(&canonical_nan(*y).to_le_bytes());
        }
        w.write_all(&buf)?;
        let (cx, cy) = self.model.center();
        for v in [self.model.radius_px(), cx, cy, self.config.rho_max] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.config.upsample as u32).to_le_bytes())?;
        Ok(())
    }

    /// Parse an SWMP table. Fill, interpolation and pre-blur settings are not
    /// stored and come back as defaults.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |reason: &str| Error::Format { kind: "SWMP", reason: reason.to_owned() };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SWMP_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != SWMP_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let direction = match read_array::<1>(&mut r)?[0] {
            0 => WarpDirection::ToWarped,
            1 => WarpDirection::ToOriginal,
            d => return Err(bad(&format!("unknown direction {d}"))),
        };
        let out_width = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let out_height = u32::from_le_bytes(read_array(&mut r)?) as usize;
        if out_width == 0 || out_height == 0 {
            return Err(bad("empty table"));
        }
        let n = out_width
            .checked_mul(out_height)
            .filter(|n| *n <= 1 << 30)
            .ok_or_else(|| bad("table too large"))?;
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let mut src_x = Vec::with_capacity(n);
        let mut src_y = Vec::with_capacity(n);
        for chunk in raw.chunks_exact(8) {
            src_x.push(f32::from_le_bytes(chunk[0..4].try_into().unwrap()));
            src_y.push(f32::from_le_bytes(chunk[4..8].try_into().unwrap()));
        }
        let radius = f64::from_le_bytes(read_array(&mut r)?);
        let cx = f64::from_le_bytes(read_array(&mut r)?);
        let cy = f64::from_le_bytes(read_array(&mut r)?);
        let rho_max = f64::from_le_bytes(read_array(&mut r)?);
        let upsample = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let model = MirrorModel::new(radius, (cx, cy))?;
        let config = WarpConfig { rho_max, upsample, ..WarpConfig::default() };
        config.validate()?;
        let src_dims = match direction {
            WarpDirection::ToOriginal => {
                let canvas = WarpedCanvas::new(&model, &config)?;
                Some((canvas.side, canvas.side))
            }
            WarpDirection::ToWarped => None,
        };
        Ok(Self { direction, out_width, out_height, src_x, src_y, model, config, src_dims })
    }
}

fn canonical_nan(v: f32) -> f32 {
    if v.is_nan() {
        f32::NAN
    } else {
        v
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Build the raw-to-warped and warped-to-raw tables for raw images of size
/// `in_dims`. Points outside the valid domain become sentinels.
pub fn build_warp_maps(
    model: &MirrorModel<f64>,
    config: &WarpConfig<f64>,
    in_dims: (usize, usize),
) -> Result<(WarpMaps, WarpMaps)> {
    config.validate()?;
    let (w, h) = in_dims;
    if w == 0 || h == 0 {
        return Err(Error::InvalidParameter("input dimensions must be positive".into()));
    }
    let canvas = WarpedCanvas::new(model, config)?;
    let (cx, cy) = model.center();
    let rho_max = config.rho_max;
    let rho_slack = rho_max * 1e-12;
    let in_bounds = |x: f64, y: f64, w: usize, h: usize| {
        x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64
    };

    let side = canvas.side;
    let to_warped_rows: Vec<Vec<(f32, f32)>> = (0..side)
        .into_par_iter()
        .map(|y| {
            (0..side)
                .map(|x| {
                    let dx = x as f64 - canvas.center;
                    let dy = y as f64 - canvas.center;
                    let r = dx.hypot(dy);
                    let rho = r / canvas.radius * rho_max;
                    if rho > rho_max + rho_slack {
                        return (f32::NAN, f32::NAN);
                    }
                    let Ok(s) = unwarp_radius(rho.min(rho_max), model) else {
                        return (f32::NAN, f32::NAN);
                    };
                    let (sx, sy) = if r > 0.0 { (cx + s * dx / r, cy + s * dy / r) } else { (cx, cy) };
                    if in_bounds(sx, sy, w, h) {
                        (sx as f32, sy as f32)
                    } else {
                        (f32::NAN, f32::NAN)
                    }
                })
                .collect()
        })
        .collect();

    let to_original_rows: Vec<Vec<(f32, f32)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let (s, _) = model.polar(x as f64, y as f64);
                    let Ok(rho) = warp_radius(s, model) else {
                        return (f32::NAN, f32::NAN);
                    };
                    if rho > rho_max + rho_slack {
                        return (f32::NAN, f32::NAN);
                    }
                    let r = rho.min(rho_max) / rho_max * canvas.radius;
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    let (wx, wy) =
                        if s > 0.0 { (canvas.center + r * dx / s, canvas.center + r * dy / s) } else { (canvas.center, canvas.center) };
                    let max = (side - 1) as f64;
                    (wx.clamp(0.0, max) as f32, wy.clamp(0.0, max) as f32)
                })
                .collect()
        })
        .collect();

    let unzip = |rows: Vec<Vec<(f32, f32)>>| -> (Vec<f32>, Vec<f32>) { rows.into_iter().flatten().unzip() };
    let (wx, wy) = unzip(to_warped_rows);
    let (ox, oy) = unzip(to_original_rows);
    let to_warped = WarpMaps {
        direction: WarpDirection::ToWarped,
        out_width: side,
        out_height: side,
        src_x: wx,
        src_y: wy,
        model: *model,
        config: *config,
        src_dims: Some(in_dims),
    };
    let to_original = WarpMaps {
        direction: WarpDirection::ToOriginal,
        out_width: w,
        out_height: h,
        src_x: ox,
        src_y: oy,
        model: *model,
        config: *config,
        src_dims: Some((side, side)),
    };
    Ok((to_warped, to_original))
}

/// Resample `img` through `maps`. Pixels without a valid source get the fill
/// value and are marked invalid.
pub fn remap_image<T: Scalar>(img: &SkyImage<T>, maps: &WarpMaps) -> Result<SkyImage<T>> {
    maps.check_source(img)?;
    let config = maps.config.cast::<T>();
    let fill = config.fill_value;
    let interpolation = config.interpolation;

    // Magnified regions read from a lightly blurred copy of the source.
    let blurred = match config.preblur_sigma {
        Some(sigma) if sigma > T::zero() => Some(img.gaussian_blur(sigma)),
        _ => None,
    };

    let width = maps.out_width;
    let rows: Vec<(Vec<T>, Vec<bool>)> = (0..maps.out_height)
        .into_par_iter()
        .map(|y| {
            let mut px = Vec::with_capacity(width * 3);
            let mut valid = Vec::with_capacity(width);
            for x in 0..width {
                let sampled = maps.source(x, y).and_then(|(sx, sy)| {
                    let src = match &blurred {
                        Some(b) if maps.magnification(x, y).is_some_and(|m| m > 2.0) => b,
                        _ => img,
                    };
                    src.sample(T::lit(sx as f64), T::lit(sy as f64), interpolation)
                });
                match sampled {
                    Some((rgb, true)) => {
                        px.extend_from_slice(&rgb);
                        valid.push(true);
                    }
                    _ => {
                        px.extend_from_slice(&fill);
                        valid.push(false);
                    }
                }
            }
            (px, valid)
        })
        .collect();

    let mut pixels = Vec::with_capacity(width * maps.out_height * 3);
    let mut mask = Vec::with_capacity(width * maps.out_height);
    for (p, m) in rows {
        pixels.extend(p);
        mask.extend(m);
    }
    Ok(SkyImage::new(width, maps.out_height, pixels)?.with_mask(mask)?.with_timestamp(img.timestamp))
}

/// Validity mask of raw pixels within the `rho_max` field of view.
pub fn fov_mask(model: &MirrorModel<f64>, rho_max: f64, dims: (usize, usize)) -> Result<Vec<bool>> {
    let fov = unwarp_radius(rho_max, model)?;
    let (w, h) = dims;
    Ok((0..w * h).map(|i| model.polar((i % w) as f64, (i / w) as f64).0 <= fov).collect())
}

/// Raw mirror image to the warped canvas.
pub fn warp_image<T: Scalar>(img: &SkyImage<T>, maps: &WarpMaps) -> Result<SkyImage<T>> {
    if maps.direction != WarpDirection::ToWarped {
        return Err(Error::InvalidParameter("warp_image needs a to_warped table".into()));
    }
    remap_image(img, maps)
}

/// Warped canvas back to the raw mirror image.
pub fn unwarp_image<T: Scalar>(warped: &SkyImage<T>, maps: &WarpMaps) -> Result<SkyImage<T>> {
    if maps.direction != WarpDirection::ToOriginal {
        return Err(Error::InvalidParameter("unwarp_image needs a to_original table".into()));
    }
    remap_image(warped, maps)
}
