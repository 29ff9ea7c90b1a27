//! Synthetic sky sequences with exactly known ground motion.
//!
//! A single flat cloud layer at height `h` carries a tiling value-noise
//! texture that translates with a constant ground velocity. Frames are
//! rendered through the mirror model, so in the warped representation the
//! layer moves by the same number of pixels everywhere.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flow::{estimate_flow, FlowParams};
use crate::geometry::{unwarp_radius, warp_radius, MirrorModel};
use crate::image::SkyImage;
use crate::scalar::Scalar;
use crate::warp::{WarpMaps, WarpedCanvas};

/// Clear-sky color the clouds are blended over.
pub const SKY_BLUE: [f64; 3] = [0.35, 0.55, 0.85];
const CLOUD_WHITE: [f64; 3] = [1.0, 1.0, 1.0];

/// Sub-samples per pixel axis when rendering.
const SUPERSAMPLE: usize = 2;

/// Multi-octave value noise on the ground plane, periodic in both axes.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudTexture {
    pub seed: u64,
    /// Lattice spacing of the coarsest octave, in meters.
    pub base_wavelength_m: f64,
    pub octaves: u32,
    pub persistence: f64,
    /// Tiling period in meters; rounded up to a whole number of coarse cells.
    pub period_m: f64,
    /// Translation applied to the whole texture, in meters.
    pub offset_m: (f64, f64),
}

impl CloudTexture {
    /// Four octaves, persistence 0.5, tiling every `50 h`.
    pub fn for_height(seed: u64, height_m: f64) -> Self {
        Self { seed, base_wavelength_m: 1.5 * height_m, octaves: 4, persistence: 0.5, period_m: 50.0 * height_m, offset_m: (0.0, 0.0) }
    }

    fn cells(&self) -> u64 {
        (self.period_m / self.base_wavelength_m).ceil().max(1.0) as u64
    }

    /// Noise value in `[0, 1]` at ground position `(x, y)` meters.
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let (x, y) = (x - self.offset_m.0, y - self.offset_m.1);
        let base_cells = self.cells();
        let mut sum = 0.0;
        let mut norm = 0.0;
        let mut amp = 1.0;
        for octave in 0..self.octaves {
            let scale = (1u64 << octave) as f64;
            let cell = self.base_wavelength_m / scale;
            let n = base_cells << octave;
            sum += amp * self.lattice_bilinear(octave, n, x / cell, y / cell);
            norm += amp;
            amp *= self.persistence;
        }
        sum / norm
    }

    fn lattice_bilinear(&self, octave: u32, n: u64, fx: f64, fy: f64) -> f64 {
        let (x0, y0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - x0, fy - y0);
        let wrap = |v: f64| (v as i64).rem_euclid(n as i64) as u64;
        let (ix0, iy0) = (wrap(x0), wrap(y0));
        let (ix1, iy1) = ((ix0 + 1) % n, (iy0 + 1) % n);
        let at = |ix: u64, iy: u64| lattice_value(self.seed, octave, ix, iy);
        let top = at(ix0, iy0) * (1.0 - tx) + at(ix1, iy0) * tx;
        let bottom = at(ix0, iy1) * (1.0 - tx) + at(ix1, iy1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice_value(seed: u64, octave: u32, ix: u64, iy: u64) -> f64 {
    let h = splitmix64(seed ^ splitmix64((octave as u64) << 48 ^ splitmix64(ix ^ splitmix64(iy))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// A translating cloud layer seen through the mirror.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub texture: CloudTexture,
    pub height_m: f64,
    /// Ground velocity `(vx, vy)` in m/s, along image `+x` and `+y`.
    pub velocity_mps: (f64, f64),
    pub model: MirrorModel<f64>,
    pub frame_period_s: f64,
    /// Pixels beyond this normalized ground radius are outside the rendered
    /// field of view.
    pub rho_max: f64,
}

impl SynthScene {
    pub fn new(seed: u64, height_m: f64, velocity_mps: (f64, f64), model: MirrorModel<f64>) -> Result<Self> {
        if !(height_m > 0.0) {
            return Err(Error::InvalidParameter(format!("cloud height must be positive, got {height_m}")));
        }
        Ok(Self {
            texture: CloudTexture::for_height(seed, height_m),
            height_m,
            velocity_mps,
            model,
            frame_period_s: 30.0,
            rho_max: 3.0,
        })
    }

    /// Ground displacement of the layer after `frame_index` frames.
    pub fn ground_shift(&self, frame_index: i64) -> (f64, f64) {
        let t = frame_index as f64 * self.frame_period_s;
        (self.velocity_mps.0 * t, self.velocity_mps.1 * t)
    }

    /// Radius of the rendered field of view in raw pixels.
    pub fn fov_radius_px(&self) -> Result<f64> {
        unwarp_radius(self.rho_max, &self.model)
    }

    /// Color of the sky along the ray through raw pixel position `(u, v)`,
    /// `None` outside the field of view.
    fn shade(&self, u: f64, v: f64, shift: (f64, f64)) -> Option<[f64; 3]> {
        let (s, theta) = self.model.polar(u, v);
        let rho = self.height_m * warp_radius(s, &self.model).ok()?;
        let gx = rho * theta.cos() - shift.0;
        let gy = rho * theta.sin() - shift.1;
        let alpha = self.texture.value(gx, gy);
        Some([0, 1, 2].map(|c| (1.0 - alpha) * SKY_BLUE[c] + alpha * CLOUD_WHITE[c]))
    }
}

/// Render frame `frame_index` at `dims`. Pixels outside the field of view are
/// black and masked.
pub fn render_frame<T: Scalar>(scene: &SynthScene, frame_index: i64, dims: (usize, usize)) -> Result<SkyImage<T>> {
    let (w, h) = dims;
    if w == 0 || h == 0 {
        return Err(Error::InvalidParameter("frame dimensions must be positive".into()));
    }
    let fov = scene.fov_radius_px()?;
    let shift = scene.ground_shift(frame_index);
    let mut mask = Vec::with_capacity(w * h);
    let mut pixels = Vec::with_capacity(3 * w * h);
    let step = 1.0 / SUPERSAMPLE as f64;
    for y in 0..h {
        for x in 0..w {
            let (s, _) = scene.model.polar(x as f64, y as f64);
            if s > fov {
                mask.push(false);
                pixels.extend([T::zero(); 3]);
                continue;
            }
            let mut acc = [0.0; 3];
            let mut n = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let u = x as f64 - 0.5 + (sx as f64 + 0.5) * step;
                    let v = y as f64 - 0.5 + (sy as f64 + 0.5) * step;
                    if let Some(rgb) = scene.shade(u, v, shift) {
                        acc.iter_mut().zip(rgb).for_each(|(a, c)| *a += c);
                        n += 1;
                    }
                }
            }
            mask.push(n > 0);
            let n = n.max(1) as f64;
            pixels.extend(acc.map(|a| T::lit((a / n).clamp(0.0, 1.0))));
        }
    }
    Ok(SkyImage::new(w, h, pixels)?
        .with_mask(mask)?
        .with_timestamp(Some(frame_index as f64 * scene.frame_period_s)))
}

/// Which representation flow is measured in.
#[derive(Debug, Clone, Copy)]
pub enum FlowSpace<'a> {
    /// Raw mirror frames, annuli centered on the mirror.
    Raw { model: &'a MirrorModel<f64>, rho_max: f64 },
    /// Frames already resampled by this raw-to-warped table.
    Warped { maps: &'a WarpMaps },
}

/// Mean flow magnitude of one annulus.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnulusFlow {
    /// Inner and outer radius as fractions of the field-of-view radius.
    pub inner: f64,
    pub outer: f64,
    pub mean_magnitude: f64,
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowUniformity {
    pub annuli: Vec<AnnulusFlow>,
    /// Population standard deviation of the annulus means over their mean.
    pub coefficient_of_variation: f64,
}

/// Estimate flow between consecutive frames and average its magnitude over
/// `count` annuli equally spaced in output radius between `radial_range.0`
/// and `radial_range.1` (fractions of the field-of-view radius).
pub fn measure_flow_uniformity<T: Scalar>(
    frames: &[SkyImage<T>],
    space: FlowSpace<'_>,
    count: usize,
    radial_range: (f64, f64),
    params: &FlowParams<T>,
) -> Result<FlowUniformity> {
    if frames.len() < 2 {
        return Err(Error::InvalidParameter("need at least two frames".into()));
    }
    let (lo, hi) = radial_range;
    if count == 0 || !(lo >= 0.0 && hi > lo) {
        return Err(Error::InvalidParameter(format!("bad annulus layout: {count} in {radial_range:?}")));
    }
    let (center, fov_radius) = match space {
        FlowSpace::Raw { model, rho_max } => (model.center(), unwarp_radius(rho_max, model)?),
        FlowSpace::Warped { maps } => {
            let canvas = WarpedCanvas::new(&maps.model, &maps.config)?;
            ((canvas.center, canvas.center), canvas.radius)
        }
    };
    let mut sums = vec![0.0; count];
    let mut counts = vec![0usize; count];
    for pair in frames.windows(2) {
        let flow = estimate_flow(&pair[0], &pair[1], params)?;
        let mask = SkyImage::joint_mask(&[&pair[0], &pair[1]])?;
        let (w, h) = flow.dims();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !mask[i] {
                    continue;
                }
                let r = (x as f64 - center.0).hypot(y as f64 - center.1) / fov_radius;
                if r < lo || r >= hi {
                    continue;
                }
                let k = (((r - lo) / (hi - lo)) * count as f64).floor() as usize;
                let (u, v) = flow.at(x, y);
                sums[k.min(count - 1)] += u.hypot(v).to_f64_lossy();
                counts[k.min(count - 1)] += 1;
            }
        }
    }
    let width = (hi - lo) / count as f64;
    let annuli: Vec<AnnulusFlow> = (0..count)
        .map(|k| AnnulusFlow {
            inner: lo + k as f64 * width,
            outer: lo + (k + 1) as f64 * width,
            mean_magnitude: if counts[k] > 0 { sums[k] / counts[k] as f64 } else { f64::NAN },
            pixels: counts[k],
        })
        .collect();
    let means: Vec<f64> = annuli.iter().map(|a| a.mean_magnitude).collect();
    let mean = means.iter().sum::<f64>() / count as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / count as f64;
    let coefficient_of_variation = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };
    Ok(FlowUniformity { annuli, coefficient_of_variation })
}

/// Contents of a `key=value` scene file.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub height_m: f64,
    pub vx: f64,
    pub vy: f64,
    pub frames: usize,
}

impl FromStr for SceneSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::Format { kind: "scene spec", reason };
        let (mut seed, mut height_m, mut vx, mut vy, mut frames) = (None, None, None, None, None);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("line {}: bad number {v:?}", lineno + 1)));
            match key {
                "seed" => seed = Some(value.parse().map_err(|_| bad(format!("bad seed {value:?}")))?),
                "height_m" => height_m = Some(num(value)?),
                "vx" => vx = Some(num(value)?),
                "vy" => vy = Some(num(value)?),
                "frames" => frames = Some(value.parse().map_err(|_| bad(format!("bad frame count {value:?}")))?),
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        let spec = SceneSpec {
            seed: seed.unwrap_or(0),
            height_m: height_m.ok_or_else(|| bad("missing height_m".into()))?,
            vx: vx.unwrap_or(0.0),
            vy: vy.unwrap_or(0.0),
            frames: frames.ok_or_else(|| bad("missing frames".into()))?,
        };
        if !(spec.height_m > 0.0) || spec.frames == 0 {
            return Err(bad("height_m and frames must be positive".into()));
        }
        Ok(spec)
    }
}

impl std::fmt::Display for SceneSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "seed={}", self.seed)?;
        writeln!(f, "height_m={}", self.height_m)?;
        writeln!(f, "vx={}", self.vx)?;
        writeln!(f, "vy={}", self.vy)?;
        writeln!(f, "frames={}", self.frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(v: (f64, f64)) -> SynthScene {
        let model = MirrorModel::new(90.0, (48.0, 48.0)).unwrap();
        SynthScene::new(7, 1000.0, v, model).unwrap()
    }

    #[test]
    fn texture_is_deterministic_and_periodic() {
        let t = CloudTexture::for_height(3, 1000.0);
        let p = t.cells() as f64 * t.base_wavelength_m;
        assert!(p >= 50_000.0);
        for &(x, y) in &[(12.5, -300.0), (4000.0, 77.0)] {
            let v = t.value(x, y);
            assert!((0.0..=1.0).contains(&v));
            assert_eq!(v, t.value(x, y));
            assert!((v - t.value(x + p, y - p)).abs() < 1e-12);
        }
        let other = CloudTexture::for_height(4, 1000.0);
        assert_ne!(t.value(10.0, 10.0), other.value(10.0, 10.0));
    }

    #[test]
    fn static_scene_frames_match() {
        let s = scene((0.0, 0.0));
        let a: SkyImage<f64> = render_frame(&s, 0, (96, 96)).unwrap();
        let b: SkyImage<f64> = render_frame(&s, 5, (96, 96)).unwrap();
        assert_eq!(a.pixels(), b.pixels());
        assert_eq!(a, render_frame(&s, 0, (96, 96)).unwrap());
    }

    #[test]
    fn ground_point_carries_its_color_between_frames() {
        // A ground point P seen in frame 0 must show the same texture in frame
        // k at the pixel whose ray hits P + v k T.
        let s = scene((10.0, -4.0));
        let k = 3;
        let (dx, dy) = s.ground_shift(k);
        let (cx, cy) = s.model.center();
        let r = s.model.radius_px();
        for &(u, v) in &[(50.0, 52.5), (30.0, 40.0), (60.5, 35.0), (44.0, 70.0)] {
            let (su, sv): (f64, f64) = (u - cx, v - cy);
            let sr = su.hypot(sv);
            let rho = 2.0 * sr / (2.0 * (r * r - sr * sr).sqrt() - r);
            let (gx, gy) = (s.height_m * rho * su / sr + dx, s.height_m * rho * sv / sr + dy);
            let g = gx.hypot(gy) / s.height_m;
            // inverse warp via the quadratic root, independent of the library
            let s2 = r * g * (-1.0 + (4.0 + 3.0 * g * g).sqrt()) / (2.0 * (1.0 + g * g));
            let (u2, v2) = (cx + s2 * gx / gx.hypot(gy), cy + s2 * gy / gx.hypot(gy));
            let before = s.shade(u, v, s.ground_shift(0)).unwrap();
            let after = s.shade(u2, v2, (dx, dy)).unwrap();
            for c in 0..3 {
                assert!((before[c] - after[c]).abs() < 1e-9, "{before:?} vs {after:?}");
            }
        }
    }

    #[test]
    fn moving_frame_equals_preshifted_static_frame() {
        let moving = scene((10.0, -4.0));
        let mut still = scene((0.0, 0.0));
        still.texture.offset_m = moving.ground_shift(4);
        let a: SkyImage<f64> = render_frame(&moving, 4, (64, 64)).unwrap();
        let b: SkyImage<f64> = render_frame(&still, 0, (64, 64)).unwrap();
        assert_eq!(a.pixels(), b.pixels());
        assert_ne!(a.pixels(), render_frame::<f64>(&moving, 0, (64, 64)).unwrap().pixels());
    }

    #[test]
    fn outside_fov_is_masked() {
        let s = scene((0.0, 0.0));
        let img: SkyImage<f32> = render_frame(&s, 0, (96, 96)).unwrap();
        assert!(!img.is_valid(0, 0));
        assert!(img.is_valid(48, 48));
        assert_eq!(img.pixel(0, 0), [0.0; 3]);
        let expected = crate::warp::fov_mask(&s.model, s.rho_max, (96, 96)).unwrap();
        assert_eq!(img.valid_mask().unwrap(), expected.as_slice());
    }

    #[test]
    fn scene_spec_parsing() {
        let spec: SceneSpec = "# demo\nseed=42\nheight_m=1000\nvx=10\nvy=-2.5\nframes=12\n".parse().unwrap();
        assert_eq!(spec, SceneSpec { seed: 42, height_m: 1000.0, vx: 10.0, vy: -2.5, frames: 12 });
        assert_eq!(spec.to_string().parse::<SceneSpec>().unwrap(), spec);
        assert!("height_m=1000".parse::<SceneSpec>().is_err());
        assert!("height_m=1000\nframes=2\ncolour=red".parse::<SceneSpec>().is_err());
        assert!("height_m=-1\nframes=2".parse::<SceneSpec>().is_err());
    }

    #[test]
    fn static_scene_has_no_flow() {
        let s = scene((0.0, 0.0));
        let frames: Vec<SkyImage<f64>> = (0..2).map(|k| render_frame(&s, k, (96, 96)).unwrap()).collect();
        let report = measure_flow_uniformity(
            &frames,
            FlowSpace::Raw { model: &s.model, rho_max: 3.0 },
            4,
            (0.05, 0.95),
            &FlowParams::default(),
        )
        .unwrap();
        assert!(report.annuli.iter().all(|a| a.mean_magnitude < 1e-6 && a.pixels > 0));
    }
}
