//! Coarse-to-fine Horn-Schunck optical flow and constant-velocity
//! extrapolation.
//!
//! Each pyramid level linearizes brightness constancy around the flow
//! inherited from the coarser level (the second frame is warped by it) and
//! minimizes
//!
//! ```text
//! E = sum_p (Ix du + Iy dv + It)^2 + alpha^2 sum_{p~q} |w_p - w_q|^2
//! ```
//!
//! over 4-neighbour edges between valid pixels. The solver sweeps red and
//! black pixels alternately; each half sweep minimizes `E` exactly over one
//! color, so the energy never increases.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{check_dims, Error, Result};
use crate::geometry::Interpolation;
use crate::image::{BilinearCell, Plane, SkyImage};
use crate::scalar::Scalar;

const SWFL_MAGIC: &[u8; 4] = b"SWFL";
const SWFL_VERSION: u16 = 1;

/// Luma is scaled to 8-bit range before estimation so `alpha` keeps its
/// customary magnitude.
const INTENSITY_SCALE: f64 = 255.0;

/// Coarsest pyramid levels are never smaller than this on either axis.
const MIN_LEVEL_SIZE: usize = 8;

/// Dense displacement, in pixels per frame interval, from the first frame to
/// the second.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T> {
    width: usize,
    height: usize,
    u: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> FlowField<T> {
    pub fn new(width: usize, height: usize, u: Vec<T>, v: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("flow dimensions must be positive".into()));
        }
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::Format { kind: "flow", reason: "component length does not match dimensions".into() });
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::Format { kind: "flow", reason: "non-finite displacement".into() });
        }
        Ok(Self { width, height, u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, u: vec![T::zero(); width * height], v: vec![T::zero(); width * height] }
    }

    pub fn uniform(width: usize, height: usize, u: T, v: T) -> Self {
        Self { width, height, u: vec![u; width * height], v: vec![v; width * height] }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn u(&self) -> &[T] {
        &self.u
    }

    #[inline]
    pub fn v(&self) -> &[T] {
        &self.v
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (T, T) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn magnitude(&self) -> Vec<T> {
        self.u.iter().zip(&self.v).map(|(u, v)| u.hypot(*v)).collect()
    }

    pub fn max_abs(&self) -> T {
        self.u.iter().chain(&self.v).fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn cast<U: Scalar>(&self) -> FlowField<U> {
        let conv = |s: &[T]| s.iter().map(|&x| U::lit(x.to_f64_lossy())).collect();
        FlowField { width: self.width, height: self.height, u: conv(&self.u), v: conv(&self.v) }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(SWFL_MAGIC)?;
        w.write_all(&SWFL_VERSION.to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.u.len() * 8);
        for x in self.u.iter().chain(&self.v) {
            buf.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |reason: &str| Error::Format { kind: "SWFL", reason: reason.to_owned() };
        let mut head = [0u8; 14];
        r.read_exact(&mut head)?;
        if &head[..4] != SWFL_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != SWFL_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let width = u32::from_le_bytes(head[6..10].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(head[10..14].try_into().unwrap()) as usize;
        let n = width.checked_mul(height).filter(|n| *n <= 1 << 30).ok_or_else(|| bad("field too large"))?;
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let vals: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let (u, v) = vals.split_at(n);
        Self::new(width, height, u.to_vec(), v.to_vec())
    }
}

/// Horn-Schunck settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams<T> {
    /// Smoothness weight, for intensities on a 0-255 scale.
    pub alpha: T,
    /// Red-black sweeps per pyramid level.
    pub iterations: usize,
    pub pyramid_levels: usize,
}

impl<T: Scalar> Default for FlowParams<T> {
    fn default() -> Self {
        Self { alpha: T::lit(15.0), iterations: 200, pyramid_levels: 3 }
    }
}

impl<T: Scalar> FlowParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > T::zero()) || self.iterations == 0 || self.pyramid_levels == 0 {
            return Err(Error::InvalidParameter(format!("flow parameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// One pyramid level: scaled luma, validity, and precomputed gradients of the
/// second frame.
struct Level<T> {
    first: Plane<T>,
    first_ok: Vec<bool>,
    second: Plane<T>,
    second_ok: Vec<bool>,
}

fn mask_downsample(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let (w2, h2) = (w.div_ceil(2), h.div_ceil(2));
    let at = |x: usize, y: usize| mask[y.min(h - 1) * w + x.min(w - 1)];
    let mut out = Vec::with_capacity(w2 * h2);
    for y in 0..h2 {
        for x in 0..w2 {
            let (x0, y0) = (2 * x, 2 * y);
            out.push(at(x0, y0) && at(x0 + 1, y0) && at(x0, y0 + 1) && at(x0 + 1, y0 + 1));
        }
    }
    out
}

/// Valid pixels whose central-difference stencil is entirely valid.
fn erode(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            mask[i]
                && (x == 0 || mask[i - 1])
                && (x + 1 == w || mask[i + 1])
                && (y == 0 || mask[i - w])
                && (y + 1 == h || mask[i + w])
        })
        .collect()
}

fn gradients<T: Scalar>(p: &Plane<T>) -> (Plane<T>, Plane<T>) {
    let half = T::lit(0.5);
    let (w, h) = p.dims();
    let gx = Plane::from_fn(w, h, |x, y| {
        (p.get_clamped(x as isize + 1, y as isize) - p.get_clamped(x as isize - 1, y as isize)) * half
    });
    let gy = Plane::from_fn(w, h, |x, y| {
        (p.get_clamped(x as isize, y as isize + 1) - p.get_clamped(x as isize, y as isize - 1)) * half
    });
    (gx, gy)
}

fn build_pyramid<T: Scalar>(prev: &SkyImage<T>, next: &SkyImage<T>, levels: usize) -> Vec<Level<T>> {
    let scale = T::lit(INTENSITY_SCALE);
    let (w, h) = prev.dims();
    let full_mask = |img: &SkyImage<T>| img.valid_mask().map_or_else(|| vec![true; w * h], <[bool]>::to_vec);
    let mut pyramid = vec![Level {
        first: prev.luma().map(|v| v * scale),
        first_ok: full_mask(prev),
        second: next.luma().map(|v| v * scale),
        second_ok: full_mask(next),
    }];
    while pyramid.len() < levels {
        let last = pyramid.last().unwrap();
        let (w, h) = last.first.dims();
        if w.div_ceil(2) < MIN_LEVEL_SIZE || h.div_ceil(2) < MIN_LEVEL_SIZE {
            break;
        }
        let level = Level {
            first: last.first.downsample_half(),
            first_ok: mask_downsample(&last.first_ok, w, h),
            second: last.second.downsample_half(),
            second_ok: mask_downsample(&last.second_ok, w, h),
        };
        pyramid.push(level);
    }
    pyramid
}

/// Linearized brightness-constancy terms at every pixel of a level.
struct DataTerm<T> {
    ix: Vec<T>,
    iy: Vec<T>,
    it: Vec<T>,
    ok: Vec<bool>,
}

fn linearize<T: Scalar>(level: &Level<T>, u0: &[T], v0: &[T]) -> DataTerm<T> {
    let (w, h) = level.first.dims();
    let (g1x, g1y) = gradients(&level.first);
    let (g2x, g2y) = gradients(&level.second);
    let first_ok = erode(&level.first_ok, w, h);
    let second_ok = erode(&level.second_ok, w, h);
    let half = T::lit(0.5);
    let rows: Vec<Vec<(T, T, T, bool)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let i = y * w + x;
                    let zero = (T::zero(), T::zero(), T::zero(), false);
                    if !first_ok[i] {
                        return zero;
                    }
                    let px = T::from_usize_lossy(x) + u0[i];
                    let py = T::from_usize_lossy(y) + v0[i];
                    let Some(cell) = BilinearCell::locate(px, py, w, h) else { return zero };
                    let mut ok = true;
                    cell.for_each_support(|xi, yi| ok &= second_ok[yi * w + xi]);
                    if !ok {
                        return zero;
                    }
                    let i2 = cell.weighted(|xi, yi| level.second.get(xi, yi));
                    let gx2 = cell.weighted(|xi, yi| g2x.get(xi, yi));
                    let gy2 = cell.weighted(|xi, yi| g2y.get(xi, yi));
                    let ix = (g1x.data()[i] + gx2) * half;
                    let iy = (g1y.data()[i] + gy2) * half;
                    (ix, iy, i2 - level.first.data()[i], true)
                })
                .collect()
        })
        .collect();
    let mut term = DataTerm {
        ix: Vec::with_capacity(w * h),
        iy: Vec::with_capacity(w * h),
        it: Vec::with_capacity(w * h),
        ok: Vec::with_capacity(w * h),
    };
    for (ix, iy, it, ok) in rows.into_iter().flatten() {
        term.ix.push(ix);
        term.iy.push(iy);
        term.it.push(it);
        term.ok.push(ok);
    }
    term
}

struct Solver<'a, T> {
    w: usize,
    h: usize,
    alpha2: T,
    active: &'a [bool],
    data: &'a DataTerm<T>,
    u0: &'a [T],
    v0: &'a [T],
}

impl<T: Scalar> Solver<'_, T> {
    /// Mean of the active 4-neighbours and their count.
    #[inline]
    fn neighbour_mean(&self, field: &[T], x: usize, y: usize) -> (T, usize) {
        let i = y * self.w + x;
        let mut sum = T::zero();
        let mut n = 0;
        let mut add = |j: usize| {
            if self.active[j] {
                sum = sum + field[j];
                n += 1;
            }
        };
        if x > 0 {
            add(i - 1);
        }
        if x + 1 < self.w {
            add(i + 1);
        }
        if y > 0 {
            add(i - self.w);
        }
        if y + 1 < self.h {
            add(i + self.w);
        }
        if n == 0 {
            (field[i], 0)
        } else {
            (sum / T::from_usize_lossy(n), n)
        }
    }

    /// Exact minimization of the energy over all pixels of one color.
    fn half_sweep(&self, u: &mut [T], v: &mut [T], parity: usize) {
        let (u_prev, v_prev) = (u.to_vec(), v.to_vec());
        let w = self.w;
        u.par_chunks_mut(w).zip(v.par_chunks_mut(w)).enumerate().for_each(|(y, (urow, vrow))| {
            for x in ((y + parity) % 2..w).step_by(2) {
                let i = y * w + x;
                if !self.active[i] {
                    continue;
                }
                let (ubar, n) = self.neighbour_mean(&u_prev, x, y);
                let (vbar, _) = self.neighbour_mean(&v_prev, x, y);
                let a = self.alpha2 * T::from_usize_lossy(n);
                let (mut un, mut vn) = (ubar, vbar);
                if self.data.ok[i] {
                    let (ix, iy) = (self.data.ix[i], self.data.iy[i]);
                    let den = a + ix * ix + iy * iy;
                    if den > T::zero() {
                        let r = ix * (ubar - self.u0[i]) + iy * (vbar - self.v0[i]) + self.data.it[i];
                        un = ubar - ix * r / den;
                        vn = vbar - iy * r / den;
                    }
                } else if n == 0 {
                    continue;
                }
                urow[x] = un;
                vrow[x] = vn;
            }
        });
    }

    fn energy(&self, u: &[T], v: &[T]) -> T {
        let (w, h) = (self.w, self.h);
        (0..h)
            .into_par_iter()
            .map(|y| {
                let mut e = T::zero();
                for x in 0..w {
                    let i = y * w + x;
                    if !self.active[i] {
                        continue;
                    }
                    if self.data.ok[i] {
                        let r = self.data.ix[i] * (u[i] - self.u0[i])
                            + self.data.iy[i] * (v[i] - self.v0[i])
                            + self.data.it[i];
                        e = e + r * r;
                    }
                    for j in [(x + 1 < w).then_some(i + 1), (y + 1 < h).then_some(i + w)].into_iter().flatten() {
                        if self.active[j] {
                            let (du, dv) = (u[i] - u[j], v[i] - v[j]);
                            e = e + self.alpha2 * (du * du + dv * dv);
                        }
                    }
                }
                e
            })
            .sum()
    }
}

/// Flow estimate together with the finest-level energy recorded before the
/// first sweep and after every tenth sweep.
pub struct FlowTrace<T> {
    pub flow: FlowField<T>,
    pub finest_energy: Vec<T>,
}

/// Horn-Schunck flow from `prev` to `next`.
pub fn estimate_flow<T: Scalar>(prev: &SkyImage<T>, next: &SkyImage<T>, params: &FlowParams<T>) -> Result<FlowField<T>> {
    Ok(estimate_flow_impl(prev, next, params, false)?.flow)
}

/// [`estimate_flow`], also recording the finest-level energy.
pub fn estimate_flow_traced<T: Scalar>(
    prev: &SkyImage<T>,
    next: &SkyImage<T>,
    params: &FlowParams<T>,
) -> Result<FlowTrace<T>> {
    estimate_flow_impl(prev, next, params, true)
}

fn estimate_flow_impl<T: Scalar>(
    prev: &SkyImage<T>,
    next: &SkyImage<T>,
    params: &FlowParams<T>,
    trace: bool,
) -> Result<FlowTrace<T>> {
    params.validate()?;
    check_dims(prev.dims(), next.dims())?;
    let pyramid = build_pyramid(prev, next, params.pyramid_levels);
    let alpha2 = params.alpha * params.alpha;

    let (cw, ch) = pyramid.last().unwrap().first.dims();
    let mut u = vec![T::zero(); cw * ch];
    let mut v = vec![T::zero(); cw * ch];
    let mut finest_energy = Vec::new();

    for (depth, level) in pyramid.iter().enumerate().rev() {
        let (w, h) = level.first.dims();
        if u.len() != w * h {
            // upsample the coarser estimate
            let (pw, ph) = pyramid[depth + 1].first.dims();
            let sx = T::from_usize_lossy(w) / T::from_usize_lossy(pw);
            let sy = T::from_usize_lossy(h) / T::from_usize_lossy(ph);
            u = Plane::new(pw, ph, u)?.resize_bilinear(w, h).map(|x| x * sx).into_data();
            v = Plane::new(pw, ph, v)?.resize_bilinear(w, h).map(|x| x * sy).into_data();
        }
        for (i, ok) in level.first_ok.iter().enumerate() {
            if !ok {
                u[i] = T::zero();
                v[i] = T::zero();
            }
        }
        let (u0, v0) = (u.clone(), v.clone());
        let data = linearize(level, &u0, &v0);
        let solver = Solver { w, h, alpha2, active: &level.first_ok, data: &data, u0: &u0, v0: &v0 };
        let record = trace && depth == 0;
        if record {
            finest_energy.push(solver.energy(&u, &v));
        }
        for it in 0..params.iterations {
            solver.half_sweep(&mut u, &mut v, 0);
            solver.half_sweep(&mut u, &mut v, 1);
            if record && (it + 1) % 10 == 0 {
                finest_energy.push(solver.energy(&u, &v));
            }
        }
    }

    let (w, h) = prev.dims();
    Ok(FlowTrace { flow: FlowField::new(w, h, u, v)?, finest_energy })
}

/// Constant-velocity extrapolation: `out(x) = img(x - steps * flow(x))`.
/// Samples falling outside the image or touching invalid pixels are invalid.
pub fn advect<T: Scalar>(img: &SkyImage<T>, flow: &FlowField<T>, steps: T) -> Result<SkyImage<T>> {
    check_dims(img.dims(), flow.dims())?;
    if !(steps >= T::zero()) || !steps.is_finite() {
        return Err(Error::InvalidParameter(format!("steps must be nonnegative, got {steps}")));
    }
    let (w, h) = img.dims();
    let rows: Vec<(Vec<T>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut px = Vec::with_capacity(3 * w);
            let mut ok = Vec::with_capacity(w);
            for x in 0..w {
                let (fu, fv) = flow.at(x, y);
                let sx = T::from_usize_lossy(x) - steps * fu;
                let sy = T::from_usize_lossy(y) - steps * fv;
                match img.sample(sx, sy, Interpolation::Bilinear) {
                    Some((rgb, valid)) => {
                        px.extend_from_slice(&rgb);
                        ok.push(valid);
                    }
                    None => {
                        px.extend_from_slice(&[T::zero(); 3]);
                        ok.push(false);
                    }
                }
            }
            (px, ok)
        })
        .collect();
    let mut pixels = Vec::with_capacity(3 * w * h);
    let mut mask = Vec::with_capacity(w * h);
    for (p, m) in rows {
        pixels.extend(p);
        mask.extend(m);
    }
    SkyImage::new(w, h, pixels)?.with_mask(mask)
}

/// Predict `horizon` frames past `current` by scaling the flow from `previous`
/// to `current` by 1, 2, ... steps.
pub fn forecast_flow_baseline<T: Scalar>(
    previous: &SkyImage<T>,
    current: &SkyImage<T>,
    horizon: usize,
    params: &FlowParams<T>,
) -> Result<Vec<SkyImage<T>>> {
    let flow = estimate_flow(previous, current, params)?;
    (1..=horizon)
        .map(|k| {
            let pred = advect(current, &flow, T::from_usize_lossy(k))?;
            Ok(pred.with_timestamp(None))
        })
        .collect()
}
