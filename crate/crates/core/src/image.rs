//! In-memory RGB frames, single-channel planes and the resampling kernels
//! shared by warping, flow and advection.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{check_dims, Error, Result};
use crate::geometry::Interpolation;
use crate::scalar::Scalar;

/// Sample coordinates may overshoot the last pixel center by this much and
/// still be clamped onto it.
const EDGE_SLACK: f64 = 1e-3;

/// Single-channel row-major raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> Plane<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("plane dimensions must be positive".into()));
        }
        if data.len() != width * height {
            return Err(Error::Format {
                kind: "plane",
                reason: format!("expected {} samples, got {}", width * height, data.len()),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
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
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    /// Read with replicated borders.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> T {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear sample; `None` outside the pixel-center hull.
    pub fn sample_bilinear(&self, x: T, y: T) -> Option<T> {
        let cell = BilinearCell::locate(x, y, self.width, self.height)?;
        Some(cell.weighted(|xi, yi| self.get(xi, yi)))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn gaussian_blur(&self, sigma: T) -> Self {
        let kernel = gaussian_kernel(sigma);
        if kernel.len() == 1 {
            return self.clone();
        }
        let r = (kernel.len() / 2) as isize;
        let (w, h) = self.dims();
        let mut tmp = vec![T::zero(); w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::zero();
                for (k, &wk) in kernel.iter().enumerate() {
                    acc = acc + wk * self.get_clamped(x as isize + k as isize - r, y as isize);
                }
                tmp[y * w + x] = acc;
            }
        }
        let tmp = Plane { width: w, height: h, data: tmp };
        Plane::from_fn(w, h, |x, y| {
            kernel
                .iter()
                .enumerate()
                .fold(T::zero(), |acc, (k, &wk)| acc + wk * tmp.get_clamped(x as isize, y as isize + k as isize - r))
        })
    }

    /// Halve resolution by 2x2 box averaging (odd trailing row/column replicated).
    pub fn downsample_half(&self) -> Self {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        let quarter = T::lit(0.25);
        Plane::from_fn(w, h, |x, y| {
            let (x0, y0) = (2 * x as isize, 2 * y as isize);
            (self.get_clamped(x0, y0)
                + self.get_clamped(x0 + 1, y0)
                + self.get_clamped(x0, y0 + 1)
                + self.get_clamped(x0 + 1, y0 + 1))
                * quarter
        })
    }

    /// Resize to `(width, height)` with bilinear interpolation, aligning pixel
    /// centers of a 2x pyramid step.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        let sx = T::from_usize_lossy(self.width) / T::from_usize_lossy(width);
        let sy = T::from_usize_lossy(self.height) / T::from_usize_lossy(height);
        let half = T::lit(0.5);
        let max_x = T::from_usize_lossy(self.width - 1);
        let max_y = T::from_usize_lossy(self.height - 1);
        Plane::from_fn(width, height, |x, y| {
            let fx = ((T::from_usize_lossy(x) + half) * sx - half).max(T::zero()).min(max_x);
            let fy = ((T::from_usize_lossy(y) + half) * sy - half).max(T::zero()).min(max_y);
            self.sample_bilinear(fx, fy).unwrap_or_else(T::zero)
        })
    }
}

/// Normalized 1-D Gaussian kernel of radius `ceil(3 sigma)`.
pub(crate) fn gaussian_kernel<T: Scalar>(sigma: T) -> Vec<T> {
    if !(sigma > T::zero()) {
        return vec![T::one()];
    }
    let radius = (T::lit(3.0) * sigma).ceil().to_usize().unwrap_or(0).max(1);
    let two_s2 = T::lit(2.0) * sigma * sigma;
    let mut k: Vec<T> = (0..=2 * radius)
        .map(|i| {
            let d = T::from_usize_lossy(i) - T::from_usize_lossy(radius);
            (-(d * d) / two_s2).exp()
        })
        .collect();
    let sum: T = k.iter().copied().sum();
    k.iter_mut().for_each(|v| *v = *v / sum);
    k
}

/// The up-to-four source pixels of a bilinear lookup.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BilinearCell<T> {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    fx: T,
    fy: T,
}

impl<T: Scalar> BilinearCell<T> {
    #[inline]
    pub(crate) fn locate(x: T, y: T, width: usize, height: usize) -> Option<Self> {
        let slack = T::lit(EDGE_SLACK);
        let max_x = T::from_usize_lossy(width - 1);
        let max_y = T::from_usize_lossy(height - 1);
        if !(x >= -slack && y >= -slack && x <= max_x + slack && y <= max_y + slack) {
            return None;
        }
        let x = x.max(T::zero()).min(max_x);
        let y = y.max(T::zero()).min(max_y);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0.to_usize()?;
        let y0 = y0.to_usize()?;
        Some(Self { x0, y0, x1: (x0 + 1).min(width - 1), y1: (y0 + 1).min(height - 1), fx, fy })
    }

    #[inline]
    pub(crate) fn nearest(&self) -> (usize, usize) {
        let half = T::lit(0.5);
        (if self.fx >= half { self.x1 } else { self.x0 }, if self.fy >= half { self.y1 } else { self.y0 })
    }

    /// Pixels with nonzero weight.
    #[inline]
    pub(crate) fn for_each_support(&self, mut f: impl FnMut(usize, usize)) {
        f(self.x0, self.y0);
        if self.fx > T::zero() {
            f(self.x1, self.y0);
        }
        if self.fy > T::zero() {
            f(self.x0, self.y1);
            if self.fx > T::zero() {
                f(self.x1, self.y1);
            }
        }
    }

    #[inline]
    pub(crate) fn weighted(&self, get: impl Fn(usize, usize) -> T) -> T {
        let one = T::one();
        let top = get(self.x0, self.y0) * (one - self.fx) + get(self.x1, self.y0) * self.fx;
        let bottom = get(self.x0, self.y1) * (one - self.fx) + get(self.x1, self.y1) * self.fx;
        top * (one - self.fy) + bottom * self.fy
    }
}

/// RGB frame with intensities in `[0, 1]`, an optional capture time and an
/// optional validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SkyImage<T> {
    width: usize,
    height: usize,
    pixels: Vec<T>,
    /// Seconds since the Unix epoch.
    pub timestamp: Option<f64>,
    valid_mask: Option<Vec<bool>>,
}

impl<T: Scalar> SkyImage<T> {
    pub fn new(width: usize, height: usize, pixels: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image dimensions must be positive".into()));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::Format {
                kind: "image",
                reason: format!("expected {} samples, got {}", width * height * 3, pixels.len()),
            });
        }
        if let Some(bad) = pixels.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::Format { kind: "image", reason: format!("intensity {bad} outside [0, 1]") });
        }
        Ok(Self { width, height, pixels, timestamp: None, valid_mask: None })
    }

    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Self { width, height, pixels, timestamp: None, valid_mask: None }
    }

    /// Build from a per-pixel function; values are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [T; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend(f(x, y).iter().map(|v| clamp01(*v)));
            }
        }
        Self { width, height, pixels, timestamp: None, valid_mask: None }
    }

    /// Same-valued RGB from a plane (clamped into `[0, 1]`).
    pub fn from_gray(plane: &Plane<T>) -> Self {
        Self::from_fn(plane.width(), plane.height(), |x, y| [plane.get(x, y); 3])
    }

    pub fn from_channels(channels: [&Plane<T>; 3]) -> Result<Self> {
        let dims = channels[0].dims();
        check_dims(dims, channels[1].dims())?;
        check_dims(dims, channels[2].dims())?;
        Ok(Self::from_fn(dims.0, dims.1, |x, y| {
            [channels[0].get(x, y), channels[1].get(x, y), channels[2].get(x, y)]
        }))
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.width * self.height {
            return Err(Error::Format {
                kind: "mask",
                reason: format!("expected {} entries, got {}", self.width * self.height, mask.len()),
            });
        }
        self.valid_mask = Some(mask);
        Ok(self)
    }

    pub fn without_mask(mut self) -> Self {
        self.valid_mask = None;
        self
    }

    pub fn with_timestamp(mut self, ts: Option<f64>) -> Self {
        self.timestamp = ts;
        self
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
    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    #[inline]
    pub fn valid_mask(&self) -> Option<&[bool]> {
        self.valid_mask.as_deref()
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [T; 3]) {
        let i = 3 * (y * self.width + x);
        for c in 0..3 {
            self.pixels[i + c] = clamp01(rgb[c]);
        }
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid_mask.as_ref().is_none_or(|m| m[y * self.width + x])
    }

    pub fn valid_count(&self) -> usize {
        match &self.valid_mask {
            Some(m) => m.iter().filter(|v| **v).count(),
            None => self.width * self.height,
        }
    }

    /// Mask that is true where every given image is valid.
    pub fn joint_mask(images: &[&SkyImage<T>]) -> Result<Vec<bool>> {
        let first = images.first().ok_or(Error::EmptyMask)?;
        let mut mask = vec![true; first.width * first.height];
        for img in images {
            check_dims(first.dims(), img.dims())?;
            if let Some(m) = &img.valid_mask {
                mask.iter_mut().zip(m).for_each(|(a, b)| *a &= *b);
            }
        }
        Ok(mask)
    }

    pub fn channel(&self, c: usize) -> Plane<T> {
        Plane::from_fn(self.width, self.height, |x, y| self.pixel(x, y)[c])
    }

    /// Rec. 601 luma.
    pub fn luma(&self) -> Plane<T> {
        let (kr, kg, kb) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
        Plane::from_fn(self.width, self.height, |x, y| {
            let [r, g, b] = self.pixel(x, y);
            kr * r + kg * g + kb * b
        })
    }

    pub fn gaussian_blur(&self, sigma: T) -> Self {
        let blurred = [0, 1, 2].map(|c| self.channel(c).gaussian_blur(sigma));
        let mut out = Self::from_channels([&blurred[0], &blurred[1], &blurred[2]]).expect("same dims");
        out.timestamp = self.timestamp;
        out.valid_mask = self.valid_mask.clone();
        out
    }

    /// Resample at a real position. Returns the color and whether every
    /// contributing pixel is valid; `None` when outside the image.
    #[inline]
    pub fn sample(&self, x: T, y: T, interpolation: Interpolation) -> Option<([T; 3], bool)> {
        let cell = BilinearCell::locate(x, y, self.width, self.height)?;
        match interpolation {
            Interpolation::Nearest => {
                let (xi, yi) = cell.nearest();
                Some((self.pixel(xi, yi), self.is_valid(xi, yi)))
            }
            Interpolation::Bilinear => {
                let mut valid = true;
                if self.valid_mask.is_some() {
                    cell.for_each_support(|xi, yi| valid &= self.is_valid(xi, yi));
                }
                let rgb = [0, 1, 2].map(|c| cell.weighted(|xi, yi| self.pixels[3 * (yi * self.width + xi) + c]));
                Some((rgb.map(clamp01), valid))
            }
        }
    }

    /// Replace invalid pixels by the corresponding pixels of `fallback` and
    /// take over its mask there.
    pub fn fill_invalid_from(&mut self, fallback: &SkyImage<T>) -> Result<()> {
        check_dims(self.dims(), fallback.dims())?;
        let Some(mask) = self.valid_mask.as_mut() else {
            return Ok(());
        };
        for (i, valid) in mask.iter_mut().enumerate() {
            if !*valid {
                let (x, y) = (i % self.width, i / self.width);
                self.pixels[3 * i..3 * i + 3].copy_from_slice(&fallback.pixel(x, y));
                *valid = fallback.is_valid(x, y);
            }
        }
        Ok(())
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let scale = T::lit(1.0 / 255.0);
        let pixels = img.as_raw().iter().map(|&v| T::from_u8(v).expect("u8 fits") * scale).collect();
        Self { width: w as usize, height: h as usize, pixels, timestamp: None, valid_mask: None }
    }

    /// Quantize to 8 bits; invalid pixels keep whatever value they hold.
    pub fn to_rgb8(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width as u32, self.height as u32);
        for (i, px) in out.pixels_mut().enumerate() {
            *px = Rgb([0, 1, 2].map(|c| quantize_u8(self.pixels[3 * i + c])));
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_owned(), source })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb8().save(path).map_err(|source| Error::Image { path: path.to_owned(), source })
    }

    pub fn cast<U: Scalar>(&self) -> SkyImage<U> {
        SkyImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            timestamp: self.timestamp,
            valid_mask: self.valid_mask.clone(),
        }
    }
}

#[inline]
fn clamp01<T: Scalar>(v: T) -> T {
    if v.is_nan() {
        T::zero()
    } else {
        v.max(T::zero()).min(T::one())
    }
}

#[inline]
fn quantize_u8<T: Scalar>(v: T) -> u8 {
    (clamp01(v) * T::lit(255.0)).round().to_u8().unwrap_or(0)
}

/// Load a mask image: pixels brighter than mid-gray are valid.
pub fn load_mask(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_owned(), source })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Ok((w as usize, h as usize, gray.as_raw().iter().map(|&v| v >= 128).collect()))
}

pub fn save_mask(path: impl AsRef<Path>, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let path = path.as_ref();
    let raw = mask.iter().map(|&v| if v { 255u8 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| Error::Format { kind: "mask", reason: "size does not match dimensions".into() })?;
    img.save(path).map_err(|source| Error::Image { path: path.to_owned(), source })
}
