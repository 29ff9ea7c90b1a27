//! Image formation of an orthographic camera looking down on a spherical mirror.
//!
//! A cloud at ground radius `rho` and height `h` appears at pixel radius `s`
//! from the mirror center. Dividing `rho` by `h` gives the normalized ground
//! radius `rho_tilde`, which depends on `s` alone:
//!
//! ```text
//! rho_tilde(s) = 2 s / (2 sqrt(R^2 - s^2) - R)
//! ```
//!
//! The map is only finite for `s < (sqrt(3) / 2) R`. Polar angle is shared
//! between the image plane and the ground plane.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Calibrated mirror: radius and optical axis position, in image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirrorModel<T> {
    radius_px: T,
    center: (T, T),
}

impl<T: Scalar> MirrorModel<T> {
    pub fn new(radius_px: T, center: (T, T)) -> Result<Self> {
        if !(radius_px > T::zero()) || !radius_px.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mirror radius must be positive, got {radius_px}"
            )));
        }
        if !center.0.is_finite() || !center.1.is_finite() {
            return Err(Error::InvalidParameter("mirror center must be finite".into()));
        }
        Ok(Self { radius_px, center })
    }

    #[inline]
    pub fn radius_px(&self) -> T {
        self.radius_px
    }

    #[inline]
    pub fn center(&self) -> (T, T) {
        self.center
    }

    /// Pixel radius where the warp denominator vanishes, `(sqrt(3) / 2) R`.
    #[inline]
    pub fn domain_limit(&self) -> T {
        T::lit(3.0).sqrt() / T::lit(2.0) * self.radius_px
    }

    /// Whether the mirror disk overlaps an image of the given size.
    pub fn overlaps_image(&self, width: usize, height: usize) -> bool {
        let (cx, cy) = self.center;
        let r = self.radius_px;
        let w = T::from_usize_lossy(width);
        let h = T::from_usize_lossy(height);
        // distance from center to the closest point of the image rectangle
        let dx = (T::zero() - cx).max(cx - (w - T::one())).max(T::zero());
        let dy = (T::zero() - cy).max(cy - (h - T::one())).max(T::zero());
        (dx * dx + dy * dy).sqrt() < r
    }

    /// Polar coordinates `(s, theta)` of a pixel about the mirror center.
    /// `theta` is 0 on the optical axis.
    #[inline]
    pub fn polar(&self, u: T, v: T) -> (T, T) {
        let dx = u - self.center.0;
        let dy = v - self.center.1;
        let s = dx.hypot(dy);
        let theta = if s == T::zero() { T::zero() } else { dy.atan2(dx) };
        (s, theta)
    }

    pub fn cast<U: Scalar>(&self) -> MirrorModel<U> {
        MirrorModel {
            radius_px: U::lit(self.radius_px.to_f64_lossy()),
            center: (
                U::lit(self.center.0.to_f64_lossy()),
                U::lit(self.center.1.to_f64_lossy()),
            ),
        }
    }
}

/// Interpolation kernel used when resampling images through a warp table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

/// Parameters of the warped representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpConfig<T> {
    /// Largest normalized ground radius kept in the warped image.
    pub rho_max: T,
    /// Scale factor applied to the mirror footprint when sizing the warped canvas.
    pub upsample: usize,
    /// RGB value written where a pixel has no valid source.
    pub fill_value: [T; 3],
    pub interpolation: Interpolation,
    /// Gaussian pre-blur applied to sources wherever the map magnifies by more
    /// than 2x. `None` disables it.
    pub preblur_sigma: Option<T>,
}

impl<T: Scalar> Default for WarpConfig<T> {
    fn default() -> Self {
        Self {
            rho_max: T::lit(3.0),
            upsample: 3,
            fill_value: [T::zero(); 3],
            interpolation: Interpolation::Bilinear,
            preblur_sigma: Some(T::lit(0.5)),
        }
    }
}

impl<T: Scalar> WarpConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_max > T::zero()) || !self.rho_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "rho_max must be positive, got {}",
                self.rho_max
            )));
        }
        if self.upsample == 0 {
            return Err(Error::InvalidParameter("upsample must be at least 1".into()));
        }
        if let Some(sigma) = self.preblur_sigma {
            if !(sigma >= T::zero()) {
                return Err(Error::InvalidParameter("preblur sigma must be nonnegative".into()));
            }
        }
        if self.fill_value.iter().any(|c| !(*c >= T::zero() && *c <= T::one())) {
            return Err(Error::InvalidParameter("fill value must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> WarpConfig<U> {
        WarpConfig {
            rho_max: U::lit(self.rho_max.to_f64_lossy()),
            upsample: self.upsample,
            fill_value: self.fill_value.map(|c| U::lit(c.to_f64_lossy())),
            interpolation: self.interpolation,
            preblur_sigma: self.preblur_sigma.map(|s| U::lit(s.to_f64_lossy())),
        }
    }
}

/// Ground plane location of a cloud in polar form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPoint<T> {
    pub rho: T,
    pub theta: T,
    pub h: T,
}

impl<T: Scalar> GroundPoint<T> {
    pub fn to_cartesian(&self) -> (T, T) {
        (self.rho * self.theta.cos(), self.rho * self.theta.sin())
    }
}

fn warp_denominator<T: Scalar>(s: T, model: &MirrorModel<T>) -> Result<T> {
    let r = model.radius_px;
    if !(s >= T::zero()) {
        return Err(Error::Domain(format!("pixel radius must be nonnegative, got {s}")));
    }
    if s >= model.domain_limit() {
        return Err(Error::Domain(format!(
            "pixel radius {s} at or beyond the warp singularity {}",
            model.domain_limit()
        )));
    }
    let denom = T::lit(2.0) * (r * r - s * s).sqrt() - r;
    if !(denom > T::zero()) {
        return Err(Error::Domain(format!(
            "pixel radius {s} at or beyond the warp singularity {}",
            model.domain_limit()
        )));
    }
    Ok(denom)
}

/// Normalized ground radius `rho / h` seen at pixel radius `s`.
pub fn warp_radius<T: Scalar>(s: T, model: &MirrorModel<T>) -> Result<T> {
    let denom = warp_denominator(s, model)?;
    Ok(T::lit(2.0) * s / denom)
}

/// Derivative `d rho_tilde / d s` of [`warp_radius`].
pub fn warp_radius_derivative<T: Scalar>(s: T, model: &MirrorModel<T>) -> Result<T> {
    let denom = warp_denominator(s, model)?;
    let r = model.radius_px;
    let root = (r * r - s * s).sqrt();
    let two = T::lit(2.0);
    Ok((two * denom + T::lit(4.0) * s * s / root) / (denom * denom))
}

/// Pixel radius imaging the normalized ground radius `rho_tilde`; inverse of
/// [`warp_radius`].
pub fn unwarp_radius<T: Scalar>(rho_tilde: T, model: &MirrorModel<T>) -> Result<T> {
    if !(rho_tilde >= T::zero()) {
        return Err(Error::Domain(format!(
            "normalized ground radius must be nonnegative, got {rho_tilde}"
        )));
    }
    let r = model.radius_px;
    let q = T::one() + rho_tilde * rho_tilde;
    if rho_tilde.is_infinite() {
        return Ok(model.domain_limit());
    }
    let root = (T::one() + T::lit(3.0) * q).sqrt();
    Ok((-r * rho_tilde + r * rho_tilde * root) / (T::lit(2.0) * q))
}

/// Distance from the mirror point at pixel radius `s` to a cloud at height `h`,
/// with the mirror height neglected against `h`.
pub fn gamma<T: Scalar>(s: T, h: T, model: &MirrorModel<T>) -> Result<T> {
    if !(h > T::zero()) {
        return Err(Error::Domain(format!("cloud height must be positive, got {h}")));
    }
    let denom = warp_denominator(s, model)?;
    Ok(h * model.radius_px / denom)
}

/// Project pixel `(u, v)` onto the cloud plane at height `h`.
pub fn pixel_to_ground<T: Scalar>(u: T, v: T, h: T, model: &MirrorModel<T>) -> Result<GroundPoint<T>> {
    if !(h > T::zero()) {
        return Err(Error::Domain(format!("cloud height must be positive, got {h}")));
    }
    let (s, theta) = model.polar(u, v);
    let rho = h * warp_radius(s, model)?;
    Ok(GroundPoint { rho, theta, h })
}

/// Half field of view, in degrees, covered by `rho_tilde <= rho_max`.
pub fn fov_half_angle<T: Scalar>(rho_max: T) -> Result<T> {
    if !(rho_max >= T::zero()) {
        return Err(Error::Domain(format!("rho_max must be nonnegative, got {rho_max}")));
    }
    Ok(rho_max.atan().to_degrees())
}

/// Mirror model from the horizon circle, which images at `R / sqrt(2)`.
pub fn mirror_from_horizon<T: Scalar>(horizon_radius_px: T, center: (T, T)) -> Result<MirrorModel<T>> {
    if !(horizon_radius_px > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "horizon radius must be positive, got {horizon_radius_px}"
        )));
    }
    MirrorModel::new(T::SQRT_2() * horizon_radius_px, center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit() -> MirrorModel<f64> {
        MirrorModel::new(1.0, (0.0, 0.0)).unwrap()
    }

    // Positive root of a s^2 + b s + c = 0.
    fn positive_root(a: f64, b: f64, c: f64) -> f64 {
        (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a)
    }

    #[test]
    fn warp_radius_examples() {
        let m = unit();
        assert_eq!(warp_radius(0.0, &m).unwrap(), 0.0);
        // squaring the warp with rho_tilde = 1 gives 8 s^2 + 4 s - 3 = 0
        let s1 = positive_root(8.0, 4.0, -3.0);
        assert_abs_diff_eq!(s1, 0.411438, epsilon = 1e-6);
        assert_abs_diff_eq!(warp_radius(0.411438, &m).unwrap(), 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(warp_radius(s1, &m).unwrap(), 1.0, epsilon = 1e-12);
        // rho_tilde = 3 gives 40 s^2 + 12 s - 27 = 0
        let s3 = positive_root(40.0, 12.0, -27.0);
        assert_abs_diff_eq!(s3, 0.685165, epsilon = 1e-6);
        assert_abs_diff_eq!(warp_radius(0.685165, &m).unwrap(), 3.0, epsilon = 1e-4);
        assert_abs_diff_eq!(warp_radius(s3, &m).unwrap(), 3.0, epsilon = 1e-12);
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(warp_radius(s, &m).unwrap(), 2.0 + 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn warp_radius_domain() {
        let m = unit();
        assert!(matches!(warp_radius(-0.1, &m), Err(Error::Domain(_))));
        assert!(matches!(warp_radius(3f64.sqrt() / 2.0, &m), Err(Error::Domain(_))));
        assert!(matches!(warp_radius(0.9, &m), Err(Error::Domain(_))));
        assert!(matches!(warp_radius(1.5, &m), Err(Error::Domain(_))));
        assert!(warp_radius(0.866, &m).is_ok());
    }

    #[test]
    fn unwarp_radius_examples() {
        let m = unit();
        assert_eq!(unwarp_radius(0.0, &m).unwrap(), 0.0);
        assert_abs_diff_eq!(unwarp_radius(1.0, &m).unwrap(), (7f64.sqrt() - 1.0) / 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            unwarp_radius(3.0, &m).unwrap(),
            3.0 * (31f64.sqrt() - 1.0) / 20.0,
            epsilon = 1e-14
        );
        assert!(matches!(unwarp_radius(-1e-9, &m), Err(Error::Domain(_))));
        assert!(unwarp_radius(1e9, &m).unwrap() < m.domain_limit());
    }

    #[test]
    fn scales_with_mirror_radius() {
        let m = MirrorModel::new(176.0, (10.0, 20.0)).unwrap();
        assert_abs_diff_eq!(unwarp_radius(1.0, &m).unwrap(), 176.0 * 0.4114378277661477, epsilon = 1e-9);
        assert_abs_diff_eq!(warp_radius(176.0 * 0.4114378277661477, &m).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gamma_examples() {
        let m = unit();
        assert_abs_diff_eq!(gamma(0.0, 500.0, &m).unwrap(), 500.0, epsilon = 1e-12);
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(gamma(s, 1.0, &m).unwrap(), 1.0 / (2f64.sqrt() - 1.0), epsilon = 1e-12);
        let s1 = (7f64.sqrt() - 1.0) / 4.0;
        let expected = 1.0 / (2.0 * (1.0 - s1 * s1).sqrt() - 1.0);
        assert_abs_diff_eq!(gamma(s1, 1.0, &m).unwrap(), expected, epsilon = 1e-12);
        // at rho_tilde = 1 the distance is h / (2 s)
        assert_abs_diff_eq!(gamma(s1, 1.0, &m).unwrap(), 1.0 / (2.0 * s1), epsilon = 1e-12);
        assert_abs_diff_eq!(gamma(0.411438, 1.0, &m).unwrap(), 1.215251, epsilon = 1e-5);
        assert!(gamma(0.1, 0.0, &m).is_err());
        assert!(gamma(0.9, 1.0, &m).is_err());
    }

    #[test]
    fn gamma_increasing() {
        let m = unit();
        let mut prev = 0.0;
        for i in 0..800 {
            let g = gamma(i as f64 * 1e-3, 1000.0, &m).unwrap();
            assert!(g > prev);
            prev = g;
        }
    }

    #[test]
    fn pixel_to_ground_examples() {
        let m = MirrorModel::new(200.0, (176.0, 144.0)).unwrap();
        let p = pixel_to_ground(176.0, 144.0, 1234.0, &m).unwrap();
        assert_eq!((p.rho, p.theta, p.h), (0.0, 0.0, 1234.0));

        let s1 = 200.0 * (7f64.sqrt() - 1.0) / 4.0;
        let p = pixel_to_ground(176.0 + s1, 144.0, 1000.0, &m).unwrap();
        assert_abs_diff_eq!(p.rho, 1000.0, epsilon = 1e-9);
        assert_eq!(p.theta, 0.0);

        let q = 37.5;
        let p = pixel_to_ground(176.0, 144.0 + q, 800.0, &m).unwrap();
        assert_abs_diff_eq!(p.theta, std::f64::consts::FRAC_PI_2, epsilon = 1e-15);
        assert_eq!(p.rho, 800.0 * warp_radius(q, &m).unwrap());

        assert!(pixel_to_ground(176.0 + 190.0, 144.0, 1000.0, &m).is_err());
    }

    #[test]
    fn fov_examples() {
        assert_abs_diff_eq!(fov_half_angle(1.0).unwrap(), 45.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fov_half_angle(3.0).unwrap(), 71.565, epsilon = 1e-3);
        assert_eq!(fov_half_angle(0.0).unwrap(), 0.0);
        assert!(fov_half_angle(-1.0).is_err());
    }

    #[test]
    fn mirror_from_horizon_examples() {
        let m = mirror_from_horizon(100.0, (1.0, 2.0)).unwrap();
        assert_abs_diff_eq!(m.radius_px(), 141.4213562373095, epsilon = 1e-9);
        assert_eq!(m.center(), (1.0, 2.0));
        let m = mirror_from_horizon(1.0 / 2f64.sqrt(), (0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(m.radius_px(), 1.0, epsilon = 1e-15);
        let m = mirror_from_horizon(124.45, (176.0, 144.0)).unwrap();
        assert_abs_diff_eq!(m.radius_px(), 176.0, epsilon = 0.01);
        assert!(mirror_from_horizon(0.0, (0.0, 0.0)).is_err());
        assert!(mirror_from_horizon(-3.0, (0.0, 0.0)).is_err());
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let m = MirrorModel::new(150.0, (0.0, 0.0)).unwrap();
        for &s in &[1.0, 30.0, 60.0, 90.0, 110.0, 125.0] {
            let h: f64 = 1e-4;
            let fd = (warp_radius(s + h, &m).unwrap() - warp_radius(s - h, &m).unwrap()) / (2.0 * h);
            let an = warp_radius_derivative(s, &m).unwrap();
            assert!((fd - an).abs() < 1e-6 * an.abs(), "s={s} fd={fd} an={an}");
        }
    }

    #[test]
    fn overlaps_image() {
        let m = MirrorModel::new(50.0, (-40.0, 10.0)).unwrap();
        assert!(m.overlaps_image(100, 100));
        let m = MirrorModel::new(50.0, (-60.0, 10.0)).unwrap();
        assert!(!m.overlaps_image(100, 100));
    }

    #[test]
    fn works_in_single_precision() {
        let m = MirrorModel::<f32>::new(1.0, (0.0, 0.0)).unwrap();
        let s = unwarp_radius(1.0f32, &m).unwrap();
        assert!((s - 0.411438).abs() < 1e-6);
        assert!((warp_radius(s, &m).unwrap() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn config_validation() {
        assert!(WarpConfig::<f64>::default().validate().is_ok());
        let bad = WarpConfig { rho_max: 0.0, ..WarpConfig::<f64>::default() };
        assert!(bad.validate().is_err());
        let bad = WarpConfig { upsample: 0, ..WarpConfig::<f64>::default() };
        assert!(bad.validate().is_err());
        assert!(MirrorModel::new(0.0, (0.0, 0.0)).is_err());
        assert!(MirrorModel::new(f64::NAN, (0.0, 0.0)).is_err());
    }
}
