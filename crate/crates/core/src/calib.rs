//! Locating the bright mirror disk in a raw frame.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::image::{Plane, SkyImage};
use crate::scalar::Scalar;

/// Circle fitted to the outer boundary of the mirror disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: (f64, f64),
    pub radius: f64,
}

/// Otsu threshold on a 256-bin histogram of values in `[0, 1]`.
fn otsu_threshold(values: &[f64]) -> Option<f64> {
    let mut hist = [0usize; 256];
    for v in values {
        hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &n)| i as f64 * n as f64).sum();
    let (mut w_bg, mut sum_bg) = (0.0, 0.0);
    let mut best: Option<(f64, usize)> = None;
    for (t, &n) in hist.iter().enumerate() {
        w_bg += n as f64;
        sum_bg += t as f64 * n as f64;
        let w_fg = total - w_bg;
        if w_bg == 0.0 || w_fg == 0.0 {
            continue;
        }
        let mean_bg = sum_bg / w_bg;
        let mean_fg = (sum_all - sum_bg) / w_fg;
        let between = w_bg * w_fg * (mean_bg - mean_fg).powi(2);
        if best.is_none_or(|(b, _)| between > b) {
            best = Some((between, t));
        }
    }
    best.map(|(_, t)| (t as f64 + 0.5) / 255.0)
}

/// Largest 4-connected component of `fg`.
fn largest_component(fg: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut label = vec![0u32; w * h];
    let mut best = (0u32, 0usize);
    let mut next = 1u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !fg[start] || label[start] != 0 {
            continue;
        }
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if fg[j] && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if size > best.1 {
            best = (next, size);
        }
        next += 1;
    }
    label.iter().map(|&l| l != 0 && l == best.0).collect()
}

/// Sub-pixel points on the outer boundary of a blob: the half-pixel edge
/// beyond the first and last member of every row and column. Extremes touching
/// the image border are not observed and are skipped.
fn outer_boundary(blob: &[bool], w: usize, h: usize) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    for y in 0..h {
        let row = &blob[y * w..(y + 1) * w];
        if let (Some(first), Some(last)) = (row.iter().position(|v| *v), row.iter().rposition(|v| *v)) {
            if first > 0 {
                pts.push((first as f64 - 0.5, y as f64));
            }
            if last + 1 < w {
                pts.push((last as f64 + 0.5, y as f64));
            }
        }
    }
    for x in 0..w {
        let first = (0..h).find(|&y| blob[y * w + x]);
        let last = (0..h).rev().find(|&y| blob[y * w + x]);
        if let (Some(first), Some(last)) = (first, last) {
            if first > 0 {
                pts.push((x as f64, first as f64 - 0.5));
            }
            if last + 1 < h {
                pts.push((x as f64, last as f64 + 0.5));
            }
        }
    }
    pts
}

/// Algebraic least-squares circle, refined by Gauss-Newton on geometric distance.
pub fn fit_circle(points: &[(f64, f64)]) -> Option<Circle> {
    if points.len() < 3 {
        return None;
    }
    // x^2 + y^2 + D x + E y + F = 0
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for &(x, y) in points {
        let row = Vector3::new(x, y, 1.0);
        ata += row * row.transpose();
        atb += row * -(x * x + y * y);
    }
    let sol = ata.lu().solve(&atb)?;
    let (cx, cy) = (-sol[0] / 2.0, -sol[1] / 2.0);
    let r2 = cx * cx + cy * cy - sol[2];
    if !(r2 > 0.0) {
        return None;
    }
    let mut params = Vector3::new(cx, cy, r2.sqrt());
    for _ in 0..20 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for &(x, y) in points {
            let (dx, dy) = (x - params[0], y - params[1]);
            let d = dx.hypot(dy);
            if d == 0.0 {
                continue;
            }
            let j = Vector3::new(-dx / d, -dy / d, -1.0);
            let res = d - params[2];
            jtj += j * j.transpose();
            jtr += j * res;
        }
        let Some(step) = jtj.lu().solve(&-jtr) else { break };
        params += step;
        if step.norm() < 1e-10 {
            break;
        }
    }
    Some(Circle { center: (params[0], params[1]), radius: params[2] })
}

/// Find the bright circular mirror footprint: Otsu threshold on luma, keep the
/// largest connected blob, fit a circle to its outer boundary.
pub fn estimate_horizon_circle<T: Scalar>(img: &SkyImage<T>) -> Result<Circle> {
    let (w, h) = img.dims();
    let luma: Plane<T> = img.luma();
    let values: Vec<f64> = luma.data().iter().map(|v| v.to_f64_lossy()).collect();
    let fail = |why: &str| Error::Calibration(why.to_owned());
    let threshold = otsu_threshold(&values).ok_or_else(|| fail("image has no contrast"))?;
    let fg: Vec<bool> = values.iter().map(|&v| v > threshold).collect();
    let blob = largest_component(&fg, w, h);
    let points = outer_boundary(&blob, w, h);
    let circle = fit_circle(&points).ok_or_else(|| fail("no circular boundary found"))?;
    let min_radius = 0.1 * w.min(h) as f64;
    if !(circle.radius >= min_radius) || !circle.center.0.is_finite() || !circle.center.1.is_finite() {
        return Err(fail(&format!(
            "fitted radius {:.1} px below the minimum {:.1} px",
            circle.radius, min_radius
        )));
    }
    Ok(circle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(w: usize, h: usize, c: (f64, f64), r: f64) -> SkyImage<f64> {
        SkyImage::from_fn(w, h, |x, y| {
            if (x as f64 - c.0).hypot(y as f64 - c.1) <= r {
                [0.9, 0.9, 1.0]
            } else {
                [0.02, 0.02, 0.02]
            }
        })
    }

    #[test]
    fn recovers_synthetic_disk() {
        let c = estimate_horizon_circle(&disk(352, 288, (176.0, 144.0), 120.0)).unwrap();
        assert!((c.center.0 - 176.0).abs() < 0.5, "{c:?}");
        assert!((c.center.1 - 144.0).abs() < 0.5, "{c:?}");
        assert!((c.radius - 120.0).abs() < 0.5, "{c:?}");
    }

    #[test]
    fn recovers_off_center_subpixel_disk() {
        let c = estimate_horizon_circle(&disk(300, 260, (141.3, 127.8), 97.6)).unwrap();
        assert!((c.center.0 - 141.3).abs() < 0.5 && (c.center.1 - 127.8).abs() < 0.5, "{c:?}");
        assert!((c.radius - 97.6).abs() < 0.5, "{c:?}");
    }

    #[test]
    fn disk_touching_border_uses_visible_arc() {
        let c = estimate_horizon_circle(&disk(352, 288, (176.0, 150.0), 160.0)).unwrap();
        assert!((c.radius - 160.0).abs() < 2.0, "{c:?}");
        assert!((c.center.1 - 150.0).abs() < 2.0, "{c:?}");
    }

    #[test]
    fn all_black_fails() {
        let img = SkyImage::<f64>::filled(64, 64, [0.0; 3]);
        assert!(matches!(estimate_horizon_circle(&img), Err(Error::Calibration(_))));
    }

    #[test]
    fn tiny_blob_fails() {
        let img = disk(200, 200, (100.0, 100.0), 5.0);
        assert!(matches!(estimate_horizon_circle(&img), Err(Error::Calibration(_))));
    }

    #[test]
    fn dark_clouds_inside_disk_do_not_matter() {
        let mut img = disk(352, 288, (176.0, 144.0), 120.0);
        for y in 120..170 {
            for x in 150..200 {
                img.set_pixel(x, y, [0.0; 3]);
            }
        }
        let c = estimate_horizon_circle(&img).unwrap();
        assert!((c.radius - 120.0).abs() < 0.5, "{c:?}");
    }
}
