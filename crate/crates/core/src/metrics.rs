//! PSNR and the intensity, gradient and motion losses used to score and train
//! sky-image forecasts.
//!
//! Every loss is a mean over the samples where both images are valid, so
//! values do not depend on resolution.

use std::io::{Read, Write};

use crate::error::{check_dims, Error, Result};
use crate::flow::{estimate_flow, FlowParams};
use crate::image::SkyImage;
use crate::scalar::Scalar;

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub lambda_int: T,
    pub lambda_gd: T,
    pub lambda_op: T,
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> Self {
        Self { lambda_int: T::lit(0.5), lambda_gd: T::lit(0.001), lambda_op: T::lit(0.01) }
    }
}

impl<T: Scalar> LossWeights<T> {
    pub fn zero() -> Self {
        Self { lambda_int: T::zero(), lambda_gd: T::zero(), lambda_op: T::zero() }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.lambda_int, self.lambda_gd, self.lambda_op].iter().any(|l| !(*l >= T::zero())) {
            return Err(Error::InvalidParameter(format!("loss weights must be nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// Individual loss values for one prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms<T> {
    pub l_int: T,
    pub l_gd: T,
    pub l_op: T,
}

impl<T: Scalar> LossTerms<T> {
    pub fn combine(&self, w: &LossWeights<T>) -> T {
        w.lambda_int * self.l_int + w.lambda_gd * self.l_gd + w.lambda_op * self.l_op
    }
}

fn joint_mask<T: Scalar>(a: &SkyImage<T>, b: &SkyImage<T>, extra: Option<&[bool]>) -> Result<Vec<bool>> {
    check_dims(a.dims(), b.dims())?;
    let mut mask = SkyImage::joint_mask(&[a, b])?;
    if let Some(extra) = extra {
        if extra.len() != mask.len() {
            return Err(Error::Format { kind: "mask", reason: "mask size does not match images".into() });
        }
        mask.iter_mut().zip(extra).for_each(|(m, e)| *m &= *e);
    }
    Ok(mask)
}

fn mean_squared_error<T: Scalar>(a: &SkyImage<T>, b: &SkyImage<T>, mask: &[bool]) -> Result<T> {
    let mut sum = T::zero();
    let mut n = 0usize;
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for c in 0..3 {
            let d = a.pixels()[3 * i + c] - b.pixels()[3 * i + c];
            sum = sum + d * d;
        }
        n += 3;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / T::from_usize_lossy(n))
}

/// Peak signal-to-noise ratio in dB with unit peak. Identical images give
/// `+inf`.
pub fn psnr<T: Scalar>(a: &SkyImage<T>, b: &SkyImage<T>, mask: Option<&[bool]>) -> Result<T> {
    let mask = joint_mask(a, b, mask)?;
    let mse = mean_squared_error(a, b, &mask)?;
    if mse == T::zero() {
        return Ok(T::infinity());
    }
    Ok(-T::lit(10.0) * mse.log10())
}

/// Mean squared intensity difference.
pub fn intensity_loss<T: Scalar>(pred: &SkyImage<T>, truth: &SkyImage<T>) -> Result<T> {
    let mask = joint_mask(pred, truth, None)?;
    mean_squared_error(pred, truth, &mask)
}

/// Mean absolute difference between the absolute forward differences of the
/// two images, over both axes and all channels.
pub fn gradient_loss<T: Scalar>(pred: &SkyImage<T>, truth: &SkyImage<T>) -> Result<T> {
    let mask = joint_mask(pred, truth, None)?;
    let (w, h) = pred.dims();
    let (p, t) = (pred.pixels(), truth.pixels());
    let mut sum = T::zero();
    let mut n = 0usize;
    let mut term = |i: usize, j: usize| {
        if mask[i] && mask[j] {
            for c in 0..3 {
                let dp = (p[3 * i + c] - p[3 * j + c]).abs();
                let dt = (t[3 * i + c] - t[3 * j + c]).abs();
                sum = sum + (dp - dt).abs();
            }
            n += 3;
        }
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x > 0 {
                term(i, i - 1);
            }
            if y > 0 {
                term(i, i - w);
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / T::from_usize_lossy(n))
}

/// Mean per-pixel L1 distance between the flow from the predicted next frame
/// to the current frame and the flow from the true next frame to the current
/// frame.
pub fn motion_loss<T: Scalar>(
    pred_next: &SkyImage<T>,
    truth_next: &SkyImage<T>,
    current: &SkyImage<T>,
    flow_params: &FlowParams<T>,
) -> Result<T> {
    check_dims(pred_next.dims(), truth_next.dims())?;
    check_dims(pred_next.dims(), current.dims())?;
    let mask = SkyImage::joint_mask(&[pred_next, truth_next, current])?;
    let f_pred = estimate_flow(pred_next, current, flow_params)?;
    let f_truth = estimate_flow(truth_next, current, flow_params)?;
    let mut sum = T::zero();
    let mut n = 0usize;
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        sum = sum + (f_pred.u()[i] - f_truth.u()[i]).abs() + (f_pred.v()[i] - f_truth.v()[i]).abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / T::from_usize_lossy(n))
}

pub fn loss_terms<T: Scalar>(
    pred: &SkyImage<T>,
    truth: &SkyImage<T>,
    current: &SkyImage<T>,
    flow_params: &FlowParams<T>,
) -> Result<LossTerms<T>> {
    Ok(LossTerms {
        l_int: intensity_loss(pred, truth)?,
        l_gd: gradient_loss(pred, truth)?,
        l_op: motion_loss(pred, truth, current, flow_params)?,
    })
}

/// Weighted sum of the three losses.
pub fn combined_loss<T: Scalar>(
    pred: &SkyImage<T>,
    truth: &SkyImage<T>,
    current: &SkyImage<T>,
    weights: &LossWeights<T>,
    flow_params: &FlowParams<T>,
) -> Result<T> {
    weights.validate()?;
    Ok(loss_terms(pred, truth, current, flow_params)?.combine(weights))
}

/// Format a value with 10 significant digits; infinities print as `inf`.
pub fn format_sig10(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.9e}")
    }
}

pub fn parse_value(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        other => other
            .parse()
            .map_err(|_| Error::Format { kind: "csv", reason: format!("not a number: {other:?}") }),
    }
}

/// One evaluation row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub horizon: usize,
    pub psnr_db: f64,
    pub l_int: f64,
    pub l_gd: f64,
    pub l_op: f64,
    pub l_total: f64,
    pub n_valid_pixels: usize,
}

pub const METRIC_REPORT_HEADER: [&str; 7] = ["horizon", "psnr_db", "l_int", "l_gd", "l_op", "l_total", "n_valid_pixels"];

impl MetricReport {
    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            self.horizon.to_string(),
            format_sig10(self.psnr_db),
            format_sig10(self.l_int),
            format_sig10(self.l_gd),
            format_sig10(self.l_op),
            format_sig10(self.l_total),
            self.n_valid_pixels.to_string(),
        ]
    }
}

pub fn write_metric_reports(w: impl Write, rows: &[MetricReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRIC_REPORT_HEADER).map_err(csv_err)?;
    for row in rows {
        out.write_record(row.csv_fields()).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Loss values of one fixture image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LossFixtureRow {
    pub pair_id: String,
    pub l_int: f64,
    pub l_gd: f64,
    pub l_op: f64,
    pub l_total: f64,
}

pub const LOSS_FIXTURE_HEADER: [&str; 5] = ["pair_id", "l_int", "l_gd", "l_op", "l_total"];

pub fn write_loss_fixtures(w: impl Write, rows: &[LossFixtureRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(LOSS_FIXTURE_HEADER).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.pair_id.clone(),
            format_sig10(r.l_int),
            format_sig10(r.l_gd),
            format_sig10(r.l_op),
            format_sig10(r.l_total),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_loss_fixtures(r: impl Read) -> Result<Vec<LossFixtureRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(LOSS_FIXTURE_HEADER) {
        return Err(Error::Format { kind: "loss fixture", reason: format!("unexpected header {header:?}") });
    }
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(LossFixtureRow {
                pair_id: rec[0].to_owned(),
                l_int: parse_value(&rec[1])?,
                l_gd: parse_value(&rec[2])?,
                l_op: parse_value(&rec[3])?,
                l_total: parse_value(&rec[4])?,
            })
        })
        .collect()
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format { kind: "csv", reason: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64) -> SkyImage<f64> {
        SkyImage::filled(4, 3, [v; 3])
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&constant(0.2), &constant(0.2), None).unwrap(), f64::INFINITY);
        assert!((psnr(&constant(0.0), &constant(0.1), None).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&constant(0.0), &constant(1.0), None).unwrap(), 0.0);
        let masked = constant(0.0).with_mask(vec![false; 12]).unwrap();
        assert!(matches!(psnr(&masked, &constant(0.5), None), Err(Error::EmptyMask)));
        assert!(psnr(&constant(0.0), &SkyImage::filled(3, 3, [0.0; 3]), None).is_err());
    }

    #[test]
    fn psnr_honors_masks() {
        let mut a = constant(0.0);
        a.set_pixel(0, 0, [1.0; 3]);
        let mut mask = vec![true; 12];
        mask[0] = false;
        assert_eq!(psnr(&a, &constant(0.0), Some(&mask)).unwrap(), f64::INFINITY);
        let a = a.with_mask(mask).unwrap();
        assert_eq!(psnr(&a, &constant(0.0), None).unwrap(), f64::INFINITY);
    }

    #[test]
    fn intensity_loss_examples() {
        assert_eq!(intensity_loss(&constant(0.3), &constant(0.3)).unwrap(), 0.0);
        assert_eq!(intensity_loss(&constant(0.0), &constant(0.5)).unwrap(), 0.25);
        let a = SkyImage::new(2, 1, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let b = SkyImage::filled(2, 1, [1.0; 3]);
        assert_eq!(intensity_loss(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn gradient_loss_examples() {
        assert_eq!(gradient_loss(&constant(0.3), &constant(0.7)).unwrap(), 0.0);
        // 2x1: |1 - 0| vs |1 - 1|
        let a = SkyImage::new(2, 1, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let b = SkyImage::filled(2, 1, [1.0; 3]);
        assert_eq!(gradient_loss(&a, &b).unwrap(), 1.0);
        assert!(matches!(gradient_loss(&SkyImage::<f64>::filled(1, 1, [0.0; 3]), &SkyImage::filled(1, 1, [0.0; 3])), Err(Error::EmptyMask)));
    }

    #[test]
    fn gradient_loss_mask_excludes_pairs() {
        let a = SkyImage::new(3, 1, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = SkyImage::filled(3, 1, [0.0; 3]).with_mask(vec![true, true, false]).unwrap();
        // only the (0, 1) pair survives
        assert_eq!(gradient_loss(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn combined_loss_arithmetic() {
        let terms = LossTerms { l_int: 0.25, l_gd: 0.0, l_op: 0.0 };
        assert_eq!(terms.combine(&LossWeights::default()), 0.125);
        let terms = LossTerms { l_int: 1.0, l_gd: 2.0, l_op: 3.0 };
        assert_eq!(terms.combine(&LossWeights::zero()), 0.0);
        let total: f64 = terms.combine(&LossWeights::default());
        assert!((total - (0.5 + 0.002 + 0.03)).abs() < 1e-15);
        let bad = LossWeights { lambda_int: -1.0, ..LossWeights::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sig10_formatting() {
        assert_eq!(format_sig10(0.25), "2.500000000e-1");
        assert_eq!(format_sig10(f64::INFINITY), "inf");
        assert_eq!(format_sig10(f64::NAN), "nan");
        assert_eq!(parse_value("inf").unwrap(), f64::INFINITY);
        let v = 1.0 / 3.0;
        let back = parse_value(&format_sig10(v)).unwrap();
        assert!((back - v).abs() < 5e-10 * v);
    }

    #[test]
    fn fixture_csv_round_trip() {
        let rows = vec![
            LossFixtureRow { pair_id: "a".into(), l_int: 0.25, l_gd: 0.0, l_op: 1.5, l_total: 0.14 },
            LossFixtureRow { pair_id: "b,c".into(), l_int: 1e-7, l_gd: 3.0, l_op: 0.0, l_total: 0.003 },
        ];
        let mut buf = Vec::new();
        write_loss_fixtures(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("pair_id,l_int,l_gd,l_op,l_total\n"));
        assert_eq!(read_loss_fixtures(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn report_csv_prints_inf() {
        let row = MetricReport { horizon: 1, psnr_db: f64::INFINITY, l_int: 0.0, l_gd: 0.0, l_op: 0.0, l_total: 0.0, n_valid_pixels: 10 };
        let mut buf = Vec::new();
        write_metric_reports(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "horizon,psnr_db,l_int,l_gd,l_op,l_total,n_valid_pixels");
        assert!(text.lines().nth(1).unwrap().starts_with("1,inf,"));
    }
}
