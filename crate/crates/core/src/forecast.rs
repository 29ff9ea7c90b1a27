//! Baseline forecasters that return frames in the original image space.

use crate::error::{Error, Result};
use crate::flow::{forecast_flow_baseline, FlowParams};
use crate::image::SkyImage;
use crate::scalar::Scalar;
use crate::warp::{unwarp_image, warp_image, WarpDirection, WarpMaps};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecastMethod {
    /// Repeat the last frame.
    Persistence,
    /// Constant-velocity Horn-Schunck extrapolation.
    Flow,
}

/// Where flow is estimated and extrapolated.
#[derive(Debug, Clone, Copy)]
pub enum ForecastSpace<'a> {
    Raw,
    Warped { to_warped: &'a WarpMaps, to_original: &'a WarpMaps },
}

/// Predict `I_{t+1} ..= I_{t+horizon}` from `previous = I_{t-1}` and
/// `current = I_t`.
///
/// Pixels the extrapolation cannot reach (content entering from outside the
/// field of view, warp sentinels) fall back to `current`, so every output
/// carries the mask of `current`.
pub fn forecast_frames<T: Scalar>(
    previous: &SkyImage<T>,
    current: &SkyImage<T>,
    horizon: usize,
    method: ForecastMethod,
    space: ForecastSpace<'_>,
    params: &FlowParams<T>,
) -> Result<Vec<SkyImage<T>>> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("forecast horizon must be at least 1".into()));
    }
    let mut preds = match (method, space) {
        (ForecastMethod::Persistence, _) => vec![current.clone(); horizon],
        (ForecastMethod::Flow, ForecastSpace::Raw) => forecast_flow_baseline(previous, current, horizon, params)?,
        (ForecastMethod::Flow, ForecastSpace::Warped { to_warped, to_original }) => {
            if to_warped.direction != WarpDirection::ToWarped || to_original.direction != WarpDirection::ToOriginal {
                return Err(Error::InvalidParameter("warp tables passed in the wrong order".into()));
            }
            let wp = warp_image(previous, to_warped)?;
            let wc = warp_image(current, to_warped)?;
            forecast_flow_baseline(&wp, &wc, horizon, params)?
                .iter()
                .map(|p| unwarp_image(p, to_original))
                .collect::<Result<Vec<_>>>()?
        }
    };
    for p in &mut preds {
        p.fill_invalid_from(current)?;
        if let Some(mask) = current.valid_mask() {
            *p = p.clone().with_mask(mask.to_vec())?;
        }
        *p = p.clone().with_timestamp(None);
    }
    Ok(preds)
}
