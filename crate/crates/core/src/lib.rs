//! Height-invariant warping of hemispherical sky images, Horn-Schunck flow
//! forecasting, image-forecast metrics, a synthetic cloud-layer renderer and
//! time-lapse windowing.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root pin the common concrete choices.

pub mod calib;
pub mod dataset;
pub mod error;
pub mod flow;
pub mod forecast;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod scalar;
pub mod synth;
pub mod warp;

pub use calib::{estimate_horizon_circle, Circle};
pub use error::{Error, Result};
pub use flow::{advect, estimate_flow, forecast_flow_baseline, FlowField, FlowParams};
pub use forecast::{forecast_frames, ForecastMethod, ForecastSpace};
pub use geometry::{
    fov_half_angle, gamma, mirror_from_horizon, pixel_to_ground, unwarp_radius, warp_radius, GroundPoint,
    Interpolation, MirrorModel, WarpConfig,
};
pub use image::{Plane, SkyImage};
pub use dataset::{
    load_sequence, make_windows, read_manifest, recursion_inputs, recursion_offsets, write_manifest, ForecastWindow,
    Frame, ImageSequence, ManifestRow, SequenceOptions,
};
pub use metrics::{combined_loss, psnr, LossTerms, LossWeights};
pub use scalar::Scalar;
pub use synth::{measure_flow_uniformity, render_frame, FlowSpace, SceneSpec, SynthScene};
pub use warp::{build_warp_maps, fov_mask, unwarp_image, warp_image, WarpDirection, WarpMaps, WarpedCanvas};

pub type MirrorModelF64 = MirrorModel<f64>;
pub type MirrorModelF32 = MirrorModel<f32>;
pub type WarpConfigF64 = WarpConfig<f64>;
pub type SkyImageF64 = SkyImage<f64>;
pub type SkyImageF32 = SkyImage<f32>;
pub type FlowFieldF64 = FlowField<f64>;
pub type FlowFieldF32 = FlowField<f32>;
pub type FlowParamsF64 = FlowParams<f64>;
