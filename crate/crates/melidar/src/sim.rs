//! End-to-end multi-echo simulation: resample inputs onto the detector grid,
//! compute photon rates, extract echoes and assemble the outputs.
//!
//! Two histogram strategies produce byte-identical frames for the same seed:
//!
//! * the fast path never materializes the `[H, W, N]` photon tensor. Signal
//!   photons occupy one bin per pixel, so after spatial aggregation only the
//!   signal bins of a pixel's neighborhood can cross the detection threshold;
//!   ambient draws are generated on demand at exactly those bins. The
//!   threshold is chosen so that an ambient-only bin crosses it with
//!   probability below 1e-9 per pixel.
//! * the dense path materializes the full histogram (small bin counts only)
//!   and serves as the reference oracle.
//!
//! Both paths draw photons from the same counter-based streams, so a bin's
//! count does not depend on which path, evaluation order or thread count
//! produced it.

use crate::extract::{
    assemble_frame, ambient_tail_threshold, cloud_tensor, reflectance_tensor, select_topk,
    EchoCandidate, GaussianKernel,
};
use crate::model::{LidarImage, MultiEchoFrame, SimConfig};
use crate::photon::{ambient_rate, incidence_cosine, signal_rate, RateField, SimError};
use crate::polar::{depth_to_range, project_to_views, resample_views, SensorArray};
use crate::tensor::{write_tensor, Tensor};
use nalgebra::Isometry3;
use ndarray::{Array2, ArrayView2, ArrayView3, Axis};
use rayon::prelude::*;
use std::path::Path;

/// Largest bin count accepted by the dense reference path.
pub const DENSE_BIN_LIMIT: u32 = 256;

/// Per-pixel probability budget for an ambient-only bin crossing the
/// automatic threshold.
pub const AMBIENT_TAIL_EPS: f64 = 1e-9;

/// Source images of one camera view.
pub struct ViewInput<'a> {
    /// `[H, W, 3]` RGB image; only the R channel drives the simulation.
    pub rgb: ArrayView3<'a, f64>,
    /// `[H, W]` planar depth in meters; non-positive means no surface.
    pub depth: ArrayView2<'a, f64>,
    /// `[H, W, 3]` unit surface normals in the sensor frame.
    pub normals: ArrayView3<'a, f64>,
}

/// Everything the simulator produces for one sweep.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub frame: MultiEchoFrame,
    pub lidar_image: LidarImage,
    /// Resampled R-channel: the ambient image (channel 0 of the LiDAR image).
    pub ambient: Array2<f64>,
    /// Detection threshold actually used (configured or automatic).
    pub threshold: f64,
}

struct Prepared {
    array: SensorArray,
    rates: RateField,
    kernel: GaussianKernel,
    tau: f64,
    /// Smallest threshold the fast path can honor.
    ambient_bound: f64,
    ambient_image: Array2<f64>,
}

fn validate_inputs(cfg: &SimConfig, inputs: &[ViewInput]) -> Result<(), SimError> {
    if cfg.views.is_empty() || cfg.views.len() != inputs.len() {
        return Err(crate::model::ConfigError(format!(
            "{} views configured but {} inputs supplied",
            cfg.views.len(),
            inputs.len()
        ))
        .into());
    }
    for (i, (view, input)) in cfg.views.iter().zip(inputs).enumerate() {
        let (h, w) = (view.camera.height, view.camera.width);
        if input.rgb.shape() != [h, w, 3] {
            return Err(crate::model::ConfigError(format!(
                "view {i}: rgb shape {:?} does not match the {h} x {w} camera",
                input.rgb.shape()
            ))
            .into());
        }
        if input.depth.dim() != (h, w) {
            return Err(crate::model::ConfigError(format!(
                "view {i}: depth shape {:?} does not match the {h} x {w} camera",
                input.depth.shape()
            ))
            .into());
        }
        if input.normals.shape() != [h, w, 3] {
            return Err(crate::model::ConfigError(format!(
                "view {i}: normals shape {:?} does not match the {h} x {w} camera",
                input.normals.shape()
            ))
            .into());
        }
        // NaN or negative radiance would poison the Poisson rates downstream
        if input.rgb.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(crate::model::ConfigError(format!(
                "view {i}: rgb contains negative or non-finite values"
            ))
            .into());
        }
        if input.normals.iter().any(|v| !v.is_finite()) {
            return Err(crate::model::ConfigError(format!(
                "view {i}: normals contain non-finite values"
            ))
            .into());
        }
    }
    Ok(())
}

fn prepare(cfg: &SimConfig, inputs: &[ViewInput]) -> Result<Prepared, SimError> {
    cfg.validate()?;
    validate_inputs(cfg, inputs)?;
    let (arrays, cams) = crate::polar::setup_views(&cfg.views)?;
    let array = SensorArray::concat(&arrays)?;
    let map = project_to_views(&array, &cams);

    let rgbs: Vec<ArrayView3<f64>> = inputs.iter().map(|v| v.rgb).collect();
    let depths: Vec<ArrayView2<f64>> = inputs.iter().map(|v| v.depth).collect();
    let normals: Vec<ArrayView3<f64>> = inputs.iter().map(|v| v.normals).collect();

    let rgb = resample_views(&rgbs, &map);
    let depth = crate::polar::resample_depth(&depths, &map);
    let normal = resample_views(&normals, &map);

    let r_chan = rgb.index_axis(Axis(2), 0).to_owned();
    let cos = incidence_cosine(&normal, |r, c| array.direction(r, c));
    let (range, range_valid) = depth_to_range(&depth, &map, &cams);

    let (lambda_s, signal_bin) = signal_rate(
        &r_chan,
        &cos,
        &range,
        &range_valid,
        &map.valid,
        cfg.sbr,
        cfg.bins,
        cfg.bin_width(),
    )?;
    let lambda_a = ambient_rate(&r_chan, &map.valid);
    let lambda_a_max = lambda_a.iter().copied().fold(0.0, f64::max);
    let rates = RateField::new(lambda_s, signal_bin, lambda_a, cfg.bins);
    rates.check_rates()?;

    let kernel = GaussianKernel::new(cfg.kernel_size, cfg.kernel_sigma)?;
    let ambient_bound =
        ambient_tail_threshold(&kernel, lambda_a_max, cfg.bins, AMBIENT_TAIL_EPS);
    let tau = cfg.threshold.unwrap_or(ambient_bound);
    Ok(Prepared {
        array,
        rates,
        kernel,
        tau,
        ambient_bound,
        ambient_image: r_chan,
    })
}

/// Photon-rate summary of a prepared scene, for tuning SBR and thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSummary {
    pub max_signal: f64,
    pub max_ambient: f64,
    /// Largest per-bin Poisson rate; must stay at or below
    /// [`crate::photon::MAX_RATE`].
    pub max_total: f64,
    /// Threshold the simulation would use.
    pub threshold: f64,
}

/// Compute the rate summary without running the echo extraction.
pub fn rate_summary(cfg: &SimConfig, inputs: &[ViewInput]) -> Result<RateSummary, SimError> {
    let prep = prepare(cfg, inputs)?;
    Ok(RateSummary {
        max_signal: prep.rates.signal_rate.iter().copied().fold(0.0, f64::max),
        max_ambient: prep.rates.ambient_rate.iter().copied().fold(0.0, f64::max),
        max_total: prep.rates.max_rate(),
        threshold: prep.tau,
    })
}

/// Aggregated photon count at `(row, col, bin)`, sampling neighbors on
/// demand. Iteration order is fixed so both paths accumulate identically.
#[inline]
fn aggregate_sampled(
    rates: &RateField,
    kernel: &GaussianKernel,
    seed: u64,
    r: usize,
    c: usize,
    bin: u32,
) -> f64 {
    let half = kernel.half();
    let (h, w) = (rates.height() as isize, rates.width() as isize);
    let mut acc = 0.0;
    for kh in -half..=half {
        for kw in -half..=half {
            let (nr, nc) = (r as isize + kh, c as isize + kw);
            if nr < 0 || nc < 0 || nr >= h || nc >= w {
                continue;
            }
            acc += kernel.weight(kh, kw)
                * rates.sample_bin(seed, 0, nr as usize, nc as usize, bin) as f64;
        }
    }
    acc
}

fn fast_select(prep: &Prepared, cfg: &SimConfig) -> Vec<Vec<EchoCandidate>> {
    let (height, width) = (prep.array.rows(), prep.array.cols());
    let half = prep.kernel.half();
    let rows: Vec<Vec<Vec<EchoCandidate>>> = (0..height)
        .into_par_iter()
        .map(|r| {
            let mut row_out = Vec::with_capacity(width);
            let mut bins: Vec<u32> = Vec::new();
            let mut strengths: Vec<(u32, f64)> = Vec::new();
            for c in 0..width {
                bins.clear();
                strengths.clear();
                for kh in -half..=half {
                    for kw in -half..=half {
                        let (nr, nc) = (r as isize + kh, c as isize + kw);
                        if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
                            continue;
                        }
                        let b = prep.rates.signal_bin[[nr as usize, nc as usize]];
                        if b != RateField::NO_SIGNAL {
                            bins.push(b);
                        }
                    }
                }
                bins.sort_unstable();
                bins.dedup();
                for &bin in &bins {
                    let strength =
                        aggregate_sampled(&prep.rates, &prep.kernel, cfg.seed, r, c, bin);
                    strengths.push((bin, strength));
                }
                row_out.push(select_topk(
                    &strengths,
                    cfg.max_echoes,
                    prep.tau,
                    cfg.nms_window,
                    (r, c),
                ));
            }
            row_out
        })
        .collect();
    rows.into_iter().flatten().collect()
}

fn dense_select(prep: &Prepared, cfg: &SimConfig) -> Result<Vec<Vec<EchoCandidate>>, SimError> {
    if cfg.bins > DENSE_BIN_LIMIT {
        return Err(SimError::DenseBins {
            bins: cfg.bins,
            limit: DENSE_BIN_LIMIT,
        });
    }
    let (height, width) = (prep.array.rows(), prep.array.cols());
    let bins = cfg.bins as usize;
    // the full photon histogram, the thing the fast path avoids
    let mut counts = ndarray::Array3::<f64>::zeros((height, width, bins));
    for r in 0..height {
        for c in 0..width {
            for n in 0..bins {
                counts[[r, c, n]] = prep.rates.sample_bin(cfg.seed, 0, r, c, n as u32) as f64;
            }
        }
    }
    let half = prep.kernel.half();
    let mut out = Vec::with_capacity(height * width);
    let mut strengths: Vec<(u32, f64)> = Vec::with_capacity(bins);
    for r in 0..height {
        for c in 0..width {
            strengths.clear();
            for n in 0..bins {
                let mut acc = 0.0;
                for kh in -half..=half {
                    for kw in -half..=half {
                        let (nr, nc) = (r as isize + kh, c as isize + kw);
                        if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
                            continue;
                        }
                        acc += prep.kernel.weight(kh, kw) * counts[[nr as usize, nc as usize, n]];
                    }
                }
                strengths.push((n as u32, acc));
            }
            out.push(select_topk(
                &strengths,
                cfg.max_echoes,
                prep.tau,
                cfg.nms_window,
                (r, c),
            ));
        }
    }
    Ok(out)
}

fn finish(prep: Prepared, cfg: &SimConfig, selected: Vec<Vec<EchoCandidate>>) -> SimOutput {
    let assembled = assemble_frame(
        &selected,
        &prep.ambient_image,
        &prep.array,
        cfg.bin_width(),
        cfg.max_echoes,
        Isometry3::identity(),
    );
    SimOutput {
        frame: assembled.frame,
        lidar_image: assembled.lidar_image,
        ambient: prep.ambient_image,
        threshold: prep.tau,
    }
}

/// Simulate a sweep with the sparse fast path.
///
/// The fast path only examines bins that carry signal somewhere in the
/// aggregation neighborhood, so it requires a threshold at or above the
/// ambient tail bound; lower configured thresholds are rejected (use
/// [`simulate_dense`] for those).
pub fn simulate(cfg: &SimConfig, inputs: &[ViewInput]) -> Result<SimOutput, SimError> {
    let prep = prepare(cfg, inputs)?;
    if prep.tau < prep.ambient_bound {
        return Err(crate::model::ConfigError(format!(
            "threshold {:.3} is below the ambient tail bound {:.3}; the fast path \
             cannot guarantee ambient-only bins stay below it",
            prep.tau, prep.ambient_bound
        ))
        .into());
    }
    let selected = fast_select(&prep, cfg);
    Ok(finish(prep, cfg, selected))
}

/// Simulate a sweep with the dense reference path (testing oracle; bin count
/// limited to [`DENSE_BIN_LIMIT`]).
pub fn simulate_dense(cfg: &SimConfig, inputs: &[ViewInput]) -> Result<SimOutput, SimError> {
    let prep = prepare(cfg, inputs)?;
    let selected = dense_select(&prep, cfg)?;
    Ok(finish(prep, cfg, selected))
}

fn to_f32(a: ndarray::ArrayD<f64>) -> Tensor {
    Tensor::F32(a.mapv(|v| v as f32))
}

/// Serialize the three simulator outputs into `dir`:
/// `ambient.melt [H, W]`, `reflectance.melt [H, W, K]` and
/// `cloud.melt [H, W, K, 5]`.
pub fn write_outputs(out: &SimOutput, dir: impl AsRef<Path>) -> Result<(), crate::tensor::TensorError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let frame = &out.frame;
    write_tensor(
        dir.join("ambient.melt"),
        &to_f32(out.ambient.clone().into_dyn()),
        &serde_json::json!({"kind": "ambient"}),
    )?;
    write_tensor(
        dir.join("reflectance.melt"),
        &to_f32(reflectance_tensor(frame).into_dyn()),
        &serde_json::json!({"kind": "reflectance", "max_echoes": frame.max_echoes}),
    )?;
    write_tensor(
        dir.join("cloud.melt"),
        &to_f32(cloud_tensor(frame).into_dyn()),
        &serde_json::json!({
            "kind": "cloud",
            "columns": ["x", "y", "z", "reflectance", "valid"],
            "bin_width": frame.bin_width,
        }),
    )?;
    Ok(())
}
