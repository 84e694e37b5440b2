//! Per-pixel photon transport: signal and ambient Poisson rates plus a
//! counter-based keyed sampler.
//!
//! Every photon count is a pure function of `(seed, view, row, col, bin)`, so
//! parallel and serial evaluation produce bit-identical results and a bin can
//! be re-sampled at any time without storing the full histogram.

use crate::model::ConfigError;
use ndarray::{Array2, Array3};
use thiserror::Error;

/// Upper limit on the Poisson rate accepted by the inversion sampler.
/// Normalized rates beyond this indicate a misconfigured scene.
pub const MAX_RATE: f64 = 30.0;

/// Hard cap on the sampled photon count; the probability of reaching it at
/// `MAX_RATE` is far below 1e-80.
const COUNT_CAP: u32 = 256;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("empty scene: no valid pixels in the resampled input")]
    EmptyScene,
    #[error("photon rate {rate:.3} at pixel ({row}, {col}) exceeds the sampler limit {limit}; lower the SBR or brighten the scene's dim regions")]
    RateLimit {
        rate: f64,
        row: usize,
        col: usize,
        limit: f64,
    },
    #[error("dense reference path supports at most {limit} bins, got {bins}")]
    DenseBins { bins: u32, limit: u32 },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Identifies one detector's photon stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelKey {
    pub seed: u64,
    pub view: u32,
    pub row: u32,
    pub col: u32,
}

impl PixelKey {
    pub fn new(seed: u64, view: u32, row: usize, col: usize) -> Self {
        PixelKey {
            seed,
            view,
            row: row as u32,
            col: col as u32,
        }
    }
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One 64-bit word of the keyed stream at position `counter`.
#[inline]
pub fn stream_u64(key: PixelKey, counter: u64) -> u64 {
    let packed =
        ((key.view as u64) << 48) ^ ((key.row as u64) << 24) ^ (key.col as u64);
    let mut h = splitmix(key.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    h = splitmix(h ^ packed);
    splitmix(h ^ counter.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Uniform draw in `[0, 1)` for `(key, counter)`.
#[inline]
pub fn stream_uniform(key: PixelKey, counter: u64) -> f64 {
    (stream_u64(key, counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Poisson sample by exact CDF inversion. `exp_neg_lambda` must equal
/// `exp(-lambda)`; callers on the hot path precompute it per pixel.
#[inline]
pub fn poisson_inverse(u: f64, lambda: f64, exp_neg_lambda: f64) -> u32 {
    debug_assert!(lambda <= MAX_RATE + 1e-9, "rate {lambda} beyond sampler limit");
    let mut k = 0u32;
    let mut pmf = exp_neg_lambda;
    let mut cdf = pmf;
    while u >= cdf && k < COUNT_CAP {
        k += 1;
        pmf *= lambda / k as f64;
        cdf += pmf;
    }
    k
}

/// Signal/ambient photon rates of a detector grid.
///
/// `signal_bin` stores the time bin hit by each beam's return, or
/// [`RateField::NO_SIGNAL`] for beams without a surface. Ambient rates apply
/// uniformly to every bin of a pixel.
#[derive(Debug, Clone)]
pub struct RateField {
    pub signal_rate: Array2<f64>,
    pub signal_bin: Array2<u32>,
    pub ambient_rate: Array2<f64>,
    pub bins: u32,
    exp_neg_ambient: Array2<f64>,
    exp_neg_total: Array2<f64>,
}

impl RateField {
    pub const NO_SIGNAL: u32 = u32::MAX;

    pub fn new(
        signal_rate: Array2<f64>,
        signal_bin: Array2<u32>,
        ambient_rate: Array2<f64>,
        bins: u32,
    ) -> Self {
        let exp_neg_ambient = ambient_rate.mapv(|l| (-l).exp());
        let exp_neg_total =
            Array2::from_shape_fn(signal_rate.dim(), |(r, c)| {
                (-(signal_rate[[r, c]] + ambient_rate[[r, c]])).exp()
            });
        RateField {
            signal_rate,
            signal_bin,
            ambient_rate,
            bins,
            exp_neg_ambient,
            exp_neg_total,
        }
    }

    pub fn height(&self) -> usize {
        self.signal_rate.nrows()
    }

    pub fn width(&self) -> usize {
        self.signal_rate.ncols()
    }

    /// Poisson rate of pixel (row, col) at time bin `bin`.
    pub fn rate_at(&self, row: usize, col: usize, bin: u32) -> f64 {
        let ambient = self.ambient_rate[[row, col]];
        if self.signal_bin[[row, col]] == bin {
            ambient + self.signal_rate[[row, col]]
        } else {
            ambient
        }
    }

    /// Largest total rate over all pixels and bins.
    pub fn max_rate(&self) -> f64 {
        self.signal_rate
            .indexed_iter()
            .map(|((r, c), &s)| s + self.ambient_rate[[r, c]])
            .fold(0.0, f64::max)
    }

    /// Reject rate fields the inversion sampler cannot handle.
    pub fn check_rates(&self) -> Result<(), SimError> {
        for ((r, c), &s) in self.signal_rate.indexed_iter() {
            let rate = s + self.ambient_rate[[r, c]];
            if rate > MAX_RATE {
                return Err(SimError::RateLimit {
                    rate,
                    row: r,
                    col: c,
                    limit: MAX_RATE,
                });
            }
        }
        Ok(())
    }

    /// Photon count measured by `(row, col)` at time bin `bin`: a draw from
    /// `Poisson(signal * [bin == signal_bin] + ambient)`, deterministic per
    /// `(key, bin)`.
    #[inline]
    pub fn sample_bin(&self, seed: u64, view: u32, row: usize, col: usize, bin: u32) -> u32 {
        let (lambda, exp_neg) = if self.signal_bin[[row, col]] == bin {
            (
                self.signal_rate[[row, col]] + self.ambient_rate[[row, col]],
                self.exp_neg_total[[row, col]],
            )
        } else {
            (self.ambient_rate[[row, col]], self.exp_neg_ambient[[row, col]])
        };
        if lambda == 0.0 {
            return 0;
        }
        let u = stream_uniform(PixelKey::new(seed, view, row, col), bin as u64);
        poisson_inverse(u, lambda, exp_neg)
    }
}

/// Divide a field by its mean over the pixels marked valid. The mean of an
/// all-zero (or empty) field is treated as zero, yielding a zero field.
pub fn normalize_by_mean(field: &Array2<f64>, valid: &Array2<bool>) -> Array2<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (v, &ok) in field.iter().zip(valid.iter()) {
        if ok {
            sum += *v;
            count += 1;
        }
    }
    if count == 0 || sum == 0.0 {
        return Array2::zeros(field.dim());
    }
    let mean = sum / count as f64;
    Array2::from_shape_fn(field.dim(), |(r, c)| {
        if valid[[r, c]] {
            field[[r, c]] / mean
        } else {
            0.0
        }
    })
}

/// Cosine of the laser incidence angle from resampled surface normals:
/// `max(0, -n . d)` per pixel, with back-facing surfaces clamped to zero.
pub fn incidence_cosine(
    normals: &Array3<f64>,
    directions: impl Fn(usize, usize) -> nalgebra::Vector3<f64>,
) -> Array2<f64> {
    let (rows, cols) = (normals.shape()[0], normals.shape()[1]);
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let n = nalgebra::Vector3::new(
            normals[[r, c, 0]],
            normals[[r, c, 1]],
            normals[[r, c, 2]],
        );
        let norm = n.norm();
        if norm == 0.0 {
            return 0.0;
        }
        (-(n / norm).dot(&directions(r, c))).max(0.0)
    })
}

/// Signal photon rate and return bin per pixel.
///
/// The physical term `reflectance * cos(theta) / range^2` is normalized by
/// its mean over valid pixels and scaled by the signal-background ratio; the
/// return bin is the range quantized to `bin_width`, clamped to the histogram.
#[allow(clippy::too_many_arguments)]
pub fn signal_rate(
    reflectance: &Array2<f64>,
    cos_incidence: &Array2<f64>,
    range: &Array2<f64>,
    range_valid: &Array2<bool>,
    resample_valid: &Array2<bool>,
    sbr: f64,
    bins: u32,
    bin_width: f64,
) -> Result<(Array2<f64>, Array2<u32>), SimError> {
    if !resample_valid.iter().any(|&v| v) {
        return Err(SimError::EmptyScene);
    }
    let dim = reflectance.dim();
    let mut falloff = Array2::zeros(dim);
    let mut valid = Array2::from_elem(dim, false);
    for ((r, c), ok) in range_valid.indexed_iter() {
        if *ok && resample_valid[[r, c]] {
            let rng = range[[r, c]];
            falloff[[r, c]] = reflectance[[r, c]] * cos_incidence[[r, c]].clamp(0.0, 1.0)
                / (rng * rng);
            valid[[r, c]] = true;
        }
    }
    let mut rate = normalize_by_mean(&falloff, &valid);
    rate.mapv_inplace(|v| v * sbr);
    let signal_bin = Array2::from_shape_fn(dim, |(r, c)| {
        if valid[[r, c]] {
            ((range[[r, c]] / bin_width).floor() as i64).clamp(0, bins as i64 - 1) as u32
        } else {
            RateField::NO_SIGNAL
        }
    });
    Ok((rate, signal_bin))
}

/// Ambient photon rate per bin: the resampled R-channel normalized by its
/// mean over valid pixels, identical for every time bin.
pub fn ambient_rate(resampled_r: &Array2<f64>, resample_valid: &Array2<bool>) -> Array2<f64> {
    normalize_by_mean(resampled_r, resample_valid)
}
