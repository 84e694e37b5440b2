//! Bin-based bounding-box target encoding and proposal label assignment.
//!
//! Ground-plane offsets (x, y) and yaw are split into a coarse bin index plus
//! a normalized in-bin residual; the vertical offset is a raw residual and
//! sizes are log-ratios against per-class mean sizes.

use crate::eval::iou3d;
use crate::model::{normalize_angle, BoxSize, ConfigError, OrientedBox3D};
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("center offset ({dx:.3}, {dy:.3}) outside the +-{search_range} m search range")]
    OutOfRange {
        dx: f64,
        dy: f64,
        search_range: f64,
    },
    #[error("bin index {bin} out of range for {bins} bins ({axis})")]
    Decode {
        axis: &'static str,
        bin: usize,
        bins: usize,
    },
}

/// Geometry of the bin codec. Defaults: 3 m search range, 0.5 m bins and 12
/// orientation bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinCodecConfig {
    pub search_range: f64,
    pub bin_size: f64,
    pub orientation_bins: usize,
}

impl Default for BinCodecConfig {
    fn default() -> Self {
        BinCodecConfig {
            search_range: 3.0,
            bin_size: 0.5,
            orientation_bins: 12,
        }
    }
}

impl BinCodecConfig {
    pub fn new(
        search_range: f64,
        bin_size: f64,
        orientation_bins: usize,
    ) -> Result<Self, ConfigError> {
        if !(search_range > 0.0) || !(bin_size > 0.0) {
            return Err(ConfigError(
                "search range and bin size must be positive".into(),
            ));
        }
        let ratio = search_range / bin_size;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(ConfigError(format!(
                "search range {search_range} must be a multiple of bin size {bin_size}"
            )));
        }
        if orientation_bins < 2 {
            return Err(ConfigError("need at least 2 orientation bins".into()));
        }
        Ok(BinCodecConfig {
            search_range,
            bin_size,
            orientation_bins,
        })
    }

    /// Number of position bins per ground-plane axis, covering `[-S, S)`.
    pub fn position_bins(&self) -> usize {
        (2.0 * self.search_range / self.bin_size).round() as usize
    }

    pub fn yaw_bin_size(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.orientation_bins as f64
    }
}

/// Encoded regression targets for one box against one anchor point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxTargets {
    pub bin_x: usize,
    pub bin_y: usize,
    pub bin_yaw: usize,
    /// Normalized in-bin residuals in `[-0.5, 0.5)`.
    pub res_x: f64,
    pub res_y: f64,
    pub res_yaw: f64,
    /// Vertical offset, raw meters.
    pub res_z: f64,
    /// Log-ratios against the class mean size.
    pub res_h: f64,
    pub res_w: f64,
    pub res_l: f64,
}

fn encode_axis(offset: f64, cfg: &BinCodecConfig) -> (usize, f64) {
    let shifted = offset + cfg.search_range;
    let bin = (shifted / cfg.bin_size).floor() as usize;
    let bin = bin.min(cfg.position_bins() - 1);
    let res = (shifted - bin as f64 * cfg.bin_size - cfg.bin_size * 0.5) / cfg.bin_size;
    (bin, res)
}

/// Encode a box relative to an anchor point.
pub fn encode(
    target: &OrientedBox3D,
    anchor: &Vector3<f64>,
    class_mean: BoxSize,
    cfg: &BinCodecConfig,
) -> Result<BoxTargets, CodecError> {
    let dx = target.center.x - anchor.x;
    let dy = target.center.y - anchor.y;
    if dx.abs() >= cfg.search_range || dy.abs() >= cfg.search_range {
        return Err(CodecError::OutOfRange {
            dx,
            dy,
            search_range: cfg.search_range,
        });
    }
    let (bin_x, res_x) = encode_axis(dx, cfg);
    let (bin_y, res_y) = encode_axis(dy, cfg);

    let yaw = normalize_angle(target.yaw);
    let yaw_size = cfg.yaw_bin_size();
    let shifted = yaw + std::f64::consts::PI;
    let bin_yaw = ((shifted / yaw_size).floor() as usize).min(cfg.orientation_bins - 1);
    let res_yaw = (shifted - bin_yaw as f64 * yaw_size - yaw_size * 0.5) / yaw_size;

    Ok(BoxTargets {
        bin_x,
        bin_y,
        bin_yaw,
        res_x,
        res_y,
        res_yaw,
        res_z: target.center.z - anchor.z,
        res_h: (target.size.h / class_mean.h).ln(),
        res_w: (target.size.w / class_mean.w).ln(),
        res_l: (target.size.l / class_mean.l).ln(),
    })
}

/// Exact inverse of [`encode`].
pub fn decode(
    targets: &BoxTargets,
    anchor: &Vector3<f64>,
    class_mean: BoxSize,
    class_id: u32,
    cfg: &BinCodecConfig,
) -> Result<OrientedBox3D, CodecError> {
    let bins = cfg.position_bins();
    if targets.bin_x >= bins {
        return Err(CodecError::Decode {
            axis: "x",
            bin: targets.bin_x,
            bins,
        });
    }
    if targets.bin_y >= bins {
        return Err(CodecError::Decode {
            axis: "y",
            bin: targets.bin_y,
            bins,
        });
    }
    if targets.bin_yaw >= cfg.orientation_bins {
        return Err(CodecError::Decode {
            axis: "yaw",
            bin: targets.bin_yaw,
            bins: cfg.orientation_bins,
        });
    }
    let decode_axis = |bin: usize, res: f64| {
        (bin as f64 + 0.5) * cfg.bin_size - cfg.search_range + res * cfg.bin_size
    };
    let dx = decode_axis(targets.bin_x, targets.res_x);
    let dy = decode_axis(targets.bin_y, targets.res_y);
    let yaw_size = cfg.yaw_bin_size();
    let yaw = (targets.bin_yaw as f64 + 0.5) * yaw_size - std::f64::consts::PI
        + targets.res_yaw * yaw_size;
    Ok(OrientedBox3D::new(
        Vector3::new(anchor.x + dx, anchor.y + dy, anchor.z + targets.res_z),
        BoxSize::new(
            class_mean.h * targets.res_h.exp(),
            class_mean.w * targets.res_w.exp(),
            class_mean.l * targets.res_l.exp(),
        ),
        yaw,
        class_id,
    ))
}

/// JSON-facing codec configuration: geometry plus per-class mean sizes
/// (`[h, w, l]` in meters).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CodecFileConfig {
    pub search_range: f64,
    pub bin_size: f64,
    pub orientation_bins: usize,
    pub mean_sizes: std::collections::BTreeMap<String, [f64; 3]>,
}

impl Default for CodecFileConfig {
    fn default() -> Self {
        let mut mean_sizes = std::collections::BTreeMap::new();
        mean_sizes.insert("Car".to_string(), [1.6, 1.8, 4.2]);
        mean_sizes.insert("Person".to_string(), [1.7, 0.6, 0.6]);
        mean_sizes.insert("Cyclist".to_string(), [1.7, 0.7, 1.8]);
        CodecFileConfig {
            search_range: 3.0,
            bin_size: 0.5,
            orientation_bins: 12,
            mean_sizes,
        }
    }
}

impl CodecFileConfig {
    pub fn codec(&self) -> Result<BinCodecConfig, ConfigError> {
        BinCodecConfig::new(self.search_range, self.bin_size, self.orientation_bins)
    }

    pub fn mean_size(&self, class: &str) -> Option<BoxSize> {
        self.mean_sizes
            .get(class)
            .map(|&[h, w, l]| BoxSize::new(h, w, l))
    }
}

/// IoU thresholds deciding proposal labels for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouThresholds {
    pub positive: f64,
    pub negative: f64,
}

impl IouThresholds {
    /// Car proposals: positive above 0.6, negative below 0.45.
    pub fn car() -> Self {
        IouThresholds {
            positive: 0.6,
            negative: 0.45,
        }
    }

    /// Person proposals: positive above 0.5, negative below 0.4.
    pub fn person() -> Self {
        IouThresholds {
            positive: 0.5,
            negative: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProposalLabel {
    Positive { gt: usize, iou: f64 },
    Negative,
    Ignored { gt: usize, iou: f64 },
}

/// Label proposals by their maximum 3D IoU against ground truth: positive at
/// or above the upper threshold, negative below the lower one, ignored in
/// between.
pub fn assign_proposal_labels(
    proposals: &[OrientedBox3D],
    gt: &[OrientedBox3D],
    thresholds: IouThresholds,
) -> Vec<ProposalLabel> {
    proposals
        .iter()
        .map(|p| {
            let best = gt
                .iter()
                .enumerate()
                .map(|(i, g)| (i, iou3d(p, g)))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match best {
                None => ProposalLabel::Negative,
                Some((i, iou)) => {
                    if iou >= thresholds.positive {
                        ProposalLabel::Positive { gt: i, iou }
                    } else if iou < thresholds.negative {
                        ProposalLabel::Negative
                    } else {
                        ProposalLabel::Ignored { gt: i, iou }
                    }
                }
            }
        })
        .collect()
}
