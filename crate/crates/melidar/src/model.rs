//! Shared domain types: echo groups, frames, LiDAR images, oriented boxes and
//! simulator configuration.
//!
//! Coordinate convention throughout the crate: sensor at the origin,
//! x forward, y left, z up. Azimuth is measured in the xy-plane from +x,
//! elevation from the xy-plane; a beam with elevation `theta` and azimuth
//! `gamma` points along `(cos(theta)cos(gamma), cos(theta)sin(gamma), sin(theta))`.

use nalgebra::{Isometry3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum angular deviation (radians) between echoes of one group and their
/// shared beam ray.
pub const COLLINEARITY_TOL_RAD: f64 = 1e-6;

#[derive(Debug, Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

/// Normalize an angle to `[-pi, pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    // rem_euclid can land exactly on +pi through rounding
    if r >= std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// One detected laser return: a 3D point and the strength of the return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Echo {
    pub point: Vector3<f64>,
    pub reflectance: f64,
}

/// All returns of one laser beam plus the ambient level shared by the beam.
///
/// Echoes are ordered by reflectance, strongest first. The ordering is by
/// strength, not by range: a weaker echo may be nearer or farther than a
/// stronger one.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoGroup {
    pub echoes: Vec<Echo>,
    pub ambient: f64,
    /// (row, col) position of the beam in the detector grid.
    pub pixel: (usize, usize),
}

impl EchoGroup {
    pub fn empty(pixel: (usize, usize)) -> Self {
        EchoGroup {
            echoes: Vec::new(),
            ambient: 0.0,
            pixel,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.echoes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.echoes.len()
    }
}

/// A full sweep: an H x W grid of echo groups.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiEchoFrame {
    pub height: usize,
    pub width: usize,
    /// Row-major, `height * width` entries.
    pub groups: Vec<EchoGroup>,
    pub sensor_pose: Isometry3<f64>,
    /// Meters of range represented by one time bin.
    pub bin_width: f64,
    /// K, the maximum number of echoes per group.
    pub max_echoes: usize,
}

impl MultiEchoFrame {
    pub fn group(&self, row: usize, col: usize) -> &EchoGroup {
        &self.groups[row * self.width + col]
    }

    pub fn iter_groups(&self) -> impl Iterator<Item = &EchoGroup> {
        self.groups.iter()
    }

    /// Total number of echo points in the frame.
    pub fn point_count(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }

    /// Number of points belonging to echo `index` (0 = strongest).
    pub fn echo_count(&self, index: usize) -> usize {
        self.groups.iter().filter(|g| g.len() > index).count()
    }
}

/// Dense `[H, W, 1 + K]` image: channel 0 is ambient, channels `1..=K` hold
/// the reflectance of echo 1..K (zero where the echo is missing).
#[derive(Debug, Clone, PartialEq)]
pub struct LidarImage {
    pub data: ndarray::Array3<f64>,
}

impl LidarImage {
    pub fn zeros(height: usize, width: usize, max_echoes: usize) -> Self {
        LidarImage {
            data: ndarray::Array3::zeros((height, width, 1 + max_echoes)),
        }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    /// Number of reflectance channels (K).
    pub fn max_echoes(&self) -> usize {
        self.data.shape()[2] - 1
    }

    pub fn ambient(&self, row: usize, col: usize) -> f64 {
        self.data[[row, col, 0]]
    }

    pub fn reflectance(&self, row: usize, col: usize, echo: usize) -> f64 {
        self.data[[row, col, 1 + echo]]
    }

    /// Rearrange a frame's ambient and per-echo reflectance values into the
    /// dense image layout.
    pub fn from_frame(frame: &MultiEchoFrame) -> LidarImage {
        let mut image = LidarImage::zeros(frame.height, frame.width, frame.max_echoes);
        for g in frame.iter_groups() {
            let (r, c) = g.pixel;
            image.data[[r, c, 0]] = g.ambient;
            for (e, echo) in g.echoes.iter().enumerate().take(frame.max_echoes) {
                image.data[[r, c, 1 + e]] = echo.reflectance;
            }
        }
        image
    }
}

/// Box dimensions in meters: height, width, length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSize {
    pub h: f64,
    pub w: f64,
    pub l: f64,
}

impl BoxSize {
    pub fn new(h: f64, w: f64, l: f64) -> Self {
        BoxSize { h, w, l }
    }

    pub fn volume(&self) -> f64 {
        self.h * self.w * self.l
    }
}

/// Oriented 3D bounding box: center, size and yaw about the up axis.
///
/// `center` is the geometric center of the box. Length runs along the
/// heading direction, width across it, height along z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox3D {
    pub center: Vector3<f64>,
    pub size: BoxSize,
    /// Radians in `[-pi, pi)`.
    pub yaw: f64,
    pub class_id: u32,
    pub score: Option<f64>,
}

impl OrientedBox3D {
    pub fn new(center: Vector3<f64>, size: BoxSize, yaw: f64, class_id: u32) -> Self {
        OrientedBox3D {
            center,
            size,
            yaw: normalize_angle(yaw),
            class_id,
            score: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn volume(&self) -> f64 {
        self.size.volume()
    }

    /// Map a point into the box frame (center at origin, heading along +x).
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    /// Map a point from the box frame back to the sensor frame.
    pub fn from_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z) + self.center
    }

    /// Inclusive point-in-box test.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= self.size.l * 0.5
            && q.y.abs() <= self.size.w * 0.5
            && q.z.abs() <= self.size.h * 0.5
    }

    /// Footprint corners in the ground plane, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.size.l * 0.5;
        let hw = self.size.w * 0.5;
        let mut out = [[0.0; 2]; 4];
        for (i, (lx, ly)) in [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
            .into_iter()
            .enumerate()
        {
            out[i] = [
                self.center.x + c * lx - s * ly,
                self.center.y + s * lx + c * ly,
            ];
        }
        out
    }

    /// Vertical extent `[z_min, z_max]`.
    pub fn z_interval(&self) -> (f64, f64) {
        (
            self.center.z - self.size.h * 0.5,
            self.center.z + self.size.h * 0.5,
        )
    }
}

/// One view of the simulated sensor: angular coverage plus the source camera.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewConfig {
    #[serde(default)]
    pub name: String,
    /// Vertical field of view `[min, max]` in degrees.
    pub fov_v_deg: [f64; 2],
    /// Horizontal field of view `[min, max]` in degrees.
    pub fov_h_deg: [f64; 2],
    pub step_v_deg: f64,
    pub step_h_deg: f64,
    pub camera: CameraConfig,
}

/// Pinhole intrinsics plus the view's yaw about the up axis.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub yaw_deg: f64,
}

impl CameraConfig {
    /// Focal lengths that make an image of the given size cover the field of
    /// view with a small margin, principal point at the image center.
    pub fn fit(fov_v_deg: [f64; 2], fov_h_deg: [f64; 2], width: usize, height: usize) -> Self {
        let cx = (width - 1) as f64 / 2.0;
        let cy = (height - 1) as f64 / 2.0;
        let tan_h = fov_h_deg
            .iter()
            .map(|a| a.to_radians().tan().abs())
            .fold(0.0, f64::max);
        let tan_v = fov_v_deg
            .iter()
            .map(|a| a.to_radians().tan().abs())
            .fold(0.0, f64::max);
        CameraConfig {
            fx: 0.98 * cx / tan_h,
            fy: 0.98 * cy / tan_v,
            cx,
            cy,
            width,
            height,
            yaw_deg: 0.0,
        }
    }
}

/// Simulator configuration. Defaults follow the reference sensor: 10240 time
/// bins over 1000 m, a 5x5 aggregation patch and K = 3 echoes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// N, number of time bins.
    pub bins: u32,
    /// Total depth range covered by the bins, meters.
    pub depth_range: f64,
    /// Signal-background ratio controlling laser return strength relative to
    /// ambient light.
    pub sbr: f64,
    /// S, aggregation kernel size (odd).
    pub kernel_size: usize,
    /// Gaussian kernel sigma in pixels.
    pub kernel_sigma: f64,
    /// Echo detection threshold in photons. `None` selects the automatic
    /// ambient tail bound.
    pub threshold: Option<f64>,
    /// K, maximum echoes per beam.
    pub max_echoes: usize,
    /// Half-width in bins of the temporal non-maximum suppression window.
    pub nms_window: u32,
    pub seed: u64,
    pub views: Vec<ViewConfig>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            bins: 10240,
            depth_range: 1000.0,
            sbr: 2.0,
            kernel_size: 5,
            kernel_sigma: 1.2,
            threshold: None,
            max_echoes: 3,
            nms_window: 3,
            seed: 0,
            views: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn bin_width(&self) -> f64 {
        self.depth_range / self.bins as f64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.bins == 0 {
            return Err(ConfigError("bins must be >= 1".into()));
        }
        if !(self.depth_range > 0.0) {
            return Err(ConfigError("depth_range must be positive".into()));
        }
        if !(self.sbr > 0.0) {
            return Err(ConfigError("sbr must be positive".into()));
        }
        if self.kernel_size.is_multiple_of(2) || self.kernel_size == 0 {
            return Err(ConfigError("kernel_size must be odd".into()));
        }
        if !(self.kernel_sigma > 0.0) {
            return Err(ConfigError("kernel_sigma must be positive".into()));
        }
        if let Some(t) = self.threshold {
            if !(t >= 0.0) {
                return Err(ConfigError("threshold must be >= 0".into()));
            }
        }
        if self.max_echoes == 0 {
            return Err(ConfigError("max_echoes must be >= 1".into()));
        }
        Ok(())
    }
}

/// A broken frame invariant. Violations are data, not errors: `validate_frame`
/// reports all of them instead of failing on the first.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameViolation {
    /// `groups.len()` does not match `height * width`.
    GridSize { expected: usize, actual: usize },
    /// Group stored at a grid slot whose (row, col) differs from `group.pixel`.
    PixelIndex {
        slot: (usize, usize),
        stored: (usize, usize),
    },
    /// Echo `echo` is stronger than its predecessor.
    EchoOrdering { pixel: (usize, usize), echo: usize },
    /// Echo `echo` deviates from the group's beam ray by more than the
    /// collinearity tolerance.
    OffRayEcho {
        pixel: (usize, usize),
        echo: usize,
        deviation_rad: f64,
    },
    TooManyEchoes { pixel: (usize, usize), count: usize },
    NegativeReflectance { pixel: (usize, usize), echo: usize },
    NegativeAmbient { pixel: (usize, usize) },
}

/// Check every `EchoGroup` invariant of a frame; empty result means the frame
/// is well formed.
pub fn validate_frame(frame: &MultiEchoFrame) -> Vec<FrameViolation> {
    let mut out = Vec::new();
    let expected = frame.height * frame.width;
    if frame.groups.len() != expected {
        out.push(FrameViolation::GridSize {
            expected,
            actual: frame.groups.len(),
        });
        return out;
    }
    for (idx, group) in frame.groups.iter().enumerate() {
        let slot = (idx / frame.width, idx % frame.width);
        if group.pixel != slot {
            out.push(FrameViolation::PixelIndex {
                slot,
                stored: group.pixel,
            });
        }
        if group.ambient < 0.0 {
            out.push(FrameViolation::NegativeAmbient { pixel: slot });
        }
        if group.len() > frame.max_echoes {
            out.push(FrameViolation::TooManyEchoes {
                pixel: slot,
                count: group.len(),
            });
        }
        for (e, echo) in group.echoes.iter().enumerate() {
            if echo.reflectance < 0.0 {
                out.push(FrameViolation::NegativeReflectance {
                    pixel: slot,
                    echo: e,
                });
            }
            if e > 0 && echo.reflectance > group.echoes[e - 1].reflectance {
                out.push(FrameViolation::EchoOrdering {
                    pixel: slot,
                    echo: e,
                });
            }
        }
        // Collinearity: every echo must lie on the ray through the first one.
        if group.len() > 1 {
            let reference = group.echoes[0].point;
            if reference.norm() > 0.0 {
                for (e, echo) in group.echoes.iter().enumerate().skip(1) {
                    let p = echo.point;
                    if p.norm() == 0.0 {
                        continue;
                    }
                    let deviation = reference.cross(&p).norm().atan2(reference.dot(&p));
                    if deviation.abs() > COLLINEARITY_TOL_RAD {
                        out.push(FrameViolation::OffRayEcho {
                            pixel: slot,
                            echo: e,
                            deviation_rad: deviation,
                        });
                    }
                }
            }
        }
    }
    out
}
