//! Sensor array construction in polar coordinates, projection into source
//! camera images, and resampling of those images onto the detector grid.

use crate::model::{CameraConfig, ConfigError, ViewConfig};
use nalgebra::{Rotation3, Vector3};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

/// Unit beam direction for elevation `theta` and azimuth `gamma` (radians).
pub fn beam_direction(elevation: f64, azimuth: f64) -> Vector3<f64> {
    let (st, ct) = elevation.sin_cos();
    let (sg, cg) = azimuth.sin_cos();
    Vector3::new(ct * cg, ct * sg, st)
}

/// Detector directions of one view: `rows x cols` beams on a regular polar
/// grid. Row 0 carries the highest elevation, column 0 the leftmost azimuth,
/// so the grid reads like an image of the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorArray {
    /// Radians, strictly decreasing.
    pub elevations: Vec<f64>,
    /// Radians, strictly decreasing.
    pub azimuths: Vec<f64>,
}

impl SensorArray {
    pub fn rows(&self) -> usize {
        self.elevations.len()
    }

    pub fn cols(&self) -> usize {
        self.azimuths.len()
    }

    pub fn direction(&self, row: usize, col: usize) -> Vector3<f64> {
        beam_direction(self.elevations[row], self.azimuths[col])
    }

    /// Concatenate views along the column axis. All views must share the
    /// elevation ladder.
    pub fn concat(arrays: &[SensorArray]) -> Result<SensorArray, ConfigError> {
        let first = arrays
            .first()
            .ok_or_else(|| ConfigError("no sensor arrays to concatenate".into()))?;
        let mut azimuths = Vec::new();
        for a in arrays {
            if a.elevations != first.elevations {
                return Err(ConfigError(
                    "views disagree on vertical sampling".into(),
                ));
            }
            azimuths.extend_from_slice(&a.azimuths);
        }
        Ok(SensorArray {
            elevations: first.elevations.clone(),
            azimuths,
        })
    }
}

/// Build the polar sampling grid for the given field of view.
///
/// Counts follow `round(span / step)` and angles sit at bin centers, ordered
/// top-to-bottom (elevation) and left-to-right (azimuth).
pub fn build_sensor_array(
    fov_v: (f64, f64),
    fov_h: (f64, f64),
    step_v: f64,
    step_h: f64,
) -> Result<SensorArray, ConfigError> {
    if !(step_v > 0.0) || !(step_h > 0.0) {
        return Err(ConfigError("angular steps must be positive".into()));
    }
    let span_v = fov_v.1 - fov_v.0;
    let span_h = fov_h.1 - fov_h.0;
    if !(span_v > 0.0) || !(span_h > 0.0) {
        return Err(ConfigError("field of view spans must be positive".into()));
    }
    let rows = (span_v / step_v).round() as usize;
    let cols = (span_h / step_h).round() as usize;
    if rows == 0 || cols == 0 {
        return Err(ConfigError("field of view narrower than one step".into()));
    }
    let elevations = (0..rows)
        .map(|i| fov_v.1 - (i as f64 + 0.5) * step_v)
        .collect();
    let azimuths = (0..cols)
        .map(|j| fov_h.1 - (j as f64 + 0.5) * step_h)
        .collect();
    Ok(SensorArray {
        elevations,
        azimuths,
    })
}

/// Pinhole-style source camera. The camera looks along its local +x axis
/// (sensor convention), with image coordinates
///
/// ```text
/// u = fx * tan(gamma') + cx      v = fy * tan(theta') + cy
/// ```
///
/// where `gamma'`, `theta'` are azimuth and elevation of the ray in the
/// camera frame. `rotation` maps camera frame to sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Rotation3<f64>,
}

impl CameraModel {
    pub fn from_config(cfg: &CameraConfig) -> Result<CameraModel, ConfigError> {
        if !(cfg.fx > 0.0) || !(cfg.fy > 0.0) {
            return Err(ConfigError("focal lengths must be positive".into()));
        }
        Ok(CameraModel {
            fx: cfg.fx,
            fy: cfg.fy,
            cx: cfg.cx,
            cy: cfg.cy,
            width: cfg.width,
            height: cfg.height,
            rotation: Rotation3::from_axis_angle(
                &Vector3::z_axis(),
                cfg.yaw_deg.to_radians(),
            ),
        })
    }

    /// The camera's viewing direction in the sensor frame.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation * Vector3::x()
    }

    /// Project a sensor-frame ray direction to pixel coordinates. `None` when
    /// the ray points behind the camera or lands outside the image.
    pub fn project(&self, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let d = self.rotation.inverse() * dir;
        if d.x <= 0.0 {
            return None;
        }
        let gamma = d.y.atan2(d.x);
        let theta = d.z.atan2(d.x.hypot(d.y));
        let u = self.fx * gamma.tan() + self.cx;
        let v = self.fy * theta.tan() + self.cy;
        if u < 0.0 || v < 0.0 || u > (self.width - 1) as f64 || v > (self.height - 1) as f64 {
            return None;
        }
        Some((u, v))
    }

    /// Sensor-frame ray direction of a pixel. Inverse of [`Self::project`].
    pub fn unproject(&self, u: f64, v: f64) -> Vector3<f64> {
        let gamma = ((u - self.cx) / self.fx).atan();
        let theta = ((v - self.cy) / self.fy).atan();
        self.rotation * beam_direction(theta, gamma)
    }

    /// Factor by which planar depth at pixel (u, v) is scaled to obtain the
    /// radial range along the ray.
    pub fn range_scale(&self, u: f64, v: f64) -> f64 {
        let a = (u - self.cx) / self.fx;
        let b = (v - self.cy) / self.fy;
        (1.0 + a * a + b * b).sqrt()
    }
}

/// Per-detector source pixel coordinates plus a validity mask.
#[derive(Debug, Clone)]
pub struct PositionalMap {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub valid: Array2<bool>,
    /// Which camera each detector samples (index into the view list).
    pub view: Array2<u32>,
}

/// Project every beam of `array` into a single source camera.
pub fn project_to_image(array: &SensorArray, cam: &CameraModel) -> PositionalMap {
    project_to_views(array, std::slice::from_ref(cam))
}

/// Project every beam into the camera whose optical axis is angularly closest
/// to the beam. This is the overlap rule for multi-camera rigs.
pub fn project_to_views(array: &SensorArray, cams: &[CameraModel]) -> PositionalMap {
    let (rows, cols) = (array.rows(), array.cols());
    let mut u = Array2::zeros((rows, cols));
    let mut v = Array2::zeros((rows, cols));
    let mut valid = Array2::from_elem((rows, cols), false);
    let mut view = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let dir = array.direction(r, c);
            let best = cams
                .iter()
                .enumerate()
                .map(|(i, cam)| (i, cam.optical_axis().dot(&dir)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i);
            if let Some(i) = best {
                if let Some((pu, pv)) = cams[i].project(&dir) {
                    u[[r, c]] = pu;
                    v[[r, c]] = pv;
                    valid[[r, c]] = true;
                    view[[r, c]] = i as u32;
                }
            }
        }
    }
    PositionalMap { u, v, valid, view }
}

fn bilinear(src: &ArrayView3<f64>, u: f64, v: f64, out: &mut [f64]) {
    let (h, w) = (src.shape()[0], src.shape()[1]);
    let u0 = u.floor().clamp(0.0, (w - 1) as f64) as usize;
    let v0 = v.floor().clamp(0.0, (h - 1) as f64) as usize;
    let u1 = (u0 + 1).min(w - 1);
    let v1 = (v0 + 1).min(h - 1);
    let fu = u - u0 as f64;
    let fv = v - v0 as f64;
    for (ch, o) in out.iter_mut().enumerate() {
        let top = src[[v0, u0, ch]] * (1.0 - fu) + src[[v0, u1, ch]] * fu;
        let bot = src[[v1, u0, ch]] * (1.0 - fu) + src[[v1, u1, ch]] * fu;
        *o = top * (1.0 - fv) + bot * fv;
    }
}

/// Resample multi-channel source images onto the detector grid by bilinear
/// interpolation. `sources` holds one image per camera, matched with
/// `map.view`. Invalid positions are filled with zeros.
pub fn resample_views(sources: &[ArrayView3<f64>], map: &PositionalMap) -> Array3<f64> {
    let channels = sources.first().map_or(0, |s| s.shape()[2]);
    let (rows, cols) = map.u.dim();
    let mut out = Array3::zeros((rows, cols, channels));
    let mut pix = vec![0.0; channels];
    for r in 0..rows {
        for c in 0..cols {
            if !map.valid[[r, c]] {
                continue;
            }
            let src = &sources[map.view[[r, c]] as usize];
            bilinear(src, map.u[[r, c]], map.v[[r, c]], &mut pix);
            for (ch, &p) in pix.iter().enumerate() {
                out[[r, c, ch]] = p;
            }
        }
    }
    out
}

/// Single-image wrapper around [`resample_views`].
pub fn resample_image(src: &ArrayView3<f64>, map: &PositionalMap) -> Array3<f64> {
    resample_views(std::slice::from_ref(src), map)
}

/// Resample a single-channel image.
pub fn resample_plane(src: &ArrayView2<f64>, map: &PositionalMap) -> Array2<f64> {
    let src3 = src.insert_axis(Axis(2));
    let out = resample_views(&[src3.view()], map);
    out.index_axis(Axis(2), 0).to_owned()
}

/// Bilinear depth resampling that ignores no-return source pixels
/// (depth <= 0). Interpolation weights are renormalized over the valid
/// corners; a position with no valid corner stays 0. Plain bilinear would
/// blend real depths toward zero at silhouette/sky boundaries and produce
/// spurious near ranges.
pub fn resample_depth(sources: &[ArrayView2<f64>], map: &PositionalMap) -> Array2<f64> {
    let (rows, cols) = map.u.dim();
    let mut out = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            if !map.valid[[r, c]] {
                continue;
            }
            let src = &sources[map.view[[r, c]] as usize];
            let (h, w) = src.dim();
            let u = map.u[[r, c]];
            let v = map.v[[r, c]];
            let u0 = u.floor().clamp(0.0, (w - 1) as f64) as usize;
            let v0 = v.floor().clamp(0.0, (h - 1) as f64) as usize;
            let u1 = (u0 + 1).min(w - 1);
            let v1 = (v0 + 1).min(h - 1);
            let fu = u - u0 as f64;
            let fv = v - v0 as f64;
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (vv, uu, wgt) in [
                (v0, u0, (1.0 - fu) * (1.0 - fv)),
                (v0, u1, fu * (1.0 - fv)),
                (v1, u0, (1.0 - fu) * fv),
                (v1, u1, fu * fv),
            ] {
                let d = src[[vv, uu]];
                if d > 0.0 {
                    acc += wgt * d;
                    norm += wgt;
                }
            }
            if norm > 1e-12 {
                out[[r, c]] = acc / norm;
            }
        }
    }
    out
}

/// Convert planar depth (resampled onto the detector grid) into radial range
/// along each beam. Non-positive depths are flagged invalid.
pub fn depth_to_range(
    depth: &Array2<f64>,
    map: &PositionalMap,
    cams: &[CameraModel],
) -> (Array2<f64>, Array2<bool>) {
    let (rows, cols) = depth.dim();
    let mut range = Array2::zeros((rows, cols));
    let mut valid = Array2::from_elem((rows, cols), false);
    for r in 0..rows {
        for c in 0..cols {
            let z = depth[[r, c]];
            if !map.valid[[r, c]] || !(z > 0.0) {
                continue;
            }
            let cam = &cams[map.view[[r, c]] as usize];
            range[[r, c]] = z * cam.range_scale(map.u[[r, c]], map.v[[r, c]]);
            valid[[r, c]] = true;
        }
    }
    (range, valid)
}

/// Build sensor array and camera for each configured view.
pub fn setup_views(
    views: &[ViewConfig],
) -> Result<(Vec<SensorArray>, Vec<CameraModel>), ConfigError> {
    let mut arrays = Vec::with_capacity(views.len());
    let mut cams = Vec::with_capacity(views.len());
    for v in views {
        arrays.push(build_sensor_array(
            (v.fov_v_deg[0].to_radians(), v.fov_v_deg[1].to_radians()),
            (v.fov_h_deg[0].to_radians(), v.fov_h_deg[1].to_radians()),
            v.step_v_deg.to_radians(),
            v.step_h_deg.to_radians(),
        )?);
        cams.push(CameraModel::from_config(&v.camera)?);
    }
    Ok((arrays, cams))
}
