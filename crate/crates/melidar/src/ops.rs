//! Deterministic detection-pipeline preprocessing: point-set reassignment,
//! feature painting, canonical transforms, subsampling and foreground labels.

use crate::model::{LidarImage, MultiEchoFrame, OrientedBox3D};
use nalgebra::Vector3;
use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OpsError {
    #[error("point at pixel ({row}, {col}) echo {echo} has no channel in a {channels}-channel image")]
    Mapping {
        row: usize,
        col: usize,
        echo: usize,
        channels: usize,
    },
    #[error("cannot subsample an empty point set")]
    EmptyInput,
}

/// A point annotated with its detector pixel and echo index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: Vector3<f64>,
    pub reflectance: f64,
    pub row: usize,
    pub col: usize,
    /// Index within the echo group, 0 = strongest.
    pub echo: usize,
}

/// All points of a frame in row-major pixel order.
pub fn flatten_frame(frame: &MultiEchoFrame) -> Vec<CloudPoint> {
    let mut out = Vec::with_capacity(frame.point_count());
    for g in frame.iter_groups() {
        for (e, echo) in g.echoes.iter().enumerate() {
            out.push(CloudPoint {
                position: echo.point,
                reflectance: echo.reflectance,
                row: g.pixel.0,
                col: g.pixel.1,
                echo: e,
            });
        }
    }
    out
}

/// Split a frame's points into the penetrable and impenetrable sets.
///
/// Per echo group the point farthest from the sensor is impenetrable (the
/// laser ended there); every other point let part of the pulse pass and is
/// penetrable. Range ties designate the stronger echo as impenetrable.
pub fn reassign(frame: &MultiEchoFrame) -> (Vec<CloudPoint>, Vec<CloudPoint>) {
    let mut penetrable = Vec::new();
    let mut impenetrable = Vec::new();
    for g in frame.iter_groups() {
        if g.is_empty() {
            continue;
        }
        let mut farthest = 0usize;
        let mut best = g.echoes[0].point.norm();
        for (e, echo) in g.echoes.iter().enumerate().skip(1) {
            let range = echo.point.norm();
            // strict: on ties the earlier (stronger) echo keeps the slot
            if range > best {
                best = range;
                farthest = e;
            }
        }
        for (e, echo) in g.echoes.iter().enumerate() {
            let point = CloudPoint {
                position: echo.point,
                reflectance: echo.reflectance,
                row: g.pixel.0,
                col: g.pixel.1,
                echo: e,
            };
            if e == farthest {
                impenetrable.push(point);
            } else {
                penetrable.push(point);
            }
        }
    }
    (penetrable, impenetrable)
}

/// Axis-aligned 2D box in LiDAR-image pixel coordinates, boundary inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    pub min_col: f64,
    pub min_row: f64,
    pub max_col: f64,
    pub max_row: f64,
    pub class_id: u32,
}

impl Box2D {
    pub fn contains(&self, row: f64, col: f64) -> bool {
        col >= self.min_col && col <= self.max_col && row >= self.min_row && row <= self.max_row
    }
}

/// Per-point class vector: entry `c` is 1 iff the point's pixel lies inside
/// some 2D box of class `c`, zero vector outside all boxes, multiple ones
/// when boxes of several classes overlap the pixel.
pub fn paint_class(points: &[CloudPoint], boxes: &[Box2D], num_classes: usize) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| {
            let mut v = vec![0.0; num_classes];
            for b in boxes {
                if (b.class_id as usize) < num_classes && b.contains(p.row as f64, p.col as f64) {
                    v[b.class_id as usize] = 1.0;
                }
            }
            v
        })
        .collect()
}

/// Per-point `(ambient, reflectance)` vector from the LiDAR image. Points of
/// one echo group share the ambient value; reflectance is the point's own
/// channel.
pub fn paint_pixel(
    points: &[CloudPoint],
    image: &LidarImage,
) -> Result<Vec<[f64; 2]>, OpsError> {
    let channels = image.data.shape()[2];
    points
        .iter()
        .map(|p| {
            if p.row >= image.height() || p.col >= image.width() || p.echo + 1 >= channels {
                return Err(OpsError::Mapping {
                    row: p.row,
                    col: p.col,
                    echo: p.echo,
                    channels,
                });
            }
            Ok([
                image.ambient(p.row, p.col),
                image.reflectance(p.row, p.col, p.echo),
            ])
        })
        .collect()
}

/// Express points in the proposal's canonical frame: centered on the
/// proposal, heading along +x.
pub fn canonical_transform(points: &[Vector3<f64>], proposal: &OrientedBox3D) -> Vec<Vector3<f64>> {
    points.iter().map(|p| proposal.to_local(p)).collect()
}

/// Inverse of [`canonical_transform`].
pub fn canonical_inverse(points: &[Vector3<f64>], proposal: &OrientedBox3D) -> Vec<Vector3<f64>> {
    points.iter().map(|p| proposal.from_local(p)).collect()
}

/// Draw `n` points deterministically: without replacement when the input has
/// at least `n` points, with replacement otherwise.
pub fn subsample<T: Clone>(points: &[T], n: usize, seed: u64) -> Result<Vec<T>, OpsError> {
    if points.is_empty() {
        return Err(OpsError::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if points.len() >= n {
        let picked = index_sample(&mut rng, points.len(), n);
        Ok(picked.iter().map(|i| points[i].clone()).collect())
    } else {
        Ok((0..n)
            .map(|_| points[rng.gen_range(0..points.len())].clone())
            .collect())
    }
}

/// Per-point foreground flag: 1 iff the point lies inside (inclusive) at
/// least one ground-truth box.
pub fn foreground_labels(points: &[Vector3<f64>], boxes: &[OrientedBox3D]) -> Vec<bool> {
    points
        .iter()
        .map(|p| boxes.iter().any(|b| b.contains(p)))
        .collect()
}
