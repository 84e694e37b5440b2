//! Oriented 3D IoU, depth-based difficulty stratification and average
//! precision.

use crate::model::OrientedBox3D;

type Point2 = [f64; 2];

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segment_line_intersection(p: Point2, q: Point2, a: Point2, b: Point2) -> Point2 {
    let d1 = [b[0] - a[0], b[1] - a[1]];
    let d2 = [q[0] - p[0], q[1] - p[1]];
    let denom = d1[0] * d2[1] - d1[1] * d2[0];
    let t = (d1[0] * (a[1] - p[1]) - d1[1] * (a[0] - p[0])) / denom;
    [p[0] + t * d2[0], p[1] + t * d2[1]]
}

/// Sutherland-Hodgman clipping of a polygon against a convex
/// counter-clockwise clip polygon.
fn clip_polygon(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut output: Vec<Point2> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn polygon_area(points: &[Point2]) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..points.len() {
        let p = points[i];
        let q = points[(i + 1) % points.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    acc.abs() * 0.5
}

/// IoU of two oriented 3D boxes: yawed-rectangle footprint intersection via
/// polygon clipping times the vertical extent overlap, over the volume union.
pub fn iou3d(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let (az0, az1) = a.z_interval();
    let (bz0, bz1) = b.z_interval();
    let dz = (az1.min(bz1) - az0.max(bz0)).max(0.0);
    if dz == 0.0 {
        return 0.0;
    }
    let inter_area = polygon_area(&clip_polygon(&a.bev_corners(), &b.bev_corners()));
    let inter = inter_area * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub fn parse(s: &str) -> Option<Difficulty> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Some(Difficulty::Easy),
            "moderate" => Some(Difficulty::Moderate),
            "hard" => Some(Difficulty::Hard),
            _ => None,
        }
    }
}

/// Depth-based difficulty of the real-data protocol: easy below 40 m,
/// moderate in 40-80 m, hard in 80-200 m, excluded beyond 200 m.
pub fn depth_difficulty(range: f64) -> Option<Difficulty> {
    if range < 40.0 {
        Some(Difficulty::Easy)
    } else if range < 80.0 {
        Some(Difficulty::Moderate)
    } else if range <= 200.0 {
        Some(Difficulty::Hard)
    } else {
        None
    }
}

/// Depth difficulty of a box, measured at its center.
pub fn box_difficulty(b: &OrientedBox3D) -> Option<Difficulty> {
    depth_difficulty(b.center.norm())
}

/// 2D annotation required by the KITTI-style difficulty of the synthetic
/// protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KittiMeta {
    pub bbox_height_px: f64,
    /// 0 = fully visible, 1 = partly occluded, 2 = largely occluded.
    pub occlusion: u8,
    pub truncation: f64,
}

/// KITTI benchmark difficulty from 2D box size, occlusion and truncation.
pub fn kitti_difficulty(meta: &KittiMeta) -> Option<Difficulty> {
    if meta.bbox_height_px >= 40.0 && meta.occlusion == 0 && meta.truncation <= 0.15 {
        Some(Difficulty::Easy)
    } else if meta.bbox_height_px >= 25.0 && meta.occlusion <= 1 && meta.truncation <= 0.30 {
        Some(Difficulty::Moderate)
    } else if meta.bbox_height_px >= 25.0 && meta.occlusion <= 2 && meta.truncation <= 0.50 {
        Some(Difficulty::Hard)
    } else {
        None
    }
}

/// Number of recall levels in the interpolated AP.
pub const RECALL_LEVELS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApResult {
    /// NaN when there is no ground truth of the evaluated class/difficulty.
    pub ap: f64,
    pub num_gt: usize,
    pub num_detections: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    /// Detections matched to out-of-difficulty ground truth; they count
    /// neither as hits nor as misses.
    pub ignored_detections: usize,
}

/// Average precision of one class at one IoU threshold.
///
/// Detections are matched greedily, highest score first, each ground-truth
/// box at most once. Ground truth outside the requested difficulty (or
/// beyond 200 m) is ignored together with any detection matching it. AP is
/// the mean of interpolated precision at 40 equally spaced recall levels.
pub fn average_precision(
    detections: &[OrientedBox3D],
    gt: &[OrientedBox3D],
    class_id: u32,
    iou_threshold: f64,
    difficulty: Option<Difficulty>,
) -> ApResult {
    let counted: Vec<&OrientedBox3D> = gt
        .iter()
        .filter(|b| {
            b.class_id == class_id
                && match difficulty {
                    Some(d) => box_difficulty(b) == Some(d),
                    None => box_difficulty(b).is_some(),
                }
        })
        .collect();
    let ignored: Vec<&OrientedBox3D> = gt
        .iter()
        .filter(|b| {
            b.class_id == class_id
                && !match difficulty {
                    Some(d) => box_difficulty(b) == Some(d),
                    None => box_difficulty(b).is_some(),
                }
        })
        .collect();

    let mut dets: Vec<&OrientedBox3D> = detections.iter().filter(|d| d.class_id == class_id).collect();
    dets.sort_by(|a, b| {
        b.score
            .unwrap_or(0.0)
            .total_cmp(&a.score.unwrap_or(0.0))
    });

    let mut matched = vec![false; counted.len()];
    let mut tps = 0usize;
    let mut fps = 0usize;
    let mut ignored_dets = 0usize;
    // (precision, recall) after each counted detection
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(dets.len());
    for det in &dets {
        let mut best: Option<(usize, f64)> = None;
        for (i, g) in counted.iter().enumerate() {
            if matched[i] {
                continue;
            }
            let iou = iou3d(det, g);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((i, iou));
            }
        }
        if let Some((i, _)) = best {
            matched[i] = true;
            tps += 1;
        } else if ignored.iter().any(|g| iou3d(det, g) >= iou_threshold) {
            ignored_dets += 1;
            continue;
        } else {
            fps += 1;
        }
        let precision = tps as f64 / (tps + fps) as f64;
        let recall = if counted.is_empty() {
            0.0
        } else {
            tps as f64 / counted.len() as f64
        };
        curve.push((precision, recall));
    }

    let ap = if counted.is_empty() {
        f64::NAN
    } else {
        let mut acc = 0.0;
        for level in 1..=RECALL_LEVELS {
            let r = level as f64 / RECALL_LEVELS as f64;
            let p = curve
                .iter()
                .filter(|(_, recall)| *recall >= r - 1e-12)
                .map(|(precision, _)| *precision)
                .fold(0.0, f64::max);
            acc += p;
        }
        acc / RECALL_LEVELS as f64
    };

    ApResult {
        ap,
        num_gt: counted.len(),
        num_detections: dets.len(),
        true_positives: tps,
        false_positives: fps,
        ignored_detections: ignored_dets,
    }
}
