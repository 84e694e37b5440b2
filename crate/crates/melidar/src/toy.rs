//! Procedurally generated box-and-ground test world with analytic depth and
//! normals. Used by the test suite and by `gen-scene` to produce simulator
//! inputs without external data.

use crate::model::{BoxSize, CameraConfig, OrientedBox3D, SimConfig, ViewConfig};
use crate::photon::{stream_uniform, PixelKey};
use crate::polar::CameraModel;
use crate::sim::ViewInput;
use nalgebra::Vector3;
use ndarray::{Array2, Array3};

/// One solid box of the scene.
#[derive(Debug, Clone, Copy)]
pub struct SceneBox {
    pub shape: OrientedBox3D,
    pub albedo: f64,
}

/// Ground plane, a far wall and a handful of boxes. Albedos are kept within
/// a narrow band so the normalized photon rates stay inside the sampler's
/// envelope.
#[derive(Debug, Clone)]
pub struct ToyScene {
    pub ground_z: f64,
    pub ground_albedo: f64,
    pub sky_albedo: f64,
    pub boxes: Vec<SceneBox>,
}

/// Rendered simulator inputs for one camera.
#[derive(Debug, Clone)]
pub struct RenderedInputs {
    pub rgb: Array3<f64>,
    pub depth: Array2<f64>,
    pub normals: Array3<f64>,
}

impl RenderedInputs {
    pub fn view(&self) -> ViewInput<'_> {
        ViewInput {
            rgb: self.rgb.view(),
            depth: self.depth.view(),
            normals: self.normals.view(),
        }
    }
}

fn sitting(x: f64, y: f64, size: BoxSize, yaw: f64, ground_z: f64) -> OrientedBox3D {
    OrientedBox3D::new(
        Vector3::new(x, y, ground_z + size.h * 0.5),
        size,
        yaw,
        0,
    )
}

const GROUND_Z: f64 = -1.5;

/// Albedo that compensates the radial falloff so objects at different ranges
/// return comparable signal, keeping the normalized rates well inside the
/// sampler envelope while still exercising multi-echo extraction.
fn flat_albedo(base: f64, range: f64) -> f64 {
    (base * (range / 12.0).powi(2)).clamp(0.30, 0.88)
}

/// Deterministic stream of uniforms for scene randomization.
struct ToyRng {
    key: PixelKey,
    counter: u64,
}

impl ToyRng {
    fn new(seed: u64) -> Self {
        ToyRng {
            key: PixelKey::new(seed, u32::MAX, 0, 0),
            counter: 0,
        }
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = stream_uniform(self.key, self.counter);
        self.counter += 1;
        lo + u * (hi - lo)
    }
}

impl ToyScene {
    fn backdrop(boxes: &mut Vec<SceneBox>) {
        // far wall blocking the horizon; its top leaves a few sky rows
        boxes.push(SceneBox {
            shape: OrientedBox3D::new(
                Vector3::new(30.5, 0.0, (GROUND_Z + 1.0) * 0.5),
                BoxSize::new(1.0 - GROUND_Z, 160.0, 1.0),
                0.0,
                0,
            ),
            albedo: 0.5,
        });
    }

    /// The fixed layout: two partially overlapping cars and a person, so the
    /// rendered views contain occlusion edges that yield multi-echo returns.
    pub fn default_layout() -> ToyScene {
        let mut boxes = Vec::new();
        Self::backdrop(&mut boxes);
        for (x, y, size, yaw, base, class_id) in [
            (11.0, 1.2, BoxSize::new(1.6, 1.8, 4.2), 0.3, 0.62, 0),
            (13.8, 2.2, BoxSize::new(1.7, 1.9, 4.4), -0.15, 0.62, 0),
            (12.5, -2.2, BoxSize::new(1.7, 0.6, 0.6), 0.0, 0.65, 1),
        ] {
            let mut shape = sitting(x, y, size, yaw, GROUND_Z);
            shape.class_id = class_id;
            boxes.push(SceneBox {
                shape,
                albedo: flat_albedo(base, shape.center.norm()),
            });
        }
        ToyScene {
            ground_z: GROUND_Z,
            ground_albedo: 0.45,
            sky_albedo: 0.40,
            boxes,
        }
    }

    /// Randomized layout: box pairs at staggered depths inside the sampler's
    /// safe envelope. Deterministic per seed.
    pub fn randomized(seed: u64) -> ToyScene {
        let mut rng = ToyRng::new(seed);
        let mut boxes = Vec::new();
        Self::backdrop(&mut boxes);
        let pairs = 1 + (rng.uniform(0.0, 2.0) as usize).min(1);
        for p in 0..pairs {
            let x = rng.uniform(11.5, 13.5);
            let side = if p == 0 { 1.0 } else { -1.0 };
            let y = side * rng.uniform(0.5, 2.5);
            let yaw = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
            let front = sitting(
                x,
                y,
                BoxSize::new(
                    rng.uniform(1.5, 1.8),
                    rng.uniform(1.7, 2.0),
                    rng.uniform(3.8, 4.6),
                ),
                yaw,
                GROUND_Z,
            );
            let front_albedo = flat_albedo(rng.uniform(0.55, 0.65), front.center.norm());
            boxes.push(SceneBox {
                shape: front,
                albedo: front_albedo,
            });
            // a second box right behind the first, overlapping in image space
            let back = sitting(
                x + rng.uniform(2.4, 3.4),
                y + rng.uniform(-0.8, 0.8),
                BoxSize::new(
                    rng.uniform(1.5, 1.8),
                    rng.uniform(1.7, 2.0),
                    rng.uniform(3.8, 4.6),
                ),
                rng.uniform(-std::f64::consts::PI, std::f64::consts::PI),
                GROUND_Z,
            );
            let back_albedo = flat_albedo(rng.uniform(0.55, 0.65), back.center.norm());
            boxes.push(SceneBox {
                shape: back,
                albedo: back_albedo,
            });
        }
        let mut person = sitting(
            rng.uniform(12.0, 15.0),
            rng.uniform(-3.5, -1.0),
            BoxSize::new(1.7, 0.6, 0.6),
            0.0,
            GROUND_Z,
        );
        person.class_id = 1;
        boxes.push(SceneBox {
            shape: person,
            albedo: flat_albedo(rng.uniform(0.55, 0.68), person.center.norm()),
        });
        ToyScene {
            ground_z: GROUND_Z,
            ground_albedo: 0.45,
            sky_albedo: 0.40,
            boxes,
        }
    }

    /// Ground-truth boxes of the scene's foreground objects (backdrop wall
    /// excluded).
    pub fn object_boxes(&self) -> Vec<OrientedBox3D> {
        self.boxes.iter().skip(1).map(|b| b.shape).collect()
    }

    /// The 32 x 64 detector view used by the test scenes.
    pub fn toy_view() -> ViewConfig {
        ViewConfig {
            name: "toy".into(),
            fov_v_deg: [-12.0, 6.0],
            fov_h_deg: [-20.0, 20.0],
            step_v_deg: 18.0 / 32.0,
            step_h_deg: 40.0 / 64.0,
            camera: CameraConfig {
                fx: 160.0,
                fy: 200.0,
                cx: 63.5,
                cy: 47.5,
                width: 128,
                height: 96,
                yaw_deg: 0.0,
            },
        }
    }

    /// Full-resolution frontal view: 225 x 1400 detectors over a
    /// [-20, 25] x [-70, 70] degree field.
    pub fn frontal_view() -> ViewConfig {
        ViewConfig {
            name: "frontal".into(),
            fov_v_deg: [-20.0, 25.0],
            fov_h_deg: [-70.0, 70.0],
            step_v_deg: 0.2,
            step_h_deg: 0.1,
            camera: CameraConfig {
                fx: 280.0,
                fy: 900.0,
                cx: 799.5,
                cy: 479.5,
                width: 1600,
                height: 960,
                yaw_deg: 0.0,
            },
        }
    }

    /// Trace one ray from the origin; returns range, surface normal and
    /// albedo of the nearest hit.
    pub fn trace(&self, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>, f64)> {
        let mut best: Option<(f64, Vector3<f64>, f64)> = None;
        if dir.z < -1e-12 {
            let t = self.ground_z / dir.z;
            if t > 1e-9 {
                best = Some((t, Vector3::z(), self.ground_albedo));
            }
        }
        for b in &self.boxes {
            if let Some((t, normal)) = ray_box(&b.shape, dir) {
                if best.is_none_or(|(bt, _, _)| t < bt) {
                    best = Some((t, normal, b.albedo));
                }
            }
        }
        best
    }

    /// Render the simulator inputs through `camera` at the given image size.
    /// Depth stores the planar value `range / range_scale(u, v)` so that the
    /// range reconstruction is exact at pixel centers; misses get zero depth.
    pub fn render(&self, camera: &CameraModel) -> RenderedInputs {
        let (width, height) = (camera.width, camera.height);
        let mut rgb = Array3::zeros((height, width, 3));
        let mut depth = Array2::zeros((height, width));
        let mut normals = Array3::zeros((height, width, 3));
        for v in 0..height {
            for u in 0..width {
                let dir = camera.unproject(u as f64, v as f64);
                match self.trace(&dir) {
                    Some((t, normal, albedo)) => {
                        depth[[v, u]] = t / camera.range_scale(u as f64, v as f64);
                        for (c, scale) in [1.0, 0.9, 0.8].into_iter().enumerate() {
                            rgb[[v, u, c]] = albedo * scale;
                        }
                        for c in 0..3 {
                            normals[[v, u, c]] = normal[c];
                        }
                    }
                    None => {
                        for (c, scale) in [1.0, 0.9, 0.8].into_iter().enumerate() {
                            rgb[[v, u, c]] = self.sky_albedo * scale;
                        }
                    }
                }
            }
        }
        RenderedInputs {
            rgb,
            depth,
            normals,
        }
    }

    /// Render the toy view and build a matching simulator configuration.
    /// The SBR is calibrated against the rendered scene so the brightest
    /// pixel stays safely inside the sampler's rate envelope.
    pub fn simulation_inputs(&self, bins: u32) -> (SimConfig, RenderedInputs) {
        let view = Self::toy_view();
        let camera = CameraModel::from_config(&view.camera).expect("toy camera is valid");
        let inputs = self.render(&camera);
        let mut cfg = SimConfig {
            bins,
            sbr: 1.0,
            kernel_sigma: 1.5,
            views: vec![view],
            ..SimConfig::default()
        };
        let summary = crate::sim::rate_summary(&cfg, &[inputs.view()])
            .expect("toy scene rates are computable");
        let budget = 0.9 * crate::photon::MAX_RATE - summary.max_ambient;
        cfg.sbr = budget / summary.max_signal;
        (cfg, inputs)
    }
}

fn rotate_into_box(yaw: f64, v: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = yaw.sin_cos();
    Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
}

fn rotate_out_of_box(yaw: f64, v: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = yaw.sin_cos();
    Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

/// Slab intersection of a ray from the origin with an oriented box; returns
/// the entry distance and the world-frame normal of the entered face.
fn ray_box(shape: &OrientedBox3D, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let o = shape.to_local(&Vector3::zeros());
    let d = rotate_into_box(shape.yaw, dir);
    let half = [
        shape.size.l * 0.5,
        shape.size.w * 0.5,
        shape.size.h * 0.5,
    ];
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut enter_axis = 0usize;
    for axis in 0..3 {
        if d[axis].abs() < 1e-15 {
            if o[axis].abs() > half[axis] {
                return None;
            }
            continue;
        }
        let mut t1 = (-half[axis] - o[axis]) / d[axis];
        let mut t2 = (half[axis] - o[axis]) / d[axis];
        if t1 > t2 {
            std::mem::swap(&mut t1, &mut t2);
        }
        if t1 > t_enter {
            t_enter = t1;
            enter_axis = axis;
        }
        t_exit = t_exit.min(t2);
    }
    if t_enter > t_exit || t_enter <= 1e-9 {
        return None;
    }
    let mut normal_local = Vector3::zeros();
    normal_local[enter_axis] = -d[enter_axis].signum();
    Some((t_enter, rotate_out_of_box(shape.yaw, &normal_local)))
}
