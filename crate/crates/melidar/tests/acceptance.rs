//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantity. Tolerances are fixed here, not tuned at runtime.

use melidar::codec::{encode, decode, BinCodecConfig, CodecError};
use melidar::extract::cloud_tensor;
use melidar::losses::{
    focal_loss, overall_loss, proposal_loss, refine_loss, smooth_l1, BinPrediction,
    BoxPrediction, FocalParams, ProposalPrediction,
};
use melidar::model::{BoxSize, OrientedBox3D, SimConfig};
use melidar::ops::{canonical_inverse, canonical_transform, reassign};
use melidar::photon::{stream_uniform, PixelKey, RateField};
use melidar::polar::beam_direction;
use melidar::sim::{simulate, simulate_dense, write_outputs, SimOutput};
use melidar::tensor::encode_tensor;
use melidar::toy::ToyScene;
use melidar::eval::{average_precision, box_difficulty, iou3d, Difficulty};
use nalgebra::Vector3;
use std::time::Instant;

/// Deterministic uniform stream for test-local randomness.
struct TestRng {
    key: PixelKey,
    counter: u64,
}

impl TestRng {
    fn new(seed: u64) -> Self {
        TestRng {
            key: PixelKey::new(seed, 999, 0, 0),
            counter: 0,
        }
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = stream_uniform(self.key, self.counter);
        self.counter += 1;
        lo + u * (hi - lo)
    }
}

fn toy_sim(seed: u64, bins: u32) -> SimOutput {
    let scene = if seed == 0 {
        ToyScene::default_layout()
    } else {
        ToyScene::randomized(seed)
    };
    let (mut cfg, inputs) = scene.simulation_inputs(bins);
    cfg.seed = seed;
    simulate(&cfg, &[inputs.view()]).expect("toy simulation runs")
}

#[test]
fn a01_echo_ordering_and_count_monotonicity() {
    let start = Instant::now();
    let mut total = [0usize; 3];
    for seed in 0..50u64 {
        let out = toy_sim(seed, 10240);
        for group in out.frame.iter_groups() {
            for pair in group.echoes.windows(2) {
                assert!(
                    pair[0].reflectance >= pair[1].reflectance,
                    "seed {seed}: echo group at {:?} not sorted by strength",
                    group.pixel
                );
            }
        }
        let counts = [
            out.frame.echo_count(0),
            out.frame.echo_count(1),
            out.frame.echo_count(2),
        ];
        assert!(
            counts[0] >= counts[1] && counts[1] >= counts[2],
            "seed {seed}: echo counts {counts:?} not monotone"
        );
        for (t, c) in total.iter_mut().zip(counts) {
            *t += c;
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 60.0,
        "50 frames took {elapsed:?}, budget is one minute"
    );
    assert!(total[1] > 0, "no frame produced a second echo");
    println!(
        "acceptance 01 PASS: 50 frames sorted and monotone, totals {total:?}, {:.1}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn a02_poisson_mean_and_variance() {
    let start = Instant::now();
    let n = 100_000u64;
    for lambda in [0.5, 2.0, 8.0] {
        let field = RateField::new(
            ndarray::Array2::zeros((1, 1)),
            ndarray::Array2::from_elem((1, 1), RateField::NO_SIGNAL),
            ndarray::Array2::from_elem((1, 1), lambda),
            16,
        );
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let x = field.sample_bin(i, 7, 0, 0, 3) as f64;
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        // sampling distributions: sd(mean) = sqrt(lambda/n),
        // sd(s^2) ~ sqrt((lambda + 2 lambda^2)/n) for Poisson
        let sd_mean = (lambda / n as f64).sqrt();
        let sd_var = ((lambda + 2.0 * lambda * lambda) / n as f64).sqrt();
        assert!(
            (mean - lambda).abs() < 3.0 * sd_mean,
            "lambda {lambda}: mean {mean} outside 3 sigma"
        );
        assert!(
            (var - lambda).abs() < 3.0 * sd_var,
            "lambda {lambda}: variance {var} outside 3 sigma"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "acceptance 02 PASS: mean/variance within 3 sigma at lambda 0.5, 2, 8 ({:.2}s)",
        elapsed.as_secs_f64()
    );
}

fn output_bytes(out: &SimOutput) -> Vec<u8> {
    let mut bytes = Vec::new();
    bytes.extend(encode_tensor(
        &melidar::tensor::Tensor::F32(out.ambient.mapv(|v| v as f32).into_dyn()),
        &serde_json::Value::Null,
    ));
    bytes.extend(encode_tensor(
        &melidar::tensor::Tensor::F32(cloud_tensor(&out.frame).mapv(|v| v as f32).into_dyn()),
        &serde_json::Value::Null,
    ));
    bytes.extend(encode_tensor(
        &melidar::tensor::Tensor::F32(out.lidar_image.data.mapv(|v| v as f32).into_dyn()),
        &serde_json::Value::Null,
    ));
    bytes
}

#[test]
fn a03_dense_sparse_equivalence() {
    for seed in 1..=10u64 {
        let scene = ToyScene::randomized(seed);
        let (mut cfg, inputs) = scene.simulation_inputs(256);
        cfg.seed = seed;
        let fast = simulate(&cfg, &[inputs.view()]).expect("fast path");
        let dense = simulate_dense(&cfg, &[inputs.view()]).expect("dense path");
        assert_eq!(fast.frame, dense.frame, "seed {seed}: frames differ");
        assert_eq!(
            fast.lidar_image, dense.lidar_image,
            "seed {seed}: images differ"
        );
        assert_eq!(
            output_bytes(&fast),
            output_bytes(&dense),
            "seed {seed}: serialized outputs differ"
        );
    }
    println!("acceptance 03 PASS: fast path byte-identical to dense oracle on 10 scenes");
}

#[test]
fn a04_determinism_under_parallelism() {
    let scene = ToyScene::default_layout();
    let (mut cfg, inputs) = scene.simulation_inputs(10240);
    cfg.seed = 99;
    let mut outputs = Vec::new();
    for threads in [1usize, 4, 16] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let out = pool.install(|| simulate(&cfg, &[inputs.view()]).expect("simulation runs"));
        outputs.push((threads, output_bytes(&out)));
    }
    for pair in outputs.windows(2) {
        assert_eq!(
            pair[0].1, pair[1].1,
            "outputs differ between {} and {} threads",
            pair[0].0, pair[1].0
        );
    }
    println!("acceptance 04 PASS: byte-identical output at 1, 4 and 16 threads");
}

#[test]
fn a05_reassignment_partition() {
    for seed in 0..8u64 {
        let out = toy_sim(seed, 10240);
        let (pen, imp) = reassign(&out.frame);
        assert_eq!(
            pen.len() + imp.len(),
            out.frame.point_count(),
            "seed {seed}: reassignment lost points"
        );
        let key = |p: &melidar::ops::CloudPoint| (p.row, p.col, p.echo);
        let mut seen = std::collections::HashSet::new();
        for p in pen.iter().chain(imp.iter()) {
            assert!(seen.insert(key(p)), "seed {seed}: sets overlap at {:?}", key(p));
        }
        let mut imp_per_group = std::collections::HashMap::new();
        for p in &imp {
            *imp_per_group.entry((p.row, p.col)).or_insert(0usize) += 1;
        }
        let non_empty = out.frame.iter_groups().filter(|g| !g.is_empty()).count();
        assert_eq!(imp_per_group.len(), non_empty, "seed {seed}");
        assert!(
            imp_per_group.values().all(|&c| c == 1),
            "seed {seed}: some group has multiple impenetrable points"
        );
    }
    println!("acceptance 05 PASS: penetrable/impenetrable is an exact partition on 8 frames");
}

#[test]
fn a06_box_codec_round_trip() {
    let cfg = BinCodecConfig::default();
    let mean = BoxSize::new(1.6, 1.8, 4.2);
    let mut rng = TestRng::new(6);
    for i in 0..10_000 {
        let anchor = Vector3::new(
            rng.uniform(-40.0, 40.0),
            rng.uniform(-40.0, 40.0),
            rng.uniform(-2.0, 2.0),
        );
        let b = OrientedBox3D::new(
            anchor
                + Vector3::new(
                    rng.uniform(-2.999, 2.999),
                    rng.uniform(-2.999, 2.999),
                    rng.uniform(-2.0, 2.0),
                ),
            BoxSize::new(
                rng.uniform(0.5, 3.0),
                rng.uniform(0.5, 3.0),
                rng.uniform(0.5, 8.0),
            ),
            rng.uniform(-std::f64::consts::PI, std::f64::consts::PI),
            0,
        );
        let t = encode(&b, &anchor, mean, &cfg)
            .unwrap_or_else(|e| panic!("iteration {i}: unexpected {e}"));
        let back = decode(&t, &anchor, mean, 0, &cfg).unwrap();
        assert!((back.center - b.center).norm() < 1e-6, "center error at {i}");
        assert!(
            melidar::model::normalize_angle(back.yaw - b.yaw).abs() < 1e-6,
            "yaw error at {i}"
        );
        for (a, b) in [
            (back.size.h, b.size.h),
            (back.size.w, b.size.w),
            (back.size.l, b.size.l),
        ] {
            assert!((a - b).abs() < 1e-6, "size error at {i}");
        }
    }
    // OutOfRange raised exactly when |dx| or |dy| >= the search range
    for offset in [-3.2, -3.0, -2.9999, 0.0, 2.9999, 3.0, 3.2] {
        for axis in 0..2 {
            let mut center = Vector3::new(0.0, 0.0, 0.5);
            center[axis] = offset;
            let b = OrientedBox3D::new(center, mean, 0.3, 0);
            let result = encode(&b, &Vector3::zeros(), mean, &cfg);
            if offset.abs() >= cfg.search_range {
                assert!(
                    matches!(result, Err(CodecError::OutOfRange { .. })),
                    "offset {offset} axis {axis} should be out of range"
                );
            } else {
                assert!(result.is_ok(), "offset {offset} axis {axis} should encode");
            }
        }
    }
    println!("acceptance 06 PASS: 10000 boxes round-trip within 1e-6; range check exact");
}

fn corners_3d(b: &OrientedBox3D) -> Vec<Vector3<f64>> {
    let (z0, z1) = b.z_interval();
    b.bev_corners()
        .iter()
        .flat_map(|&[x, y]| [Vector3::new(x, y, z0), Vector3::new(x, y, z1)])
        .collect()
}

fn monte_carlo_iou(a: &OrientedBox3D, b: &OrientedBox3D, samples: u64, seed: u64) -> f64 {
    let pts: Vec<Vector3<f64>> = corners_3d(a).into_iter().chain(corners_3d(b)).collect();
    let mut lo = Vector3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = -lo;
    for p in &pts {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let volume_bbox =
        (hi.x - lo.x).max(0.0) * (hi.y - lo.y).max(0.0) * (hi.z - lo.z).max(0.0);
    let mut rng = TestRng::new(seed);
    let mut inside_both = 0u64;
    for _ in 0..samples {
        let p = Vector3::new(
            rng.uniform(lo.x, hi.x),
            rng.uniform(lo.y, hi.y),
            rng.uniform(lo.z, hi.z),
        );
        if a.contains(&p) && b.contains(&p) {
            inside_both += 1;
        }
    }
    let inter = volume_bbox * inside_both as f64 / samples as f64;
    inter / (a.volume() + b.volume() - inter)
}

#[test]
fn a07_iou_monte_carlo_oracle() {
    // the three analytic cases
    let unit = |x: f64, yaw: f64| {
        OrientedBox3D::new(Vector3::new(x, 0.0, 0.0), BoxSize::new(1.0, 1.0, 1.0), yaw, 0)
    };
    assert!((iou3d(&unit(0.0, 0.0), &unit(0.0, 0.0)) - 1.0).abs() < 1e-12);
    assert!((iou3d(&unit(0.0, 0.0), &unit(0.5, 0.0)) - 1.0 / 3.0).abs() < 1e-12);
    assert!(
        (iou3d(&unit(0.0, 0.0), &unit(0.0, std::f64::consts::FRAC_PI_2)) - 1.0).abs() < 1e-12
    );

    use rayon::prelude::*;
    let worst = (0..200u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = TestRng::new(1000 + i);
            let mk = |rng: &mut TestRng| {
                OrientedBox3D::new(
                    Vector3::new(
                        rng.uniform(-1.0, 1.0),
                        rng.uniform(-1.0, 1.0),
                        rng.uniform(-0.5, 0.5),
                    ),
                    BoxSize::new(
                        rng.uniform(0.8, 2.2),
                        rng.uniform(0.8, 2.2),
                        rng.uniform(0.8, 4.0),
                    ),
                    rng.uniform(-std::f64::consts::PI, std::f64::consts::PI),
                    0,
                )
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let analytic = iou3d(&a, &b);
            let mc = monte_carlo_iou(&a, &b, 1_000_000, 5000 + i);
            (analytic - mc).abs()
        })
        .reduce(|| 0.0, f64::max);
    assert!(worst < 1e-2, "worst |analytic - MC| = {worst}");
    println!("acceptance 07 PASS: analytic IoU within 1e-2 of 1e6-sample oracle (worst {worst:.2e})");
}

#[test]
fn a08_ap_hand_cases_and_difficulty() {
    let cube = |x: f64| {
        OrientedBox3D::new(Vector3::new(x, 0.0, 0.0), BoxSize::new(1.0, 1.0, 1.0), 0.0, 0)
    };
    let gt = vec![cube(5.0)];
    // single true positive
    let r = average_precision(&[cube(5.0).with_score(0.9)], &gt, 0, 0.5, None);
    assert!((r.ap - 1.0).abs() < 1e-3, "case 1 ap {}", r.ap);
    // true positive ranked above a false positive
    let r = average_precision(
        &[cube(5.0).with_score(0.9), cube(50.0).with_score(0.1)],
        &gt,
        0,
        0.5,
        None,
    );
    assert!((r.ap - 1.0).abs() < 1e-3, "case 2 ap {}", r.ap);
    // false positive ranked first
    let r = average_precision(
        &[cube(50.0).with_score(0.9), cube(5.0).with_score(0.1)],
        &gt,
        0,
        0.5,
        None,
    );
    assert!((r.ap - 0.5).abs() < 1e-3, "case 3 ap {}", r.ap);

    // difficulty boundaries at 39.9 / 40.1 / 80.1 / 199.9 m
    let at = |range: f64| cube(range);
    assert_eq!(box_difficulty(&at(39.9)), Some(Difficulty::Easy));
    assert_eq!(box_difficulty(&at(40.1)), Some(Difficulty::Moderate));
    assert_eq!(box_difficulty(&at(80.1)), Some(Difficulty::Hard));
    assert_eq!(box_difficulty(&at(199.9)), Some(Difficulty::Hard));
    println!("acceptance 08 PASS: AP hand cases 1.0 / 1.0 / 0.5 and difficulty boundaries");
}

fn flatten_box(p: &BoxPrediction, out: &mut Vec<f64>) {
    for bin in [&p.bin_x, &p.bin_y, &p.bin_yaw] {
        out.extend_from_slice(&bin.probs);
        out.push(bin.residual);
    }
    out.extend_from_slice(&[p.res_z, p.res_h, p.res_w, p.res_l]);
}

fn unflatten_box(template: &BoxPrediction, values: &mut std::slice::Iter<f64>) -> BoxPrediction {
    let mut take = || *values.next().unwrap();
    let mut bin = |b: &BinPrediction| BinPrediction {
        probs: (0..b.probs.len()).map(|_| take()).collect(),
        residual: take(),
    };
    let bin_x = bin(&template.bin_x);
    let bin_y = bin(&template.bin_y);
    let bin_yaw = bin(&template.bin_yaw);
    BoxPrediction {
        bin_x,
        bin_y,
        bin_yaw,
        res_z: take(),
        res_h: take(),
        res_w: take(),
        res_l: take(),
    }
}

fn random_bin(rng: &mut TestRng, bins: usize, hot: usize) -> BinPrediction {
    let mut probs: Vec<f64> = (0..bins).map(|_| rng.uniform(0.1, 0.9)).collect();
    probs[hot] = rng.uniform(0.2, 0.9);
    BinPrediction {
        probs,
        residual: rng.uniform(-1.5, 1.5),
    }
}

fn random_instance(
    rng: &mut TestRng,
    points: usize,
) -> (
    Vec<ProposalPrediction>,
    Vec<Option<melidar::codec::BoxTargets>>,
) {
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for i in 0..points {
        let t = melidar::codec::BoxTargets {
            bin_x: i % 12,
            bin_y: (i * 5 + 1) % 12,
            bin_yaw: (i * 7 + 2) % 12,
            res_x: rng.uniform(-0.5, 0.5),
            res_y: rng.uniform(-0.5, 0.5),
            res_yaw: rng.uniform(-0.5, 0.5),
            res_z: rng.uniform(-1.0, 1.0),
            res_h: rng.uniform(-0.3, 0.3),
            res_w: rng.uniform(-0.3, 0.3),
            res_l: rng.uniform(-0.3, 0.3),
        };
        let foreground = i % 3 != 2;
        preds.push(ProposalPrediction {
            box_pred: BoxPrediction {
                bin_x: random_bin(rng, 12, t.bin_x),
                bin_y: random_bin(rng, 12, t.bin_y),
                bin_yaw: random_bin(rng, 12, t.bin_yaw),
                res_z: rng.uniform(-2.0, 2.0),
                res_h: rng.uniform(-1.0, 1.0),
                res_w: rng.uniform(-1.0, 1.0),
                res_l: rng.uniform(-1.0, 1.0),
            },
            foreground: rng.uniform(0.05, 0.95),
        });
        targets.push(foreground.then_some(t));
    }
    (preds, targets)
}

#[test]
fn a09_loss_gradients_match_finite_differences() {
    let h = 1e-5;
    let focal = FocalParams::default();
    let beta = 1.0;
    let mut rng = TestRng::new(9);
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;

    while checked < 1000 {
        let (preds, targets) = random_instance(&mut rng, 3);
        let base = proposal_loss(&preds, &targets, focal, beta).unwrap();

        // flatten all inputs, bump each coordinate, and compare the analytic
        // gradient against the central difference of the total loss
        let mut flat = Vec::new();
        for p in &preds {
            flatten_box(&p.box_pred, &mut flat);
            flat.push(p.foreground);
        }
        let mut flat_grad = Vec::new();
        for g in &base.grads {
            flatten_box(&g.box_pred, &mut flat_grad);
            flat_grad.push(g.foreground);
        }
        let rebuild = |values: &[f64]| {
            let mut it = values.iter();
            let rebuilt: Vec<ProposalPrediction> = preds
                .iter()
                .map(|p| {
                    let box_pred = unflatten_box(&p.box_pred, &mut it);
                    ProposalPrediction {
                        box_pred,
                        foreground: *it.next().unwrap(),
                    }
                })
                .collect();
            rebuilt
        };
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += h;
            let mut minus = flat.clone();
            minus[i] -= h;
            let lp = proposal_loss(&rebuild(&plus), &targets, focal, beta)
                .unwrap()
                .total;
            let lm = proposal_loss(&rebuild(&minus), &targets, focal, beta)
                .unwrap()
                .total;
            let fd = (lp - lm) / (2.0 * h);
            let g = flat_grad[i];
            if fd == 0.0 && g == 0.0 {
                checked += 1;
                continue;
            }
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "coordinate {i}: analytic {g} vs fd {fd}");
            checked += 1;
        }

        // refinement stage: confidences plus canonical box regression
        let confidences: Vec<f64> = (0..4).map(|_| rng.uniform(0.05, 0.95)).collect();
        let labels = vec![true, false, true, true];
        let pos_preds: Vec<BoxPrediction> =
            preds.iter().take(2).map(|p| p.box_pred.clone()).collect();
        let pos_targets: Vec<melidar::codec::BoxTargets> =
            targets.iter().flatten().copied().take(2).collect();
        let refine = refine_loss(&confidences, &labels, &pos_preds, &pos_targets, beta).unwrap();
        for i in 0..confidences.len() {
            let mut plus = confidences.clone();
            plus[i] += h;
            let mut minus = confidences.clone();
            minus[i] -= h;
            let lp = refine_loss(&plus, &labels, &pos_preds, &pos_targets, beta)
                .unwrap()
                .total;
            let lm = refine_loss(&minus, &labels, &pos_preds, &pos_targets, beta)
                .unwrap()
                .total;
            let fd = (lp - lm) / (2.0 * h);
            let g = refine.confidence_grads[i];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "confidence {i}: analytic {g} vs fd {fd}");
            checked += 1;
        }

        // composition is the plain sum
        let composed = overall_loss(base.total, refine.total);
        assert_eq!(composed, base.total + refine.total);

        // standalone pieces
        let p = rng.uniform(0.05, 0.95);
        let (_, g) = focal_loss(p, true, focal.alpha, focal.gamma).unwrap();
        let fd = (focal_loss(p + h, true, focal.alpha, focal.gamma).unwrap().0
            - focal_loss(p - h, true, focal.alpha, focal.gamma).unwrap().0)
            / (2.0 * h);
        assert!((g - fd).abs() / g.abs().max(fd.abs()) < 1e-4);
        let x = rng.uniform(-3.0, 3.0);
        let (_, g) = smooth_l1(x, beta);
        if (x.abs() - beta).abs() > 10.0 * h {
            let fd = (smooth_l1(x + h, beta).0 - smooth_l1(x - h, beta).0) / (2.0 * h);
            assert!((g - fd).abs() < 1e-4);
        }
        checked += 2;
    }
    println!(
        "acceptance 09 PASS: {checked} gradient coordinates within 1e-4 of finite differences (worst {worst:.2e})"
    );
}

#[test]
fn a10_geometry_round_trips() {
    // canonical transform round trip on 1000 points
    let mut rng = TestRng::new(10);
    let proposal = OrientedBox3D::new(
        Vector3::new(7.0, -3.0, 0.4),
        BoxSize::new(1.5, 1.8, 4.0),
        1.1,
        0,
    );
    let points: Vec<Vector3<f64>> = (0..1000)
        .map(|_| {
            Vector3::new(
                rng.uniform(-50.0, 50.0),
                rng.uniform(-50.0, 50.0),
                rng.uniform(-5.0, 5.0),
            )
        })
        .collect();
    let back = canonical_inverse(&canonical_transform(&points, &proposal), &proposal);
    let worst = points
        .iter()
        .zip(back.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "canonical round trip error {worst}");

    // every simulated echo lies on its beam ray, at a range inside its bin
    let out = toy_sim(1, 10240);
    let bin_width = out.frame.bin_width;
    let view = ToyScene::toy_view();
    let (arrays, _) = melidar::polar::setup_views(&[view]).unwrap();
    let mut checked = 0;
    for g in out.frame.iter_groups() {
        let dir = beam_direction(
            arrays[0].elevations[g.pixel.0],
            arrays[0].azimuths[g.pixel.1],
        );
        for echo in &g.echoes {
            let range = echo.point.norm();
            let angle = dir.cross(&echo.point).norm().atan2(dir.dot(&echo.point));
            assert!(angle.abs() < 1e-6, "echo off its beam by {angle} rad");
            let bin = (range / bin_width).floor();
            assert!(
                range >= bin * bin_width && range < (bin + 1.0) * bin_width,
                "range {range} outside its bin"
            );
            checked += 1;
        }
    }
    assert!(checked > 0);
    println!(
        "acceptance 10 PASS: canonical round trip {worst:.2e} m; {checked} echoes on-ray and in-bin"
    );
}

#[test]
fn a11_performance_envelope() {
    // frontal view, 225 x 1400 detectors, N = 10240, K = 3, sparse path only
    let scene = ToyScene::default_layout();
    let view = ToyScene::frontal_view();
    let cam = melidar::polar::CameraModel::from_config(&view.camera).unwrap();
    let inputs = scene.render(&cam);
    let cfg = SimConfig {
        bins: 10240,
        sbr: 2.0,
        views: vec![view],
        ..SimConfig::default()
    };
    let start = Instant::now();
    let out = simulate(&cfg, &[inputs.view()]).expect("frontal simulation runs");
    let elapsed = start.elapsed();
    assert_eq!((out.frame.height, out.frame.width), (225, 1400));
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "simulation took {elapsed:?}, budget 10 s"
    );
    assert!(out.frame.point_count() > 5_000, "suspiciously sparse output");

    // memory ceiling: peak RSS stays under 2 GB (the dense histogram alone
    // would need 225 * 1400 * 10240 * 4 bytes = 12 GB)
    let dense_bytes: u64 = 225 * 1400 * 10240 * 4;
    assert!(dense_bytes > 2 * 1024 * 1024 * 1024u64);
    let read_kb = |field: &str| {
        std::fs::read_to_string("/proc/self/status")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with(field))
                    .and_then(|l| l.split_whitespace().nth(1).map(str::to_string))
            })
            .and_then(|v| v.parse::<u64>().ok())
    };
    // some kernels omit VmHWM; the resident size right after the run is the
    // next best witness
    let (label, mem_kb) = match read_kb("VmHWM:") {
        Some(kb) => ("peak RSS", Some(kb)),
        None => ("RSS", read_kb("VmRSS:")),
    };
    if let Some(kb) = mem_kb {
        assert!(
            kb < 2 * 1024 * 1024,
            "{label} {kb} kB exceeds the 2 GB ceiling"
        );
    }
    // write outputs to prove the full pipeline completes
    let dir = std::env::temp_dir().join("melidar_acceptance_frontal");
    write_outputs(&out, &dir).unwrap();
    std::fs::remove_dir_all(&dir).ok();
    println!(
        "acceptance 11 PASS: 225x1400 @ N=10240 in {:.2}s, {} points, {} {} MB",
        elapsed.as_secs_f64(),
        out.frame.point_count(),
        label,
        mem_kb.map(|kb| kb / 1024).unwrap_or(0)
    );
}
