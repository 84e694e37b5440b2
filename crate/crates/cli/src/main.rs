//! `melidar`: multi-echo LiDAR simulation and detection-data toolkit CLI.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use melidar::codec::CodecFileConfig;
use melidar::eval::Difficulty;
use melidar::model::{CameraConfig, SimConfig};
use melidar::polar::CameraModel;
use melidar::sim::{self, ViewInput};
use melidar::tensor::{self, ClassMap, Tensor};
use melidar::toy::ToyScene;
use ndarray::{Array2, ArrayD, IxDyn};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "melidar", version, about = "Multi-echo LiDAR simulator and detection toolkit")]
struct Cli {
    /// Worker threads (0 = all cores). Outputs are identical for any value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize multi-echo measurements from RGB/depth/normal images.
    Simulate(SimulateArgs),
    /// Write the bundled procedural scene (inputs, config, labels).
    GenScene(GenSceneArgs),
    /// Rearrange a point cloud and ambient image into a LiDAR image.
    EncodeImage(EncodeImageArgs),
    /// Split a multi-echo cloud into penetrable/impenetrable point sets.
    Reassign(ReassignArgs),
    /// Encode bin-based box regression targets against anchor points.
    EncodeTargets(EncodeTargetsArgs),
    /// Evaluate detections against ground truth (average precision).
    Eval(EvalArgs),
    /// Print a container's header and, for clouds, frame statistics.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    rgb: PathBuf,
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    normals: PathBuf,
    /// Simulator configuration (JSON). Omitted: frontal-view defaults with a
    /// camera fitted to the input images.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Override the configured signal-background ratio.
    #[arg(long)]
    sbr: Option<f64>,
    /// Override the configured number of time bins.
    #[arg(long)]
    bins: Option<u32>,
    /// Override the configured random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the dense reference path instead of the sparse fast path.
    #[arg(long)]
    dense: bool,
}

#[derive(Args)]
struct GenSceneArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Scene layout seed (0 = the fixed default layout).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Emit the full-resolution 225 x 1400 frontal view instead of the small
    /// 32 x 64 test view.
    #[arg(long)]
    frontal: bool,
}

#[derive(Args)]
struct EncodeImageArgs {
    /// Point cloud container `[H, W, K, 5]`.
    #[arg(long)]
    cloud: PathBuf,
    /// Ambient image container `[H, W]`.
    #[arg(long)]
    ambient: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReassignArgs {
    /// Point cloud container `[H, W, K, 5]`.
    #[arg(long)]
    cloud: PathBuf,
    /// Output directory for `penetrable.melt` and `impenetrable.melt`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeTargetsArgs {
    /// Ground-truth label file (one JSON record per box).
    #[arg(long)]
    labels: PathBuf,
    /// Anchor points container `[M, 3]`, one anchor per label record.
    #[arg(long)]
    anchors: PathBuf,
    /// Codec configuration (JSON); omitted: built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    det: PathBuf,
    #[arg(long)]
    class: String,
    #[arg(long)]
    iou: f64,
    /// easy | moderate | hard; omitted: all objects within 200 m.
    #[arg(long)]
    difficulty: Option<String>,
    /// `json` for a machine-readable report.
    #[arg(long)]
    report: Option<String>,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if cli.threads > 0 {
        pool = pool.num_threads(cli.threads);
    }
    let pool = pool.build().context("building thread pool")?;
    pool.install(|| match cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::GenScene(args) => run_gen_scene(args),
        Command::EncodeImage(args) => run_encode_image(args),
        Command::Reassign(args) => run_reassign(args),
        Command::EncodeTargets(args) => run_encode_targets(args),
        Command::Eval(args) => run_eval(args),
        Command::Inspect(args) => run_inspect(args),
    })
}

fn read_f32_nd(path: &Path, ndim: usize) -> Result<ArrayD<f64>> {
    let (tensor, _) = tensor::read_tensor(path).with_context(|| format!("reading {path:?}"))?;
    let arr = match tensor {
        Tensor::F32(a) => a.mapv(f64::from),
        Tensor::U8(a) => a.mapv(|v| f64::from(v) / 255.0),
        Tensor::U32(a) => a.mapv(f64::from),
    };
    if arr.ndim() != ndim {
        bail!(
            "{path:?}: expected a {ndim}-dimensional tensor, found shape {:?}",
            arr.shape()
        );
    }
    Ok(arr)
}

fn to_f32_tensor(a: ArrayD<f64>) -> Tensor {
    Tensor::F32(a.mapv(|v| v as f32))
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let rgb = read_f32_nd(&args.rgb, 3)?;
    let depth = read_f32_nd(&args.depth, 2)?;
    let normals = read_f32_nd(&args.normals, 3)?;

    let mut cfg: SimConfig = match &args.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).with_context(|| format!("reading {path:?}"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {path:?}"))?
        }
        None => SimConfig::default(),
    };
    if cfg.views.is_empty() {
        let mut view = ToyScene::frontal_view();
        view.camera = CameraConfig::fit(
            view.fov_v_deg,
            view.fov_h_deg,
            rgb.shape()[1],
            rgb.shape()[0],
        );
        cfg.views = vec![view];
    }
    if let Some(sbr) = args.sbr {
        cfg.sbr = sbr;
    }
    if let Some(bins) = args.bins {
        cfg.bins = bins;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }

    let rgb3 = rgb.into_dimensionality::<ndarray::Ix3>()?;
    let depth2 = depth.into_dimensionality::<ndarray::Ix2>()?;
    let normals3 = normals.into_dimensionality::<ndarray::Ix3>()?;
    let inputs = [ViewInput {
        rgb: rgb3.view(),
        depth: depth2.view(),
        normals: normals3.view(),
    }];
    let out = if args.dense {
        sim::simulate_dense(&cfg, &inputs)?
    } else {
        sim::simulate(&cfg, &inputs)?
    };
    sim::write_outputs(&out, &args.out_dir)?;
    eprintln!(
        "wrote {} ({} x {}, {} points, threshold {:.3})",
        args.out_dir.display(),
        out.frame.height,
        out.frame.width,
        out.frame.point_count(),
        out.threshold
    );
    Ok(())
}

fn run_gen_scene(args: GenSceneArgs) -> Result<()> {
    let scene = if args.seed == 0 {
        ToyScene::default_layout()
    } else {
        ToyScene::randomized(args.seed)
    };
    let view = if args.frontal {
        ToyScene::frontal_view()
    } else {
        ToyScene::toy_view()
    };
    let camera = CameraModel::from_config(&view.camera)?;
    let inputs = scene.render(&camera);

    let mut cfg = SimConfig {
        sbr: 1.0,
        kernel_sigma: 1.5,
        views: vec![view],
        ..SimConfig::default()
    };
    let summary = sim::rate_summary(&cfg, &[inputs.view()])?;
    cfg.sbr = (0.9 * melidar::photon::MAX_RATE - summary.max_ambient) / summary.max_signal;

    std::fs::create_dir_all(&args.out_dir)?;
    let dir = &args.out_dir;
    tensor::write_tensor(
        dir.join("rgb.melt"),
        &to_f32_tensor(inputs.rgb.clone().into_dyn()),
        &serde_json::json!({"kind": "rgb", "channels": ["r", "g", "b"]}),
    )?;
    tensor::write_tensor(
        dir.join("depth.melt"),
        &to_f32_tensor(inputs.depth.clone().into_dyn()),
        &serde_json::json!({"kind": "depth", "unit": "m"}),
    )?;
    tensor::write_tensor(
        dir.join("normals.melt"),
        &to_f32_tensor(inputs.normals.clone().into_dyn()),
        &serde_json::json!({"kind": "normals"}),
    )?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let classes = ClassMap::automotive();
    tensor::write_labels(dir.join("labels.jsonl"), &scene.object_boxes(), &classes)?;
    eprintln!("wrote scene to {}", dir.display());
    Ok(())
}

fn run_encode_image(args: EncodeImageArgs) -> Result<()> {
    let cloud = read_f32_nd(&args.cloud, 4)?.into_dimensionality::<ndarray::Ix4>()?;
    let ambient = read_f32_nd(&args.ambient, 2)?.into_dimensionality::<ndarray::Ix2>()?;
    if cloud.shape()[..2] != ambient.shape()[..2] {
        bail!(
            "cloud grid {:?} does not match ambient grid {:?}",
            &cloud.shape()[..2],
            ambient.shape()
        );
    }
    let frame = melidar::extract::frame_from_cloud(&cloud.view(), Some(&ambient), 0.0);
    let image = melidar::model::LidarImage::from_frame(&frame);
    tensor::write_tensor(
        &args.out,
        &to_f32_tensor(image.data.into_dyn()),
        &serde_json::json!({"kind": "lidar_image", "channels": "ambient + reflectance per echo"}),
    )?;
    Ok(())
}

fn run_reassign(args: ReassignArgs) -> Result<()> {
    let cloud = read_f32_nd(&args.cloud, 4)?.into_dimensionality::<ndarray::Ix4>()?;
    let frame = melidar::extract::frame_from_cloud(&cloud.view(), None, 0.0);
    let (penetrable, impenetrable) = melidar::ops::reassign(&frame);
    std::fs::create_dir_all(&args.out)?;
    for (name, points) in [
        ("penetrable.melt", &penetrable),
        ("impenetrable.melt", &impenetrable),
    ] {
        let mut data = Array2::zeros((points.len(), 4));
        for (i, p) in points.iter().enumerate() {
            data[[i, 0]] = p.position.x;
            data[[i, 1]] = p.position.y;
            data[[i, 2]] = p.position.z;
            data[[i, 3]] = p.reflectance;
        }
        tensor::write_tensor(
            args.out.join(name),
            &to_f32_tensor(data.into_dyn()),
            &serde_json::json!({"kind": "point_set", "columns": ["x", "y", "z", "reflectance"]}),
        )?;
    }
    eprintln!(
        "penetrable: {} points, impenetrable: {} points",
        penetrable.len(),
        impenetrable.len()
    );
    Ok(())
}

fn run_encode_targets(args: EncodeTargetsArgs) -> Result<()> {
    let file_cfg: CodecFileConfig = match &args.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).with_context(|| format!("reading {path:?}"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {path:?}"))?
        }
        None => CodecFileConfig::default(),
    };
    let codec = file_cfg.codec()?;
    let mut classes = ClassMap::automotive();
    let boxes = tensor::read_labels(&args.labels, &mut classes)?;
    let anchors = read_f32_nd(&args.anchors, 2)?;
    if anchors.shape()[1] != 3 {
        bail!("anchors must be [M, 3], found {:?}", anchors.shape());
    }
    if anchors.shape()[0] != boxes.len() {
        bail!(
            "{} anchors vs {} label records; they must pair one-to-one",
            anchors.shape()[0],
            boxes.len()
        );
    }
    let mut out = Array2::zeros((boxes.len(), 10));
    for (i, b) in boxes.iter().enumerate() {
        let class = classes
            .name(b.class_id)
            .context("class id missing from class map")?;
        let mean = file_cfg
            .mean_size(class)
            .with_context(|| format!("no mean size configured for class {class:?}"))?;
        let anchor = nalgebra::Vector3::new(anchors[[i, 0]], anchors[[i, 1]], anchors[[i, 2]]);
        let t = melidar::codec::encode(b, &anchor, mean, &codec)
            .with_context(|| format!("encoding label record {}", i + 1))?;
        for (j, v) in [
            t.bin_x as f64,
            t.res_x,
            t.bin_y as f64,
            t.res_y,
            t.bin_yaw as f64,
            t.res_yaw,
            t.res_z,
            t.res_h,
            t.res_w,
            t.res_l,
        ]
        .into_iter()
        .enumerate()
        {
            out[[i, j]] = v;
        }
    }
    tensor::write_tensor(
        &args.out,
        &to_f32_tensor(out.into_dyn()),
        &serde_json::json!({
            "kind": "box_targets",
            "columns": [
                "bin_x", "res_x", "bin_y", "res_y", "bin_yaw", "res_yaw",
                "res_z", "res_h", "res_w", "res_l"
            ],
            "search_range": file_cfg.search_range,
            "bin_size": file_cfg.bin_size,
            "orientation_bins": file_cfg.orientation_bins,
        }),
    )?;
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let difficulty = match &args.difficulty {
        None => None,
        Some(s) => Some(
            Difficulty::parse(s)
                .with_context(|| format!("unknown difficulty {s:?} (easy|moderate|hard)"))?,
        ),
    };
    let mut classes = ClassMap::automotive();
    let gt = tensor::read_labels(&args.gt, &mut classes)?;
    let det = tensor::read_labels(&args.det, &mut classes)?;
    let class_id = classes
        .id(&args.class)
        .with_context(|| format!("class {:?} appears in neither file", args.class))?;
    let result = melidar::eval::average_precision(&det, &gt, class_id, args.iou, difficulty);
    match args.report.as_deref() {
        Some("json") => println!(
            "{}",
            serde_json::json!({
                "class": args.class,
                "iou_threshold": args.iou,
                "difficulty": args.difficulty,
                "ap": if result.ap.is_nan() { serde_json::Value::Null } else { result.ap.into() },
                "num_gt": result.num_gt,
                "num_detections": result.num_detections,
                "true_positives": result.true_positives,
                "false_positives": result.false_positives,
                "ignored_detections": result.ignored_detections,
            })
        ),
        Some(other) => bail!("unknown report format {other:?}"),
        None => {
            println!(
                "class {} iou {:.2} difficulty {}",
                args.class,
                args.iou,
                args.difficulty.as_deref().unwrap_or("all")
            );
            if result.ap.is_nan() {
                println!("AP: undefined (no ground truth)");
            } else {
                println!("AP: {:.4}", result.ap);
            }
            println!(
                "gt {} det {} tp {} fp {} ignored {}",
                result.num_gt,
                result.num_detections,
                result.true_positives,
                result.false_positives,
                result.ignored_detections
            );
        }
    }
    Ok(())
}

fn cloud_stats(cloud: &ndarray::ArrayViewD<f32>) -> String {
    let k = cloud.shape()[2];
    let mut counts = vec![0usize; k];
    let mut min_r = f32::INFINITY;
    let mut max_r = f32::NEG_INFINITY;
    for r in 0..cloud.shape()[0] {
        for c in 0..cloud.shape()[1] {
            for e in 0..k {
                if cloud[IxDyn(&[r, c, e, 4])] != 0.0 {
                    counts[e] += 1;
                    let refl = cloud[IxDyn(&[r, c, e, 3])];
                    min_r = min_r.min(refl);
                    max_r = max_r.max(refl);
                }
            }
        }
    }
    let total: usize = counts.iter().sum();
    let mut s = format!("points: {total}, per echo: {counts:?}");
    if total > 0 {
        s.push_str(&format!(", reflectance [{min_r:.4}, {max_r:.4}]"));
    }
    s
}

fn run_inspect(args: InspectArgs) -> Result<()> {
    let (tensor, meta) = tensor::read_tensor(&args.path)?;
    println!("path: {}", args.path.display());
    println!("dims: {:?}", tensor.shape());
    println!(
        "dtype: {}",
        match tensor.dtype() {
            melidar::tensor::Dtype::F32 => "f32",
            melidar::tensor::Dtype::U32 => "u32",
            melidar::tensor::Dtype::U8 => "u8",
        }
    );
    println!("meta: {meta}");
    if let Tensor::F32(a) = &tensor {
        if a.ndim() == 4 && a.shape()[3] == 5 {
            println!("{}", cloud_stats(&a.view()));
        }
    }
    Ok(())
}
