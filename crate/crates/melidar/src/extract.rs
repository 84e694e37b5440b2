//! Spatial neighborhood aggregation, thresholded top-K echo selection,
//! back-projection to 3D and frame assembly.

use crate::model::{ConfigError, Echo, EchoGroup, LidarImage, MultiEchoFrame};
use crate::polar::SensorArray;
use nalgebra::{Isometry3, Vector3};
use ndarray::{Array2, Array3};

/// Normalized Gaussian aggregation kernel modelling the spatial spread of a
/// laser beam over neighboring detector pixels.
#[derive(Debug, Clone)]
pub struct GaussianKernel {
    size: usize,
    sigma: f64,
    weights: Array2<f64>,
}

impl GaussianKernel {
    pub fn new(size: usize, sigma: f64) -> Result<Self, ConfigError> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(ConfigError(format!("kernel size {size} must be odd")));
        }
        if !(sigma > 0.0) {
            return Err(ConfigError("kernel sigma must be positive".into()));
        }
        let half = (size / 2) as isize;
        let mut weights = Array2::zeros((size, size));
        let mut sum = 0.0;
        for kh in -half..=half {
            for kw in -half..=half {
                let w = (-((kh * kh + kw * kw) as f64) / (2.0 * sigma * sigma)).exp();
                weights[[(kh + half) as usize, (kw + half) as usize]] = w;
                sum += w;
            }
        }
        weights.mapv_inplace(|w| w / sum);
        Ok(GaussianKernel {
            size,
            sigma,
            weights,
        })
    }

    /// The 1x1 identity kernel.
    pub fn delta() -> Self {
        GaussianKernel::new(1, 1.0).expect("delta kernel is valid")
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn half(&self) -> isize {
        (self.size / 2) as isize
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn weight(&self, kh: isize, kw: isize) -> f64 {
        self.weights[[(kh + self.half()) as usize, (kw + self.half()) as usize]]
    }
}

/// Photon histogram of one pixel stored sparsely: `(bin, value)` pairs sorted
/// by bin, absent bins implicitly zero.
pub type SparseHistogram = Vec<(u32, f64)>;

/// Weighted spatial aggregation of sparse per-pixel histograms (borders
/// zero-padded). The temporal axis is untouched: bins mix only with the same
/// bin of neighboring pixels.
pub fn aggregate_neighborhood(
    hists: &[SparseHistogram],
    height: usize,
    width: usize,
    kernel: &GaussianKernel,
) -> Vec<SparseHistogram> {
    assert_eq!(hists.len(), height * width);
    let half = kernel.half();
    let mut out = Vec::with_capacity(hists.len());
    let mut bins: Vec<u32> = Vec::new();
    for r in 0..height as isize {
        for c in 0..width as isize {
            bins.clear();
            for kh in -half..=half {
                for kw in -half..=half {
                    let (nr, nc) = (r + kh, c + kw);
                    if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
                        continue;
                    }
                    bins.extend(
                        hists[nr as usize * width + nc as usize]
                            .iter()
                            .map(|&(b, _)| b),
                    );
                }
            }
            bins.sort_unstable();
            bins.dedup();
            let mut hist: SparseHistogram = Vec::with_capacity(bins.len());
            for &bin in &bins {
                let mut acc = 0.0;
                for kh in -half..=half {
                    for kw in -half..=half {
                        let (nr, nc) = (r + kh, c + kw);
                        if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
                            continue;
                        }
                        let neighbor = &hists[nr as usize * width + nc as usize];
                        if let Ok(i) = neighbor.binary_search_by_key(&bin, |&(b, _)| b) {
                            acc += kernel.weight(kh, kw) * neighbor[i].1;
                        }
                    }
                }
                hist.push((bin, acc));
            }
            out.push(hist);
        }
    }
    out
}

/// An aggregated histogram peak selected as an echo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoCandidate {
    pub pixel: (usize, usize),
    pub bin: u32,
    pub strength: f64,
}

/// Pick at most `k` bins with aggregated strength `>= tau`, strongest first,
/// suppressing secondary peaks within `nms_window` bins of a kept one. Ties
/// break toward the smaller bin index.
pub fn select_topk(
    candidates: &[(u32, f64)],
    k: usize,
    tau: f64,
    nms_window: u32,
    pixel: (usize, usize),
) -> Vec<EchoCandidate> {
    let mut survivors: Vec<(u32, f64)> = candidates
        .iter()
        .copied()
        .filter(|&(_, s)| s >= tau)
        .collect();
    survivors.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut picked: Vec<EchoCandidate> = Vec::with_capacity(k);
    for (bin, strength) in survivors {
        if picked.len() == k {
            break;
        }
        let suppressed = picked
            .iter()
            .any(|p| bin.abs_diff(p.bin) <= nms_window);
        if !suppressed {
            picked.push(EchoCandidate {
                pixel,
                bin,
                strength,
            });
        }
    }
    picked
}

/// Back-project a time bin to 3D: bin centers map to range
/// `(bin + 0.5) * bin_width` along the beam direction.
pub fn backproject(bin: u32, bin_width: f64, direction: &Vector3<f64>) -> Vector3<f64> {
    (bin as f64 + 0.5) * bin_width * direction
}

/// Detection threshold guaranteeing (to probability `eps_per_pixel` per
/// pixel) that an aggregated ambient-only bin never crosses it.
///
/// The aggregated value at one bin is `sum_k w_k X_k` with independent
/// `X_k ~ Poisson(lambda_k)`, `lambda_k <= lambda_max`. A Chernoff bound
/// gives `P(W >= tau) <= exp(lambda_max * sum_k (e^{t w_k} - 1) - t tau)`
/// for every `t > 0`; the returned threshold is minimized over `t` and
/// accounts for all `bins` bins of a pixel.
pub fn ambient_tail_threshold(
    kernel: &GaussianKernel,
    lambda_max: f64,
    bins: u32,
    eps_per_pixel: f64,
) -> f64 {
    if lambda_max <= 0.0 {
        // no ambient photons at all; any positive count is signal
        return f64::MIN_POSITIVE;
    }
    let log_budget = ((bins.max(1) as f64) / eps_per_pixel).ln();
    let mut best = f64::INFINITY;
    // log-spaced grid over t; the bound is smooth so a coarse sweep suffices
    for i in 0..400 {
        let t = 0.25 * (1.03f64).powi(i);
        let mgf: f64 = kernel
            .weights()
            .iter()
            .map(|&w| (t * w).exp_m1())
            .sum::<f64>()
            * lambda_max;
        let tau = (mgf + log_budget) / t;
        if tau < best {
            best = tau;
        }
    }
    best
}

/// Result of turning selected candidates into domain objects.
#[derive(Debug, Clone)]
pub struct AssembledFrame {
    pub frame: MultiEchoFrame,
    pub lidar_image: LidarImage,
}

/// Build the echo-group frame and LiDAR image from per-pixel selected
/// candidates.
///
/// Per-point reflectance is the candidate strength normalized by the mean
/// strength over all selected bins of the image. Channel 0 of the LiDAR
/// image is the ambient image; channels `1..=K` carry per-echo reflectance
/// with zeros for missing echoes.
pub fn assemble_frame(
    selected: &[Vec<EchoCandidate>],
    ambient: &Array2<f64>,
    array: &SensorArray,
    bin_width: f64,
    max_echoes: usize,
    sensor_pose: Isometry3<f64>,
) -> AssembledFrame {
    let (height, width) = (array.rows(), array.cols());
    assert_eq!(selected.len(), height * width);

    let mut sum = 0.0;
    let mut count = 0usize;
    for cands in selected {
        for c in cands {
            sum += c.strength;
            count += 1;
        }
    }
    let inv_mean = if count == 0 || sum == 0.0 {
        0.0
    } else {
        count as f64 / sum
    };

    let mut groups = Vec::with_capacity(height * width);
    let mut image = LidarImage::zeros(height, width, max_echoes);
    for r in 0..height {
        for c in 0..width {
            let pixel_ambient = ambient[[r, c]];
            image.data[[r, c, 0]] = pixel_ambient;
            let cands = &selected[r * width + c];
            let dir = array.direction(r, c);
            let mut echoes = Vec::with_capacity(cands.len());
            for (e, cand) in cands.iter().take(max_echoes).enumerate() {
                let reflectance = cand.strength * inv_mean;
                echoes.push(Echo {
                    point: backproject(cand.bin, bin_width, &dir),
                    reflectance,
                });
                image.data[[r, c, 1 + e]] = reflectance;
            }
            groups.push(EchoGroup {
                echoes,
                ambient: pixel_ambient,
                pixel: (r, c),
            });
        }
    }
    AssembledFrame {
        frame: MultiEchoFrame {
            height,
            width,
            groups,
            sensor_pose,
            bin_width,
            max_echoes,
        },
        lidar_image: image,
    }
}

/// Flatten a frame into the `[H, W, K, 5]` point-cloud tensor
/// `(x, y, z, reflectance, valid)`.
pub fn cloud_tensor(frame: &MultiEchoFrame) -> ndarray::Array4<f64> {
    let mut out =
        ndarray::Array4::zeros((frame.height, frame.width, frame.max_echoes, 5));
    for g in frame.iter_groups() {
        let (r, c) = g.pixel;
        for (e, echo) in g.echoes.iter().enumerate() {
            out[[r, c, e, 0]] = echo.point.x;
            out[[r, c, e, 1]] = echo.point.y;
            out[[r, c, e, 2]] = echo.point.z;
            out[[r, c, e, 3]] = echo.reflectance;
            out[[r, c, e, 4]] = 1.0;
        }
    }
    out
}

/// Rebuild a frame from a `[H, W, K, 5]` cloud tensor and `[H, W]` ambient
/// image, as written by the simulator.
pub fn frame_from_cloud(
    cloud: &ndarray::ArrayView4<f64>,
    ambient: Option<&Array2<f64>>,
    bin_width: f64,
) -> MultiEchoFrame {
    let (height, width, k, _) = cloud.dim();
    let mut groups = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let mut echoes = Vec::new();
            for e in 0..k {
                if cloud[[r, c, e, 4]] != 0.0 {
                    echoes.push(Echo {
                        point: Vector3::new(
                            cloud[[r, c, e, 0]],
                            cloud[[r, c, e, 1]],
                            cloud[[r, c, e, 2]],
                        ),
                        reflectance: cloud[[r, c, e, 3]],
                    });
                }
            }
            groups.push(EchoGroup {
                echoes,
                ambient: ambient.map_or(0.0, |a| a[[r, c]]),
                pixel: (r, c),
            });
        }
    }
    MultiEchoFrame {
        height,
        width,
        groups,
        sensor_pose: Isometry3::identity(),
        bin_width,
        max_echoes: k,
    }
}

/// Assemble the `[H, W, K]` reflectance image from a frame.
pub fn reflectance_tensor(frame: &MultiEchoFrame) -> Array3<f64> {
    let mut out = Array3::zeros((frame.height, frame.width, frame.max_echoes));
    for g in frame.iter_groups() {
        for (e, echo) in g.echoes.iter().enumerate() {
            out[[g.pixel.0, g.pixel.1, e]] = echo.reflectance;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_kernel_is_identity() {
        let kernel = GaussianKernel::delta();
        let hists = vec![
            vec![(3u32, 2.0)],
            vec![],
            vec![(1, 5.0), (7, 1.0)],
            vec![(0, 4.0)],
        ];
        let out = aggregate_neighborhood(&hists, 2, 2, &kernel);
        assert_eq!(out, hists);
    }

    #[test]
    fn kernel_rejects_even_size() {
        assert!(GaussianKernel::new(4, 1.0).is_err());
        assert!(GaussianKernel::new(3, 0.0).is_err());
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = GaussianKernel::new(5, 1.3).unwrap();
        let sum: f64 = k.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for kh in -2..=2isize {
            for kw in -2..=2isize {
                assert!((k.weight(kh, kw) - k.weight(-kh, -kw)).abs() < 1e-15);
                assert!(k.weight(kh, kw) >= 0.0);
            }
        }
    }

    #[test]
    fn uniform_kernel_spreads_spike() {
        // a 3x3 uniform kernel (sigma -> infinity approximated by huge sigma)
        // spreads a 9-photon spike as 1.0 onto each of the 9 neighbors
        let kernel = GaussianKernel::new(3, 1e9).unwrap();
        let mut hists = vec![SparseHistogram::new(); 9];
        hists[4] = vec![(5u32, 9.0)]; // center pixel of the 3x3 grid
        let out = aggregate_neighborhood(&hists, 3, 3, &kernel);
        for hist in &out {
            assert_eq!(hist.len(), 1);
            let (bin, v) = hist[0];
            assert_eq!(bin, 5);
            assert!((v - 1.0).abs() < 1e-9, "got {v}");
        }
    }

    #[test]
    fn aggregation_is_spatial_only() {
        // two spikes at the same pixel in different bins stay separate
        let kernel = GaussianKernel::new(3, 0.8).unwrap();
        let mut hists = vec![SparseHistogram::new(); 9];
        hists[4] = vec![(2u32, 4.0), (9u32, 6.0)];
        let out = aggregate_neighborhood(&hists, 3, 3, &kernel);
        let center = &out[4];
        assert_eq!(center.len(), 2);
        assert_eq!(center[0].0, 2);
        assert_eq!(center[1].0, 9);
        let w = kernel.weight(0, 0);
        assert!((center[0].1 - 4.0 * w).abs() < 1e-12);
        assert!((center[1].1 - 6.0 * w).abs() < 1e-12);
    }

    #[test]
    fn interior_aggregation_conserves_mass() {
        // away from borders the kernel sums to one, so total mass is conserved
        let kernel = GaussianKernel::new(3, 1.0).unwrap();
        let (h, w) = (7, 7);
        let mut hists = vec![SparseHistogram::new(); h * w];
        hists[3 * w + 3] = vec![(4u32, 5.0)];
        let out = aggregate_neighborhood(&hists, h, w, &kernel);
        let total: f64 = out.iter().flat_map(|h| h.iter().map(|&(_, v)| v)).sum();
        assert!((total - 5.0).abs() < 5.0 * 1e-6, "total {total}");
    }

    #[test]
    fn topk_enumeration_example() {
        // counts [0, 5, 0, 3, 1] with K = 2, tau = 2, window 0
        let cands = vec![(0u32, 0.0), (1, 5.0), (2, 0.0), (3, 3.0), (4, 1.0)];
        let picked = select_topk(&cands, 2, 2.0, 0, (0, 0));
        assert_eq!(picked.len(), 2);
        assert_eq!((picked[0].bin, picked[0].strength), (1, 5.0));
        assert_eq!((picked[1].bin, picked[1].strength), (3, 3.0));
    }

    #[test]
    fn all_below_threshold_yields_nothing() {
        let cands = vec![(0u32, 1.0), (1, 1.5)];
        assert!(select_topk(&cands, 3, 2.0, 0, (0, 0)).is_empty());
    }

    #[test]
    fn ties_break_to_smaller_bin() {
        let cands = vec![(0u32, 4.0), (1, 4.0)];
        let picked = select_topk(&cands, 1, 0.0, 0, (0, 0));
        assert_eq!(picked.len(), 1);
        assert_eq!(picked[0].bin, 0);
    }

    #[test]
    fn nms_suppresses_adjacent_bins() {
        let cands = vec![(10u32, 9.0), (11, 8.0), (12, 7.0), (20, 5.0)];
        let picked = select_topk(&cands, 3, 0.0, 3, (0, 0));
        let bins: Vec<u32> = picked.iter().map(|p| p.bin).collect();
        assert_eq!(bins, vec![10, 20]);
    }

    #[test]
    fn backproject_first_bin_center() {
        // bin width 1000/10240 m puts bin 0 at 0.048828125 m
        let bin_width = 1000.0 / 10240.0;
        let p = backproject(0, bin_width, &Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(p.x, 0.048828125);
        assert_eq!((p.y, p.z), (0.0, 0.0));
    }

    #[test]
    fn backproject_axis_ray() {
        let p = backproject(4, 1.0, &Vector3::new(1.0, 0.0, 0.0));
        assert!((p - Vector3::new(4.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn backproject_same_pixel_is_collinear() {
        let dir = crate::polar::beam_direction(0.3, -0.8);
        let a = backproject(100, 0.1, &dir);
        let b = backproject(250, 0.1, &dir);
        assert!(a.cross(&b).norm() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn topk_selection_invariants(
            strengths in proptest::collection::vec((0u32..64, 0.0f64..20.0), 0..24),
            k in 1usize..5,
            tau in 0.0f64..8.0,
            window in 0u32..4,
        ) {
            let picked = select_topk(&strengths, k, tau, window, (0, 0));
            proptest::prop_assert!(picked.len() <= k);
            for pair in picked.windows(2) {
                proptest::prop_assert!(pair[0].strength >= pair[1].strength);
            }
            for (i, a) in picked.iter().enumerate() {
                proptest::prop_assert!(a.strength >= tau);
                for b in picked.iter().skip(i + 1) {
                    proptest::prop_assert!(
                        a.bin.abs_diff(b.bin) > window,
                        "bins {} and {} violate the suppression window {window}",
                        a.bin,
                        b.bin
                    );
                }
            }
            // the strongest surviving bin is always kept
            if let Some(&(bin, strength)) = strengths
                .iter()
                .filter(|&&(_, s)| s >= tau)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            {
                proptest::prop_assert!(!picked.is_empty());
                proptest::prop_assert_eq!(picked[0].strength, strength);
                let _ = bin;
            }
        }

        #[test]
        fn aggregation_matches_dense_convolution_oracle(
            counts in proptest::collection::vec(0u32..30, 4 * 5 * 6),
            sigma in 0.5f64..3.0,
        ) {
            // brute-force oracle: materialize the [4, 5, 6] histogram and
            // convolve it directly
            let (h, w, bins) = (4usize, 5usize, 6usize);
            let kernel = GaussianKernel::new(3, sigma).unwrap();
            let mut hists = vec![SparseHistogram::new(); h * w];
            for r in 0..h {
                for c in 0..w {
                    for n in 0..bins {
                        let v = counts[(r * w + c) * bins + n];
                        if v > 0 {
                            hists[r * w + c].push((n as u32, v as f64));
                        }
                    }
                }
            }
            let sparse = aggregate_neighborhood(&hists, h, w, &kernel);
            for r in 0..h as isize {
                for c in 0..w as isize {
                    for n in 0..bins {
                        let mut oracle = 0.0;
                        for kh in -1..=1isize {
                            for kw in -1..=1isize {
                                let (nr, nc) = (r + kh, c + kw);
                                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                                    continue;
                                }
                                let raw =
                                    counts[((nr as usize * w) + nc as usize) * bins + n] as f64;
                                oracle += kernel.weight(kh, kw) * raw;
                            }
                        }
                        let hist = &sparse[(r as usize) * w + c as usize];
                        let got = hist
                            .binary_search_by_key(&(n as u32), |&(b, _)| b)
                            .map(|i| hist[i].1)
                            .unwrap_or(0.0);
                        proptest::prop_assert!(
                            (got - oracle).abs() < 1e-12,
                            "pixel ({r}, {c}) bin {n}: {got} vs oracle {oracle}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn tail_threshold_bounds_ambient_spikes() {
        // empirical check of the bound: sample many aggregated ambient-only
        // values and confirm none crosses tau
        let kernel = GaussianKernel::new(5, 1.0).unwrap();
        let lambda = 3.0;
        let tau = ambient_tail_threshold(&kernel, lambda, 256, 1e-9);
        assert!(tau.is_finite() && tau > lambda);

        let field = crate::photon::RateField::new(
            Array2::zeros((64, 64)),
            Array2::from_elem((64, 64), crate::photon::RateField::NO_SIGNAL),
            Array2::from_elem((64, 64), lambda),
            64,
        );
        let mut worst = 0.0f64;
        for r in 2..62usize {
            for c in 2..62usize {
                for bin in 0..64u32 {
                    let mut acc = 0.0;
                    for kh in -2..=2isize {
                        for kw in -2..=2isize {
                            acc += kernel.weight(kh, kw)
                                * field.sample_bin(
                                    11,
                                    0,
                                    (r as isize + kh) as usize,
                                    (c as isize + kw) as usize,
                                    bin,
                                ) as f64;
                        }
                    }
                    worst = worst.max(acc);
                }
            }
        }
        assert!(
            worst < tau,
            "aggregated ambient spike {worst} crossed tau {tau}"
        );
    }

    #[test]
    fn assemble_empty_pixel() {
        let array = crate::polar::build_sensor_array(
            (-0.1, 0.1),
            (-0.1, 0.1),
            0.1,
            0.1,
        )
        .unwrap();
        let selected = vec![Vec::new(); array.rows() * array.cols()];
        let ambient = Array2::from_elem((array.rows(), array.cols()), 0.4);
        let out = assemble_frame(
            &selected,
            &ambient,
            &array,
            0.1,
            3,
            Isometry3::identity(),
        );
        assert!(out.frame.iter_groups().all(|g| g.is_empty()));
        assert!(out
            .lidar_image
            .data
            .slice(ndarray::s![.., .., 1..])
            .iter()
            .all(|&v| v == 0.0));
        assert!((out.lidar_image.ambient(0, 0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn reflectance_normalized_by_mean_strength() {
        // strengths {2, 6} have mean 4, reflectances {0.5, 1.5}
        let array = crate::polar::build_sensor_array(
            (-0.05, 0.05),
            (-0.1, 0.1),
            0.1,
            0.1,
        )
        .unwrap();
        assert_eq!((array.rows(), array.cols()), (1, 2));
        let selected = vec![
            vec![EchoCandidate {
                pixel: (0, 0),
                bin: 10,
                strength: 2.0,
            }],
            vec![EchoCandidate {
                pixel: (0, 1),
                bin: 20,
                strength: 6.0,
            }],
        ];
        let ambient = Array2::zeros((1, 2));
        let out = assemble_frame(&selected, &ambient, &array, 0.5, 3, Isometry3::identity());
        assert!((out.frame.group(0, 0).echoes[0].reflectance - 0.5).abs() < 1e-12);
        assert!((out.frame.group(0, 1).echoes[0].reflectance - 1.5).abs() < 1e-12);
        assert!((out.lidar_image.reflectance(0, 0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cloud_tensor_round_trip() {
        let array = crate::polar::build_sensor_array(
            (-0.05, 0.05),
            (-0.1, 0.1),
            0.1,
            0.1,
        )
        .unwrap();
        let selected = vec![
            vec![
                EchoCandidate {
                    pixel: (0, 0),
                    bin: 10,
                    strength: 6.0,
                },
                EchoCandidate {
                    pixel: (0, 0),
                    bin: 30,
                    strength: 2.0,
                },
            ],
            vec![],
        ];
        let ambient = Array2::from_elem((1, 2), 0.25);
        let out = assemble_frame(&selected, &ambient, &array, 0.5, 3, Isometry3::identity());
        let cloud = cloud_tensor(&out.frame);
        let back = frame_from_cloud(&cloud.view(), Some(&ambient), 0.5);
        assert_eq!(back.groups, out.frame.groups);
    }
}
