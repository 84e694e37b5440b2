//! Pure numeric training losses with analytic gradients. No autodiff: every
//! gradient is derived by hand and checked against finite differences in the
//! test suite.

use crate::codec::BoxTargets;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("loss input out of domain: {0}")]
pub struct DomainError(pub String);

/// Focal loss parameters; the customary defaults are alpha 0.25, gamma 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

/// Focal loss `-alpha_t (1 - p_t)^gamma ln(p_t)` and its gradient dL/dp.
/// `p` is the predicted foreground probability, strictly inside (0, 1).
pub fn focal_loss(p: f64, y: bool, alpha: f64, gamma: f64) -> Result<(f64, f64), DomainError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(DomainError(format!("probability {p} not in (0, 1)")));
    }
    let (pt, sign) = if y { (p, 1.0) } else { (1.0 - p, -1.0) };
    let at = if y { alpha } else { 1.0 - alpha };
    let loss = -at * (1.0 - pt).powf(gamma) * pt.ln();
    let dpt = at * (1.0 - pt).powf(gamma - 1.0) * (gamma * pt.ln() - (1.0 - pt) / pt);
    Ok((loss, sign * dpt))
}

/// Binary cross-entropy and gradient. Evaluated branchwise so a perfectly
/// confident correct prediction scores exactly zero.
pub fn binary_cross_entropy(p: f64, y: bool) -> Result<(f64, f64), DomainError> {
    if y {
        if !(p > 0.0 && p <= 1.0) {
            return Err(DomainError(format!("probability {p} not in (0, 1]")));
        }
        Ok((-p.ln(), -1.0 / p))
    } else {
        if !(0.0..1.0).contains(&p) {
            return Err(DomainError(format!("probability {p} not in [0, 1)")));
        }
        Ok((-(1.0 - p).ln(), 1.0 / (1.0 - p)))
    }
}

/// Multi-class cross-entropy `-ln(probs[target])` over already-normalized
/// probabilities. The gradient is non-zero only at the target entry.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<(f64, Vec<f64>), DomainError> {
    let pt = *probs
        .get(target)
        .ok_or_else(|| DomainError(format!("target bin {target} out of {}", probs.len())))?;
    if !(pt > 0.0 && pt <= 1.0) {
        return Err(DomainError(format!(
            "probability {pt} at target bin not in (0, 1]"
        )));
    }
    let mut grad = vec![0.0; probs.len()];
    grad[target] = -1.0 / pt;
    Ok((-pt.ln(), grad))
}

/// Smooth L1: quadratic within `beta` of zero, linear outside, C1 at the
/// junction. Returns loss and gradient.
pub fn smooth_l1(x: f64, beta: f64) -> (f64, f64) {
    if x.abs() < beta {
        (0.5 * x * x / beta, x / beta)
    } else {
        (x.abs() - 0.5 * beta, x.signum())
    }
}

/// Predicted bin distribution plus in-bin residual for one binned quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct BinPrediction {
    pub probs: Vec<f64>,
    pub residual: f64,
}

impl BinPrediction {
    fn zeros_like(&self) -> BinPrediction {
        BinPrediction {
            probs: vec![0.0; self.probs.len()],
            residual: 0.0,
        }
    }
}

/// Predicted box regression outputs for one point or proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxPrediction {
    pub bin_x: BinPrediction,
    pub bin_y: BinPrediction,
    pub bin_yaw: BinPrediction,
    pub res_z: f64,
    pub res_h: f64,
    pub res_w: f64,
    pub res_l: f64,
}

impl BoxPrediction {
    pub fn zeros_like(&self) -> BoxPrediction {
        BoxPrediction {
            bin_x: self.bin_x.zeros_like(),
            bin_y: self.bin_y.zeros_like(),
            bin_yaw: self.bin_yaw.zeros_like(),
            res_z: 0.0,
            res_h: 0.0,
            res_w: 0.0,
            res_l: 0.0,
        }
    }

    fn scale(&mut self, s: f64) {
        for bin in [&mut self.bin_x, &mut self.bin_y, &mut self.bin_yaw] {
            for g in &mut bin.probs {
                *g *= s;
            }
            bin.residual *= s;
        }
        self.res_z *= s;
        self.res_h *= s;
        self.res_w *= s;
        self.res_l *= s;
    }
}

/// Bin classification + residual losses of one box prediction:
/// `(l_bin, l_res, gradient)`.
pub fn box_loss(
    pred: &BoxPrediction,
    target: &BoxTargets,
    beta: f64,
) -> Result<(f64, f64, BoxPrediction), DomainError> {
    let mut grad = pred.zeros_like();
    let mut l_bin = 0.0;
    for (bin_pred, bin_target, res_target, g) in [
        (&pred.bin_x, target.bin_x, target.res_x, &mut grad.bin_x),
        (&pred.bin_y, target.bin_y, target.res_y, &mut grad.bin_y),
        (&pred.bin_yaw, target.bin_yaw, target.res_yaw, &mut grad.bin_yaw),
    ] {
        let (ce, ce_grad) = cross_entropy(&bin_pred.probs, bin_target)?;
        let (l1, l1_grad) = smooth_l1(bin_pred.residual - res_target, beta);
        l_bin += ce + l1;
        g.probs = ce_grad;
        g.residual = l1_grad;
    }
    let mut l_res = 0.0;
    for (value, target_value, g) in [
        (pred.res_z, target.res_z, &mut grad.res_z),
        (pred.res_h, target.res_h, &mut grad.res_h),
        (pred.res_w, target.res_w, &mut grad.res_w),
        (pred.res_l, target.res_l, &mut grad.res_l),
    ] {
        let (l1, l1_grad) = smooth_l1(value - target_value, beta);
        l_res += l1;
        *g = l1_grad;
    }
    Ok((l_bin, l_res, grad))
}

/// Per-point proposal-stage prediction: box regression plus foreground
/// probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalPrediction {
    pub box_pred: BoxPrediction,
    pub foreground: f64,
}

#[derive(Debug, Clone)]
pub struct ProposalLoss {
    /// `l_reg + l_focal`.
    pub total: f64,
    pub l_reg: f64,
    pub l_focal: f64,
    /// Same shapes as the inputs.
    pub grads: Vec<ProposalPrediction>,
}

/// Proposal-generation loss: bin+residual regression averaged over foreground
/// points plus focal segmentation loss averaged over all points. A point is
/// foreground iff it has encoded targets. With no foreground points the
/// regression term is zero.
pub fn proposal_loss(
    preds: &[ProposalPrediction],
    targets: &[Option<BoxTargets>],
    focal: FocalParams,
    beta: f64,
) -> Result<ProposalLoss, DomainError> {
    if preds.len() != targets.len() {
        return Err(DomainError(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let n = preds.len();
    let n_pos = targets.iter().filter(|t| t.is_some()).count();
    let mut l_reg = 0.0;
    let mut l_focal = 0.0;
    let mut grads: Vec<ProposalPrediction> = Vec::with_capacity(n);
    for (pred, target) in preds.iter().zip(targets.iter()) {
        let mut g = ProposalPrediction {
            box_pred: pred.box_pred.zeros_like(),
            foreground: 0.0,
        };
        let (fl, fl_grad) = focal_loss(pred.foreground, target.is_some(), focal.alpha, focal.gamma)?;
        l_focal += fl;
        g.foreground = fl_grad / n as f64;
        if let Some(t) = target {
            let (l_bin, l_res, mut box_grad) = box_loss(&pred.box_pred, t, beta)?;
            l_reg += l_bin + l_res;
            box_grad.scale(1.0 / n_pos as f64);
            g.box_pred = box_grad;
        }
        grads.push(g);
    }
    if n > 0 {
        l_focal /= n as f64;
    }
    if n_pos > 0 {
        l_reg /= n_pos as f64;
    }
    Ok(ProposalLoss {
        total: l_reg + l_focal,
        l_reg,
        l_focal,
        grads,
    })
}

#[derive(Debug, Clone)]
pub struct RefineLoss {
    /// `classification + regression`.
    pub total: f64,
    pub classification: f64,
    pub regression: f64,
    pub confidence_grads: Vec<f64>,
    pub box_grads: Vec<BoxPrediction>,
}

/// Refinement loss: confidence cross-entropy averaged over all anchors plus
/// bin+residual regression averaged over positive proposals (predictions and
/// targets already in canonical coordinates).
pub fn refine_loss(
    confidences: &[f64],
    labels: &[bool],
    positive_preds: &[BoxPrediction],
    positive_targets: &[BoxTargets],
    beta: f64,
) -> Result<RefineLoss, DomainError> {
    if confidences.is_empty() {
        return Err(DomainError("refine loss needs at least one anchor".into()));
    }
    if confidences.len() != labels.len() {
        return Err(DomainError(format!(
            "{} confidences vs {} labels",
            confidences.len(),
            labels.len()
        )));
    }
    if positive_preds.len() != positive_targets.len() {
        return Err(DomainError(format!(
            "{} positive predictions vs {} targets",
            positive_preds.len(),
            positive_targets.len()
        )));
    }
    let n_a = confidences.len() as f64;
    let mut classification = 0.0;
    let mut confidence_grads = Vec::with_capacity(confidences.len());
    for (&score, &label) in confidences.iter().zip(labels.iter()) {
        let (l, g) = binary_cross_entropy(score, label)?;
        classification += l;
        confidence_grads.push(g / n_a);
    }
    classification /= n_a;

    let n_p = positive_preds.len();
    let mut regression = 0.0;
    let mut box_grads = Vec::with_capacity(n_p);
    for (pred, target) in positive_preds.iter().zip(positive_targets.iter()) {
        let (l_bin, l_res, mut g) = box_loss(pred, target, beta)?;
        regression += l_bin + l_res;
        g.scale(1.0 / n_p as f64);
        box_grads.push(g);
    }
    if n_p > 0 {
        regression /= n_p as f64;
    }
    Ok(RefineLoss {
        total: classification + regression,
        classification,
        regression,
        confidence_grads,
        box_grads,
    })
}

/// Total training loss: proposal stage plus refinement stage.
pub fn overall_loss(l_pg: f64, l_refine: f64) -> f64 {
    l_pg + l_refine
}
