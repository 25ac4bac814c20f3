//! Quality-aware classification loss, box losses, and assembly of the
//! per-layer, per-branch training objective.
//!
//! Positive cells are trained with binary cross-entropy against a soft
//! quality target `s`; negative cells get a focal term `-p^γ log(1-p)`.
//! Quality targets come from the assignment (IoU for one-to-one, matching
//! score for one-to-many) and are constants for backprop.

use alloc::format;
use alloc::vec::Vec;

use crate::assignment::{o2m_assign, o2o_assign, AssignmentResult, CostWeights, GroundTruth, MatchConfig};
use crate::error::{Error, Result};
use crate::geometry::{giou_with_grad, l1_box, xyxy_grad_to_cxcywh};
use crate::model::{BranchGrad, BranchOutput, ModelOutput};
use crate::numerics::Tensor2D;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    pub lambda_cls: f64,
    pub lambda_l1: f64,
    pub lambda_giou: f64,
    /// Multiplier on the mean auxiliary loss.
    pub aux_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 1.5,
            lambda_cls: 1.0,
            lambda_l1: 5.0,
            lambda_giou: 2.0,
            aux_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Config(format!(
                "loss.gamma must be positive, got {}",
                self.gamma
            )));
        }
        let named = [
            ("lambda_cls", self.lambda_cls),
            ("lambda_l1", self.lambda_l1),
            ("lambda_giou", self.lambda_giou),
            ("aux_weight", self.aux_weight),
        ];
        for (name, v) in named {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "loss.{name} must be a finite nonnegative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Loss value and derivative w.r.t. `p`.
///
/// The derivative is evaluated at the clamped probability.
pub fn vfl_plus(p: f64, s: f64, positive: bool, gamma: f64) -> (f64, f64) {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let ln_p = libm::log(p);
    let ln_q = libm::log1p(-p);
    if positive {
        let v = -s * ln_p - (1.0 - s) * ln_q;
        (v.max(0.0), -s / p + (1.0 - s) / (1.0 - p))
    } else {
        let pg = libm::pow(p, gamma);
        let v = -pg * ln_q;
        let d = -gamma * libm::pow(p, gamma - 1.0) * ln_q + pg / (1.0 - p);
        (v, d)
    }
}

fn check_pairs(n_queries: usize, gts: &[GroundTruth], num_classes: usize, a: &AssignmentResult) -> Result<()> {
    for pair in &a.pairs {
        if pair.query >= n_queries || pair.gt >= gts.len() {
            return Err(Error::Validation(format!(
                "pair (query {}, gt {}) out of range for {n_queries} queries and {} ground truths",
                pair.query,
                pair.gt,
                gts.len()
            )));
        }
        if gts[pair.gt].class_index >= num_classes {
            return Err(Error::Validation(format!(
                "ground-truth class {} out of range for {num_classes} classes",
                gts[pair.gt].class_index
            )));
        }
    }
    Ok(())
}

/// Sum of `vfl_plus` over all query x class cells divided by
/// `max(1, positives)`, with its gradient w.r.t. `probs`.
pub fn classification_loss(
    probs: &Tensor2D,
    gts: &[GroundTruth],
    assignment: &AssignmentResult,
    cfg: &LossConfig,
) -> Result<(f64, Tensor2D)> {
    let (nq, nc) = probs.shape();
    check_pairs(nq, gts, nc, assignment)?;
    // NaN marks a negative cell, otherwise the cell's quality target
    let mut target = Tensor2D::filled(nq, nc, f64::NAN);
    for pair in &assignment.pairs {
        target.set(pair.query, gts[pair.gt].class_index, pair.quality);
    }
    let norm = assignment.num_positives().max(1) as f64;
    let mut grad = Tensor2D::zeros(nq, nc);
    let mut total = 0.0;
    for i in 0..probs.len() {
        let s = target.data()[i];
        let (v, d) = vfl_plus(probs.data()[i], s, !s.is_nan(), cfg.gamma);
        total += v;
        grad.data_mut()[i] = d / norm;
    }
    Ok((total / norm, grad))
}

/// Unweighted box-loss parts: mean L1 and mean `1 - GIoU` over positives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoxLossParts {
    pub l1: f64,
    pub giou: f64,
}

/// Mean over positives of `λ_l1·L1 + λ_giou·(1 - GIoU)` and the gradient of
/// that weighted sum w.r.t. `boxes` (`n_queries x 4`, center form).
pub fn box_loss(
    boxes: &Tensor2D,
    gts: &[GroundTruth],
    assignment: &AssignmentResult,
    cfg: &LossConfig,
) -> Result<(BoxLossParts, Tensor2D)> {
    if boxes.cols() != 4 {
        return Err(Error::Dimension {
            op: "box_loss",
            left: boxes.shape(),
            right: (boxes.rows(), 4),
        });
    }
    check_pairs(boxes.rows(), gts, usize::MAX, assignment)?;
    let mut grad = Tensor2D::zeros(boxes.rows(), 4);
    let n = assignment.num_positives();
    if n == 0 {
        return Ok((BoxLossParts::default(), grad));
    }
    let inv = 1.0 / n as f64;
    let mut parts = BoxLossParts::default();
    for pair in &assignment.pairs {
        let r = boxes.row(pair.query);
        let pred = crate::geometry::BoxCXCYWH::from_array([r[0], r[1], r[2], r[3]]);
        let gt = &gts[pair.gt].bbox;
        let (l1, dl1) = l1_box(&pred, gt);
        let (g, dg_xyxy, _) = giou_with_grad(&pred.to_xyxy(), &gt.to_xyxy());
        let dg = xyxy_grad_to_cxcywh(dg_xyxy);
        parts.l1 += l1 * inv;
        parts.giou += (1.0 - g) * inv;
        let row = grad.row_mut(pair.query);
        for k in 0..4 {
            row[k] += inv * (cfg.lambda_l1 * dl1[k] - cfg.lambda_giou * dg[k]);
        }
    }
    Ok((parts, grad))
}

/// Loss terms of one branch at one layer. `cls`, `l1` and `giou` are
/// unweighted; `total` applies the configured weights.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BranchLoss {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    pub total: f64,
}

impl BranchLoss {
    pub fn box_total(&self, cfg: &LossConfig) -> f64 {
        cfg.lambda_l1 * self.l1 + cfg.lambda_giou * self.giou
    }
}

/// Loss of one branch output and the gradient of `scale * total`.
pub fn branch_loss(
    out: &BranchOutput,
    gts: &[GroundTruth],
    assignment: &AssignmentResult,
    cfg: &LossConfig,
    scale: f64,
) -> Result<(BranchLoss, BranchGrad)> {
    let (cls, mut d_probs) = classification_loss(&out.probs, gts, assignment, cfg)?;
    let (parts, mut d_boxes) = box_loss(&out.boxes, gts, assignment, cfg)?;
    d_probs.scale(scale * cfg.lambda_cls);
    d_boxes.scale(scale);
    let loss = BranchLoss {
        cls,
        l1: parts.l1,
        giou: parts.giou,
        total: cfg.lambda_cls * cls + cfg.lambda_l1 * parts.l1 + cfg.lambda_giou * parts.giou,
    };
    Ok((loss, BranchGrad { d_probs, d_boxes }))
}

/// Per-layer assignments: `[layer][branch]`, branch 0 one-to-one.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignments {
    pub layers: Vec<Vec<AssignmentResult>>,
}

/// Assigns every branch at every layer on that branch's own predictions:
/// Hungarian for the primary branch, `strategies[i]` for auxiliary `i`.
pub fn assign_all(
    out: &ModelOutput,
    gts: &[GroundTruth],
    cost: &CostWeights,
    strategies: &[MatchConfig],
) -> Result<Assignments> {
    let mut layers = Vec::with_capacity(out.layers.len());
    for branches in &out.layers {
        if branches.len() != 1 + strategies.len() {
            return Err(Error::Config(format!(
                "{} branches but {} auxiliary strategies",
                branches.len(),
                strategies.len()
            )));
        }
        let mut row = Vec::with_capacity(branches.len());
        row.push(o2o_assign(&branches[0].predictions(), gts, cost)?);
        for (b, s) in branches[1..].iter().zip(strategies) {
            row.push(o2m_assign(&b.predictions(), gts, s)?);
        }
        layers.push(row);
    }
    Ok(Assignments { layers })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// `[layer][branch]`, branch 0 primary.
    pub layers: Vec<Vec<BranchLoss>>,
    /// Sum over layers of `primary + aux_weight * mean(aux)`.
    pub grand_total: f64,
}

impl LossReport {
    /// Primary-branch loss summed over layers.
    pub fn primary(&self) -> BranchLoss {
        self.branch_sum(0)
    }

    /// Loss of one branch summed over layers.
    pub fn branch_sum(&self, branch: usize) -> BranchLoss {
        let mut acc = BranchLoss::default();
        for l in &self.layers {
            let b = &l[branch];
            acc.cls += b.cls;
            acc.l1 += b.l1;
            acc.giou += b.giou;
            acc.total += b.total;
        }
        acc
    }

    pub fn n_branches(&self) -> usize {
        self.layers.first().map_or(0, |l| l.len())
    }
}

/// Full objective over all layers and branches with upstream gradients for
/// [`crate::model::Model::backward`].
pub fn total_loss(
    out: &ModelOutput,
    gts: &[GroundTruth],
    assignments: &Assignments,
    cfg: &LossConfig,
) -> Result<(LossReport, Vec<Vec<Option<BranchGrad>>>)> {
    cfg.validate()?;
    if assignments.layers.len() != out.layers.len() {
        return Err(Error::Config(format!(
            "{} layers of output but {} layers of assignments",
            out.layers.len(),
            assignments.layers.len()
        )));
    }
    let mut report = LossReport {
        layers: Vec::with_capacity(out.layers.len()),
        grand_total: 0.0,
    };
    let mut grads = Vec::with_capacity(out.layers.len());
    for (branches, assigned) in out.layers.iter().zip(&assignments.layers) {
        if branches.len() != assigned.len() {
            return Err(Error::Config(format!(
                "{} branches but {} assignments",
                branches.len(),
                assigned.len()
            )));
        }
        let n_aux = branches.len() - 1;
        let aux_scale = if n_aux == 0 { 0.0 } else { cfg.aux_weight / n_aux as f64 };
        let mut losses = Vec::with_capacity(branches.len());
        let mut layer_grads = Vec::with_capacity(branches.len());
        for (b, (o, a)) in branches.iter().zip(assigned).enumerate() {
            let scale = if b == 0 { 1.0 } else { aux_scale };
            let (l, g) = branch_loss(o, gts, a, cfg, scale)?;
            losses.push(l);
            layer_grads.push(Some(g));
        }
        let aux_sum: f64 = losses[1..].iter().map(|l| l.total).sum();
        report.grand_total += losses[0].total + aux_scale * aux_sum;
        report.layers.push(losses);
        grads.push(layer_grads);
    }
    Ok((report, grads))
}
