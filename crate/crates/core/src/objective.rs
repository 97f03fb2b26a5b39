//! Soft-IoU losses and hard-IoU metrics.
//!
//! The language model is supervised in order: prediction `t` against the
//! mask of phrase `t`. The language-free baseline emits a fixed number of
//! masks and each ground truth is matched to one of them by minimum-cost
//! assignment on `1 - softIoU`; unmatched predictions cost nothing.

use crate::error::{Error, Result};
use crate::hungarian::{hungarian_assign, Assignment, CostMatrix};
use crate::mask::Mask;
use crate::tensor::Tensor;

/// Denominator guard for empty masks.
pub const SOFT_IOU_EPS: f64 = 1e-6;

/// Binarization threshold for metrics; a pixel at exactly the threshold is
/// foreground.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `Σpg / (Σp + Σg − Σpg + ε)` for two same-shape maps with values in
/// `[0, 1]`. Differentiable in both arguments.
pub fn soft_iou_maps(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "soft_iou",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let inter = pred.mul(target)?.sum();
    let union = pred
        .sum()
        .add(&target.sum())?
        .sub(&inter)?
        .add_scalar(SOFT_IOU_EPS);
    inter.div(&union)
}

/// Soft IoU of a probability map `[1, S, S]` against a binary mask.
pub fn soft_iou(pred: &Tensor, gt: &Mask) -> Result<Tensor> {
    soft_iou_maps(pred, &gt.to_tensor())
}

/// Mean over timesteps of `1 − softIoU(pred_t, gt_t)`.
pub fn sequence_loss(preds: &[Tensor], gts: &[Mask]) -> Result<Tensor> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(
            "sequence_loss",
            format!(
                "{} predictions for {} ground truths",
                preds.len(),
                gts.len()
            ),
        ));
    }
    if preds.is_empty() {
        return Err(Error::invalid("sequence_loss", "empty sequence"));
    }
    let mut total: Option<Tensor> = None;
    for (p, g) in preds.iter().zip(gts) {
        let term = soft_iou(p, g)?.scale(-1.0).add_scalar(1.0);
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    Ok(total.expect("non-empty").scale(1.0 / preds.len() as f64))
}

/// Baseline loss over an unordered fixed-length prediction sequence.
/// Returns the loss (mean over ground truths of `1 − softIoU` of the
/// matched pair) and the matching that produced it.
pub fn baseline_loss(preds: &[Tensor], gts: &[Mask]) -> Result<(Tensor, Assignment)> {
    if preds.len() < gts.len() {
        return Err(Error::invalid(
            "baseline_loss",
            format!(
                "sequence length {} is shorter than the {} ground truths",
                preds.len(),
                gts.len()
            ),
        ));
    }
    if gts.is_empty() {
        return Err(Error::invalid("baseline_loss", "no ground truths"));
    }
    let targets: Vec<Tensor> = gts.iter().map(Mask::to_tensor).collect();
    let mut scores = Vec::with_capacity(gts.len());
    let mut costs = Vec::with_capacity(gts.len() * preds.len());
    for t in &targets {
        let row = preds
            .iter()
            .map(|p| soft_iou_maps(p, t))
            .collect::<Result<Vec<_>>>()?;
        costs.extend(row.iter().map(|s| 1.0 - s.data()[0]));
        scores.push(row);
    }
    let assignment = hungarian_assign(&CostMatrix::new(gts.len(), preds.len(), costs)?)?;
    let mut total: Option<Tensor> = None;
    for (g, &p) in assignment.gt_to_pred.iter().enumerate() {
        let term = scores[g][p].scale(-1.0).add_scalar(1.0);
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    let loss = total.expect("non-empty").scale(1.0 / gts.len() as f64);
    Ok((loss, assignment))
}

/// Hard IoU of one pair; empty vs. empty counts as a perfect match.
pub fn pair_iou(inter: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Running Instance-IoU / Overall-IoU over any number of pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IouAccumulator {
    pub pairs: usize,
    pub iou_sum: f64,
    pub inter_sum: u64,
    pub union_sum: u64,
}

impl IouAccumulator {
    pub fn add_parts(&mut self, inter: u64, union: u64) {
        self.pairs += 1;
        self.iou_sum += pair_iou(inter, union);
        self.inter_sum += inter;
        self.union_sum += union;
    }

    /// Thresholds `pred` and records its overlap with `gt`.
    pub fn add_pair(&mut self, pred: &Tensor, gt: &Mask, threshold: f64) -> Result<()> {
        let bin = Mask::from_probabilities(pred, threshold)?;
        let (inter, union) = bin.overlap(gt)?;
        self.add_parts(inter, union);
        Ok(())
    }

    pub fn merge(&mut self, other: &IouAccumulator) {
        self.pairs += other.pairs;
        self.iou_sum += other.iou_sum;
        self.inter_sum += other.inter_sum;
        self.union_sum += other.union_sum;
    }

    /// Mean of per-pair IoU.
    pub fn instance_iou(&self) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            self.iou_sum / self.pairs as f64
        }
    }

    /// Cumulative intersection over cumulative union.
    pub fn overall_iou(&self) -> f64 {
        pair_iou(self.inter_sum, self.union_sum)
    }
}

/// Metrics over explicitly paired predictions and ground truths.
pub fn metrics<'a>(
    pairs: impl IntoIterator<Item = (&'a Tensor, &'a Mask)>,
    threshold: f64,
) -> Result<IouAccumulator> {
    let mut acc = IouAccumulator::default();
    for (p, g) in pairs {
        acc.add_pair(p, g, threshold)?;
    }
    Ok(acc)
}
