//! Segmentation losses (differentiable, on the graph) and evaluation
//! metrics (plain functions over binary masks).

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor4, Var};

/// Additive smoothing in the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;

/// Weights and smoothing of the BCE + soft-Dice training loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub bce_weight: f64,
    pub dice_weight: f64,
    pub smooth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            bce_weight: 0.5,
            dice_weight: 0.5,
            smooth: DICE_SMOOTH,
        }
    }
}

/// Scalar loss node plus its component values.
#[derive(Clone, Copy, Debug)]
pub struct LossValue {
    pub total: Var,
    pub value: f64,
    pub bce: f64,
    pub dice: f64,
}

fn check_pair<T: Element>(g: &Graph<T>, a: Var, b: Var, op: &'static str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: g.shape(a),
            rhs: g.shape(b),
        });
    }
    Ok(())
}

fn check_binary<T: Element>(t: &Tensor4<T>) -> Result<()> {
    if let Some(v) = t.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(Error::Contract(format!("target must be binary, found value {v}")));
    }
    Ok(())
}

/// `-mean(t·ln p + (1-t)·ln(1-p))`; `t` may be soft.
pub fn bce_with_probs<T: Element>(g: &mut Graph<T>, p: Var, t: Var) -> Result<Var> {
    check_pair(g, p, t, "bce")?;
    let ln_p = g.ln(p);
    let one_minus_p = g.rsub_scalar(T::one(), p);
    let ln_q = g.ln(one_minus_p);
    let one_minus_t = g.rsub_scalar(T::one(), t);
    let a = g.mul(t, ln_p)?;
    let b = g.mul(one_minus_t, ln_q)?;
    let s = g.add(a, b)?;
    let m = g.mean(s);
    Ok(g.scale(m, -T::one()))
}

/// `1 - (2Σpt + ε) / (Σp + Σt + ε)` over the whole batch.
pub fn soft_dice_with_probs<T: Element>(g: &mut Graph<T>, p: Var, t: Var, smooth: f64) -> Result<Var> {
    check_pair(g, p, t, "dice")?;
    let pt = g.mul(p, t)?;
    let inter = g.sum(pt);
    let sp = g.sum(p);
    let st = g.sum(t);
    let num = g.scale(inter, T::lit(2.0));
    let num = g.add_scalar(num, T::lit(smooth));
    let den = g.add(sp, st)?;
    let den = g.add_scalar(den, T::lit(smooth));
    let ratio = g.div(num, den)?;
    Ok(g.rsub_scalar(T::one(), ratio))
}

/// Symmetric soft Dice between two probability fields,
/// `1 - (2Σpq + ε) / (Σp² + Σq² + ε)`. It vanishes exactly when `p == q`
/// and reduces to the usual Dice overlap when both fields are binary.
pub fn consistency_dice<T: Element>(g: &mut Graph<T>, p: Var, q: Var, smooth: f64) -> Result<Var> {
    check_pair(g, p, q, "consistency_dice")?;
    let pq = g.mul(p, q)?;
    let inter = g.sum(pq);
    let pp = g.mul(p, p)?;
    let spp = g.sum(pp);
    let qq = g.mul(q, q)?;
    let sqq = g.sum(qq);
    let num = g.scale(inter, T::lit(2.0));
    let num = g.add_scalar(num, T::lit(smooth));
    let den = g.add(spp, sqq)?;
    let den = g.add_scalar(den, T::lit(smooth));
    let ratio = g.div(num, den)?;
    Ok(g.rsub_scalar(T::one(), ratio))
}

/// Mean binary cross-entropy of `σ(logits)` against a binary target.
pub fn bce_loss<T: Element>(g: &mut Graph<T>, logits: Var, target: Var) -> Result<Var> {
    check_pair(g, logits, target, "bce_loss")?;
    check_binary(g.value(target))?;
    let p = g.sigmoid(logits);
    bce_with_probs(g, p, target)
}

/// Soft Dice loss of `σ(logits)` against a binary target.
pub fn dice_loss<T: Element>(g: &mut Graph<T>, logits: Var, target: Var, smooth: f64) -> Result<Var> {
    check_pair(g, logits, target, "dice_loss")?;
    check_binary(g.value(target))?;
    let p = g.sigmoid(logits);
    soft_dice_with_probs(g, p, target, smooth)
}

/// `w_bce·BCE + w_dice·Dice` sharing one sigmoid.
pub fn combined_loss_with<T: Element>(g: &mut Graph<T>, logits: Var, target: Var, cfg: &LossConfig) -> Result<LossValue> {
    check_pair(g, logits, target, "combined_loss")?;
    check_binary(g.value(target))?;
    let p = g.sigmoid(logits);
    let bce = bce_with_probs(g, p, target)?;
    let dice = soft_dice_with_probs(g, p, target, cfg.smooth)?;
    weigh(g, bce, dice, cfg)
}

/// Equal-weight BCE + soft Dice with the default smoothing.
pub fn combined_loss<T: Element>(g: &mut Graph<T>, logits: Var, target: Var) -> Result<LossValue> {
    combined_loss_with(g, logits, target, &LossConfig::default())
}

/// Same BCE + Dice family against a soft target probability field `q`.
/// Gradients flow into both `p` and `q`.
pub fn consistency_loss<T: Element>(g: &mut Graph<T>, p: Var, q: Var, cfg: &LossConfig) -> Result<LossValue> {
    let bce = bce_with_probs(g, p, q)?;
    let dice = consistency_dice(g, p, q, cfg.smooth)?;
    weigh(g, bce, dice, cfg)
}

fn weigh<T: Element>(g: &mut Graph<T>, bce: Var, dice: Var, cfg: &LossConfig) -> Result<LossValue> {
    let a = g.scale(bce, T::lit(cfg.bce_weight));
    let b = g.scale(dice, T::lit(cfg.dice_weight));
    let total = g.add(a, b)?;
    Ok(LossValue {
        total,
        value: to_f64(g.item(total)?),
        bce: to_f64(g.item(bce)?),
        dice: to_f64(g.item(dice)?),
    })
}

pub(crate) fn to_f64<T: Element>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

// ---------------------------------------------------------------------------
// metrics

/// `1` where `σ(logit) >= threshold`.
pub fn binarize_logits<T: Element>(logits: &[T], threshold: f64) -> Vec<u8> {
    logits
        .iter()
        .map(|&z| u8::from(to_f64(crate::tensor::sigmoid_value(z)) >= threshold))
        .collect()
}

fn counts(pred: &[u8], target: &[u8]) -> Result<(usize, usize, usize)> {
    if pred.len() != target.len() {
        return Err(Error::Shape {
            op: "metric",
            detail: format!("prediction has {} pixels, target has {}", pred.len(), target.len()),
        });
    }
    let (mut inter, mut np, mut nt) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(target) {
        if p > 1 || t > 1 {
            return Err(Error::Contract(format!("masks must be binary, found {p}/{t}")));
        }
        inter += usize::from(p & t);
        np += usize::from(p);
        nt += usize::from(t);
    }
    Ok((inter, np, nt))
}

/// `|P∩G| / |P∪G|`, 1.0 when both masks are empty.
pub fn iou_metric(pred: &[u8], target: &[u8]) -> Result<f64> {
    let (inter, np, nt) = counts(pred, target)?;
    let union = np + nt - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `2|P∩G| / (|P| + |G|)`, 1.0 when both masks are empty.
pub fn dice_metric(pred: &[u8], target: &[u8]) -> Result<f64> {
    let (inter, np, nt) = counts(pred, target)?;
    Ok(if np + nt == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (np + nt) as f64
    })
}

/// Per-sample and averaged IoU / Dice for one model on one split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub iou: Vec<f64>,
    pub dice: Vec<f64>,
    pub mean_iou: f64,
    pub mean_dice: f64,
    pub count: usize,
}

impl MetricsReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, iou: f64, dice: f64) {
        self.iou.push(iou);
        self.dice.push(dice);
        self.count = self.iou.len();
        // means reduced in sample order
        self.mean_iou = self.iou.iter().sum::<f64>() / self.count as f64;
        self.mean_dice = self.dice.iter().sum::<f64>() / self.count as f64;
    }

    /// Scores one prediction/target mask pair and appends it.
    pub fn add_sample(&mut self, pred: &[u8], target: &[u8]) -> Result<()> {
        let iou = iou_metric(pred, target)?;
        let dice = dice_metric(pred, target)?;
        self.push(iou, dice);
        Ok(())
    }
}
