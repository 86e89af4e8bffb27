//! Training losses with analytic gradients with respect to the logits.
//!
//! Every classification loss averages over the points whose target is a
//! class index; points labeled [`UNLABELED`] are ignored and get a zero
//! gradient row.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::UNLABELED;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("every target is ignored")]
    EmptyBatch,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("target {target} at row {row} is not below {num_classes}")]
    BadTarget {
        row: usize,
        target: u16,
        num_classes: usize,
    },
    #[error("non-finite logit at row {0}")]
    NonFinite(usize),
}

/// Row-major `n x k` logits and one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsBatch<'a> {
    pub logits: &'a [f64],
    pub targets: &'a [u16],
    pub num_classes: usize,
}

impl<'a> LogitsBatch<'a> {
    pub fn new(logits: &'a [f64], targets: &'a [u16], num_classes: usize) -> Result<Self, LossError> {
        if num_classes < 2 {
            return Err(LossError::Shape(format!("need K >= 2, got {num_classes}")));
        }
        if logits.len() != targets.len() * num_classes {
            return Err(LossError::Shape(format!(
                "{} logits for {} rows of {num_classes} classes",
                logits.len(),
                targets.len()
            )));
        }
        for (row, &t) in targets.iter().enumerate() {
            if t != UNLABELED && t as usize >= num_classes {
                return Err(LossError::BadTarget {
                    row,
                    target: t,
                    num_classes,
                });
            }
        }
        if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
            return Err(LossError::NonFinite(i / num_classes));
        }
        Ok(Self {
            logits,
            targets,
            num_classes,
        })
    }

    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.num_classes..(i + 1) * self.num_classes]
    }

    fn valid_rows(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.targets
            .iter()
            .enumerate()
            .filter(|(_, &t)| t != UNLABELED)
            .map(|(i, &t)| (i, t as usize))
    }

    fn num_valid(&self) -> Result<usize, LossError> {
        match self.valid_rows().count() {
            0 => Err(LossError::EmptyBatch),
            n => Ok(n),
        }
    }
}

/// Loss value and its gradient, shaped like the input it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    row.iter().map(|&z| z - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).into_iter().map(f64::exp).collect()
}

/// Mean cross-entropy `-log p(y)`; gradient `(p - onehot) / n_valid`.
pub fn softmax_ce(batch: &LogitsBatch) -> Result<LossValue, LossError> {
    let n_valid = batch.num_valid()? as f64;
    let k = batch.num_classes;
    let mut grad = vec![0.0; batch.logits.len()];
    let mut value = 0.0;
    for (i, y) in batch.valid_rows() {
        let logp = log_softmax(batch.row(i));
        value -= logp[y];
        let g = &mut grad[i * k..(i + 1) * k];
        for (m, gm) in g.iter_mut().enumerate() {
            let onehot = if m == y { 1.0 } else { 0.0 };
            *gm = (logp[m].exp() - onehot) / n_valid;
        }
    }
    Ok(LossValue {
        value: value / n_valid,
        grad,
    })
}

/// Normalized cross-entropy `log p(y) / sum_k log p(k)`, averaged.
pub fn nce(batch: &LogitsBatch) -> Result<LossValue, LossError> {
    let n_valid = batch.num_valid()? as f64;
    let k = batch.num_classes;
    let mut grad = vec![0.0; batch.logits.len()];
    let mut value = 0.0;
    for (i, y) in batch.valid_rows() {
        let logp = log_softmax(batch.row(i));
        let num = logp[y];
        let den: f64 = logp.iter().sum();
        value += num / den;
        let g = &mut grad[i * k..(i + 1) * k];
        for (m, gm) in g.iter_mut().enumerate() {
            let p = logp[m].exp();
            let dnum = if m == y { 1.0 } else { 0.0 } - p;
            let dden = 1.0 - k as f64 * p;
            *gm = (dnum * den - num * dden) / (den * den) / n_valid;
        }
    }
    Ok(LossValue {
        value: value / n_valid,
        grad,
    })
}

/// L1 distance between the one-hot target and the predicted distribution,
/// `2 (1 - p(y))`, averaged.
pub fn mae(batch: &LogitsBatch) -> Result<LossValue, LossError> {
    let n_valid = batch.num_valid()? as f64;
    let k = batch.num_classes;
    let mut grad = vec![0.0; batch.logits.len()];
    let mut value = 0.0;
    for (i, y) in batch.valid_rows() {
        let p = softmax(batch.row(i));
        value += 2.0 * (1.0 - p[y]);
        let g = &mut grad[i * k..(i + 1) * k];
        for (m, gm) in g.iter_mut().enumerate() {
            let onehot = if m == y { 1.0 } else { 0.0 };
            *gm = -2.0 * p[y] * (onehot - p[m]) / n_valid;
        }
    }
    Ok(LossValue {
        value: value / n_valid,
        grad,
    })
}

/// Mean squared difference; gradient is with respect to `camera`.
pub fn feature_mse(reference: &[f64], camera: &[f64]) -> Result<LossValue, LossError> {
    if reference.len() != camera.len() {
        return Err(LossError::Shape(format!(
            "feature lengths {} and {}",
            reference.len(),
            camera.len()
        )));
    }
    if camera.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let count = camera.len() as f64;
    let value = reference
        .iter()
        .zip(camera)
        .map(|(r, c)| (c - r).powi(2))
        .sum::<f64>()
        / count;
    let grad = reference
        .iter()
        .zip(camera)
        .map(|(r, c)| 2.0 * (c - r) / count)
        .collect();
    Ok(LossValue { value, grad })
}

/// Gradient of the Lovász extension of the Jaccard loss, given ground
/// truth sorted by decreasing error.
pub fn lovasz_grad(gt_sorted: &[bool]) -> Vec<f64> {
    let gts = gt_sorted.iter().filter(|&&g| g).count() as f64;
    let mut cum_fg = 0.0;
    let mut cum_bg = 0.0;
    let mut jaccard = Vec::with_capacity(gt_sorted.len());
    for &g in gt_sorted {
        if g {
            cum_fg += 1.0;
        } else {
            cum_bg += 1.0;
        }
        let intersection = gts - cum_fg;
        let union = gts + cum_bg;
        jaccard.push(1.0 - intersection / union);
    }
    for i in (1..jaccard.len()).rev() {
        jaccard[i] -= jaccard[i - 1];
    }
    jaccard
}

/// Lovász-Softmax averaged over the classes present among valid targets.
pub fn lovasz_softmax(batch: &LogitsBatch) -> Result<LossValue, LossError> {
    batch.num_valid()?;
    let k = batch.num_classes;
    let rows: Vec<(usize, usize)> = batch.valid_rows().collect();
    let probs: Vec<Vec<f64>> = rows.iter().map(|&(i, _)| softmax(batch.row(i))).collect();
    let mut present = vec![false; k];
    for &(_, y) in &rows {
        present[y] = true;
    }
    let n_present = present.iter().filter(|&&p| p).count() as f64;
    // dL/dp, one row per valid point
    let mut dprob = vec![vec![0.0; k]; rows.len()];
    let mut value = 0.0;
    for c in (0..k).filter(|&c| present[c]) {
        let errors: Vec<(f64, bool)> = rows
            .iter()
            .zip(&probs)
            .map(|(&(_, y), p)| {
                let fg = y == c;
                ((if fg { 1.0 } else { 0.0 } - p[c]).abs(), fg)
            })
            .collect();
        let mut order: Vec<usize> = (0..errors.len()).collect();
        order.sort_by(|&a, &b| errors[b].0.total_cmp(&errors[a].0).then(a.cmp(&b)));
        let gt_sorted: Vec<bool> = order.iter().map(|&j| errors[j].1).collect();
        let g = lovasz_grad(&gt_sorted);
        for (rank, &j) in order.iter().enumerate() {
            value += errors[j].0 * g[rank];
            let sign = if errors[j].1 { -1.0 } else { 1.0 };
            dprob[j][c] += sign * g[rank];
        }
    }
    let mut grad = vec![0.0; batch.logits.len()];
    for (r, &(i, _)) in rows.iter().enumerate() {
        let p = &probs[r];
        let dot: f64 = (0..k).map(|c| dprob[r][c] * p[c]).sum();
        for m in 0..k {
            grad[i * k + m] = p[m] * (dprob[r][m] - dot) / n_present;
        }
    }
    Ok(LossValue {
        value: value / n_present,
        grad,
    })
}

/// Weights of the adaptive robust loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// NCE weight.
    pub lambda: f64,
    /// MAE weight.
    pub beta: f64,
    /// Added to the CE weight in the correction phase.
    pub sigma: f64,
    pub use_feature_mse: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            beta: 1.0,
            sigma: -0.99,
            use_feature_mse: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Correction,
}

/// Component values of one composite evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub lovasz: f64,
    pub mse: f64,
    pub nce: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArlOutput {
    pub value: f64,
    pub grad_logits: Vec<f64>,
    /// Gradient with respect to the camera-branch features, when enabled.
    pub grad_features: Option<Vec<f64>>,
    pub parts: LossBreakdown,
}

/// Phase-switched composite.
///
/// Warmup: `CE + MSE + Lovász`. Correction:
/// `lambda NCE + beta MAE + (1 + sigma) CE + MSE + Lovász`.
pub fn arl(
    batch: &LogitsBatch,
    features: Option<(&[f64], &[f64])>,
    cfg: &LossConfig,
    phase: Phase,
) -> Result<ArlOutput, LossError> {
    let ce = softmax_ce(batch)?;
    let lov = lovasz_softmax(batch)?;
    let mut parts = LossBreakdown {
        ce: ce.value,
        lovasz: lov.value,
        ..Default::default()
    };
    let mut grad_features = None;
    if cfg.use_feature_mse {
        let (reference, camera) = features
            .ok_or_else(|| LossError::Shape("feature MSE enabled without feature pairs".into()))?;
        let mse = feature_mse(reference, camera)?;
        parts.mse = mse.value;
        grad_features = Some(mse.grad);
    }
    let ce_weight = match phase {
        Phase::Warmup => 1.0,
        Phase::Correction => 1.0 + cfg.sigma,
    };
    let mut value = ce_weight * ce.value + parts.mse + lov.value;
    let mut grad: Vec<f64> = ce
        .grad
        .iter()
        .zip(&lov.grad)
        .map(|(c, l)| ce_weight * c + l)
        .collect();
    if phase == Phase::Correction {
        let n = nce(batch)?;
        let m = mae(batch)?;
        parts.nce = n.value;
        parts.mae = m.value;
        value += cfg.lambda * n.value + cfg.beta * m.value;
        for ((g, a), b) in grad.iter_mut().zip(&n.grad).zip(&m.grad) {
            *g += cfg.lambda * a + cfg.beta * b;
        }
    }
    Ok(ArlOutput {
        value,
        grad_logits: grad,
        grad_features,
        parts,
    })
}

/// Combine already-computed component values the way [`arl`] does.
pub fn compose_arl(parts: &LossBreakdown, cfg: &LossConfig, phase: Phase) -> f64 {
    let warmup_rest = parts.mse + parts.lovasz;
    match phase {
        Phase::Warmup => parts.ce + warmup_rest,
        Phase::Correction => {
            cfg.lambda * parts.nce + cfg.beta * parts.mae + (1.0 + cfg.sigma) * parts.ce + warmup_rest
        }
    }
}
