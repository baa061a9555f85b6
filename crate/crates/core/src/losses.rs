//! Supervised contrastive loss over picture labels, cross-entropy,
//! product-of-experts fusion in log space and the combined objective.
//! Every loss returns its analytic gradient alongside the value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_softmax, log_sum_exp, matmul, matmul_nt, softmax, Matrix};

/// Which samples populate the contrastive denominator for anchor `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SupConVariant {
    /// Every non-anchor sample in the batch (Khosla et al.).
    #[default]
    StandardSupCon,
    /// Only samples of a different picture. Unbounded below.
    PaperLiteral,
}

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Unit-norm embeddings with their picture labels.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch<'a> {
    embeddings: &'a Matrix,
    picture_ids: &'a [u8],
    temperature: f64,
    variant: SupConVariant,
}

impl<'a> ContrastiveBatch<'a> {
    pub fn new(
        embeddings: &'a Matrix,
        picture_ids: &'a [u8],
        temperature: f64,
        variant: SupConVariant,
    ) -> Result<Self> {
        check_temperature(temperature)?;
        if picture_ids.len() != embeddings.rows() {
            return Err(Error::shape(
                "ContrastiveBatch",
                format!("{} picture ids for {} rows", picture_ids.len(), embeddings.rows()),
            ));
        }
        for r in 0..embeddings.rows() {
            let norm = embeddings.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::shape("ContrastiveBatch", format!("row {r} has norm {norm}, expected 1")));
            }
        }
        Ok(ContrastiveBatch {
            embeddings,
            picture_ids,
            temperature,
            variant,
        })
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("temperature must be > 0, got {tau}")))
    }
}

pub fn supcon_loss(batch: &ContrastiveBatch<'_>) -> Result<(f64, Matrix)> {
    supcon_loss_raw(batch.embeddings, batch.picture_ids, batch.temperature, batch.variant)
}

/// Supervised contrastive loss, summed over anchors, and its gradient with
/// respect to the embedding rows. Row norms are not checked here.
///
/// For anchor `k` with positives `P(k)` (same picture, excluding `k`):
/// `term_k = log Σ_{d∈D(k)} exp(h_k·h_d/τ) − mean_{p∈P(k)} h_k·h_p/τ`.
/// Anchors with no positives contribute 0; so do anchors whose denominator
/// set is empty (possible only for `PaperLiteral`). Batches smaller than 2
/// give loss 0.
pub fn supcon_loss_raw(
    h: &Matrix,
    picture_ids: &[u8],
    temperature: f64,
    variant: SupConVariant,
) -> Result<(f64, Matrix)> {
    check_temperature(temperature)?;
    let n = h.rows();
    if picture_ids.len() != n {
        return Err(Error::shape("supcon_loss", format!("{} picture ids for {n} rows", picture_ids.len())));
    }
    if n < 2 {
        return Ok((0.0, Matrix::zeros(n, h.cols())));
    }

    let mut sim = matmul_nt(h, h)?;
    sim.scale(1.0 / temperature);

    // coef[k][j] = ∂loss/∂sim[k][j]
    let mut coef = Matrix::zeros(n, n);
    let mut loss = 0.0;
    let mut logits = Vec::with_capacity(n);
    for k in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != k && picture_ids[j] == picture_ids[k])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let in_denominator = |j: usize| {
            j != k
                && match variant {
                    SupConVariant::StandardSupCon => true,
                    SupConVariant::PaperLiteral => picture_ids[j] != picture_ids[k],
                }
        };
        let denom: Vec<usize> = (0..n).filter(|&j| in_denominator(j)).collect();
        if denom.is_empty() {
            continue;
        }
        logits.clear();
        logits.extend(denom.iter().map(|&j| sim.get(k, j)));
        let log_z = log_sum_exp(&logits);
        let inv_p = 1.0 / positives.len() as f64;
        let mean_pos: f64 = positives.iter().map(|&p| sim.get(k, p)).sum::<f64>() * inv_p;
        loss += log_z - mean_pos;

        for &j in &denom {
            coef.set(k, j, coef.get(k, j) + (sim.get(k, j) - log_z).exp());
        }
        for &p in &positives {
            coef.set(k, p, coef.get(k, p) - inv_p);
        }
    }

    // sim = H Hᵀ / τ  ⇒  dH = (C + Cᵀ) H / τ
    let mut sym = coef.transpose();
    sym.add_assign(&coef)?;
    let mut grad = matmul(&sym, h)?;
    grad.scale(1.0 / temperature);
    Ok((loss, grad))
}

/// Mean cross-entropy of 2-class (or wider) logits; gradient is
/// `(softmax − onehot) / batch`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let n = logits.rows();
    if n == 0 {
        return Err(Error::shape("cross_entropy", "empty batch"));
    }
    if labels.len() != n {
        return Err(Error::shape("cross_entropy", format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::shape("cross_entropy", format!("label {bad} with {} classes", logits.cols())));
    }
    let log_probs = log_softmax(logits);
    let loss = -labels
        .iter()
        .enumerate()
        .map(|(i, &y)| log_probs.get(i, y))
        .sum::<f64>()
        / n as f64;
    let mut grad = softmax(logits);
    for (i, &y) in labels.iter().enumerate() {
        grad.set(i, y, grad.get(i, y) - 1.0);
    }
    grad.scale(1.0 / n as f64);
    Ok((loss, grad))
}

/// Product-of-experts fusion of per-expert class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedLogits {
    /// `log_softmax` of each expert's logits.
    pub expert_log_probs: Vec<Matrix>,
    /// Sum of expert log-probabilities before renormalization.
    pub summed: Matrix,
    /// Renormalized fused log-probabilities.
    pub fused: Matrix,
}

impl FusedLogits {
    pub fn predictions(&self) -> Vec<usize> {
        argmax_rows(&self.fused)
    }
}

pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            m.row(r)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

/// Treats each expert's logits as a class distribution, multiplies the
/// distributions by summing log-probabilities, and renormalizes.
pub fn poe_fuse(experts: &[&Matrix]) -> Result<FusedLogits> {
    let first = experts
        .first()
        .ok_or_else(|| Error::shape("poe_fuse", "no experts"))?;
    if experts.iter().any(|e| e.shape() != first.shape()) {
        return Err(Error::shape("poe_fuse", "experts have different shapes"));
    }
    let expert_log_probs: Vec<Matrix> = experts.iter().map(|e| log_softmax(e)).collect();
    let mut summed = expert_log_probs[0].clone();
    for lp in &expert_log_probs[1..] {
        summed.add_assign(lp)?;
    }
    let fused = log_softmax(&summed);
    Ok(FusedLogits {
        expert_log_probs,
        summed,
        fused,
    })
}

/// Maps a gradient with respect to `fused.summed` back to each expert's
/// raw logits.
pub fn poe_backward(fused: &FusedLogits, d_summed: &Matrix) -> Result<Vec<Matrix>> {
    if d_summed.shape() != fused.summed.shape() {
        return Err(Error::shape("poe_backward", format!("{:?} vs {:?}", d_summed.shape(), fused.summed.shape())));
    }
    fused
        .expert_log_probs
        .iter()
        .map(|lp| {
            // log_softmax Jacobian: dz = g − softmax(z) · Σ g
            let mut dz = d_summed.clone();
            for r in 0..dz.rows() {
                let total: f64 = d_summed.row(r).iter().sum();
                for (g, &l) in dz.row_mut(r).iter_mut().zip(lp.row(r)) {
                    *g -= l.exp() * total;
                }
            }
            Ok(dz)
        })
        .collect()
}

pub fn total_loss(ce: f64, supcon: f64, lambda: f64) -> f64 {
    ce + lambda * supcon
}
