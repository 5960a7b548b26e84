//! Task, domain, contrastive and weak-supervision losses.
//!
//! Each loss returns its value together with the gradient with respect to its
//! differentiable input so the training step can chain them into the model.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::cosine_similarity;
use crate::pairing::{BatchMember, PairSets};
use crate::tensor::Tensor;

/// Floor applied to both distributions in the KL term.
pub const KL_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task: f64,
    pub domain: f64,
    pub contrastive: f64,
    pub weak_supervision: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.task, self.domain, self.contrastive, self.weak_supervision, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Combines the loss terms. The domain weight enters through gradient
/// reversal, not here.
pub fn total_loss(task: f64, domain: f64, contrastive: f64, weak_supervision: f64, lambda_c: f64, ws: bool) -> LossBreakdown {
    let weak_supervision = if ws { weak_supervision } else { 0.0 };
    LossBreakdown {
        task,
        domain,
        contrastive,
        weak_supervision,
        total: task + domain + lambda_c * contrastive + weak_supervision,
    }
}

/// Class distribution of a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LabelProportions(Vec<f64>);

impl LabelProportions {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::invalid("empty label proportions"));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!("label proportions must be non-negative: {p:?}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("label proportions sum to {sum}")));
        }
        Ok(Self(p))
    }

    /// Normalizes non-negative counts.
    pub fn from_counts(counts: &[f64]) -> Result<Self> {
        let sum: f64 = counts.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::invalid("label counts sum to zero"));
        }
        Self::new(counts.iter().map(|c| c / sum).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for LabelProportions {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LabelProportions> for Vec<f64> {
    fn from(p: LabelProportions) -> Self {
        p.0
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::invalid(format!("label {y} outside 0..{classes}")));
        }
        t.row_mut(i)[y] = 1.0;
    }
    Ok(t)
}

fn check_pair(op: &'static str, y: &Tensor, log_probs: &Tensor) -> Result<()> {
    if y.rank() != 2 || y.shape() != log_probs.shape() {
        return Err(Error::shape(op, format!("targets {:?} vs log-probs {:?}", y.shape(), log_probs.shape())));
    }
    Ok(())
}

/// Mean categorical cross-entropy `-Σ y·log p` and its gradient with respect
/// to the log-probabilities.
pub fn task_loss(y: &Tensor, log_probs: &Tensor) -> Result<(f64, Tensor)> {
    check_pair("task_loss", y, log_probs)?;
    let rows = y.dim(0);
    for r in 0..rows {
        let row = y.row(r);
        let ones = row.iter().filter(|v| **v == 1.0).count();
        if ones != 1 || row.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::invalid(format!("row {r} is not one-hot: {row:?}")));
        }
    }
    Ok(cross_entropy(y, log_probs))
}

fn cross_entropy(y: &Tensor, log_probs: &Tensor) -> (f64, Tensor) {
    let scale = 1.0 / y.dim(0) as f64;
    let loss = -y.data().iter().zip(log_probs.data()).map(|(a, b)| if *a == 0.0 { 0.0 } else { a * b }).sum::<f64>() * scale;
    let mut grad = y.clone();
    grad.scale(-scale);
    (loss, grad)
}

/// Mean cross-entropy over domain labels (target 0, source `i` as `i`).
pub fn domain_loss(labels: &[usize], n_domains: usize, log_probs: &Tensor) -> Result<(f64, Tensor)> {
    if labels.iter().any(|&d| d >= n_domains) {
        return Err(Error::invalid(format!("domain label outside 0..{n_domains}: {labels:?}")));
    }
    let y = one_hot(labels, n_domains)?;
    check_pair("domain_loss", &y, log_probs)?;
    Ok(cross_entropy(&y, log_probs))
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Multiple-positive InfoNCE for one query. Each positive competes against
/// the negatives and itself only.
pub fn infonce(query: &[f64], positives: &[&[f64]], negatives: &[&[f64]], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    if positives.is_empty() {
        return Err(Error::invalid("infonce needs at least one positive"));
    }
    let neg: Vec<f64> = negatives
        .iter()
        .map(|n| cosine_similarity(query, n).map(|s| s / tau))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut logits = Vec::with_capacity(neg.len() + 1);
    for p in positives {
        let sp = cosine_similarity(query, p)? / tau;
        logits.clear();
        logits.push(sp);
        logits.extend_from_slice(&neg);
        total += log_sum_exp(&logits) - sp;
    }
    Ok(total / positives.len() as f64)
}

static ALL_SKIPPED: AtomicU64 = AtomicU64::new(0);

/// Number of batches so far in which every contrastive query was skipped.
pub fn all_skipped_count() -> u64 {
    ALL_SKIPPED.load(Ordering::Relaxed)
}

#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub loss: f64,
    /// Gradient with respect to each member's `z`, `[|K|, proj]`. `None` when
    /// no query was valid.
    pub grad: Option<Tensor>,
    pub valid_queries: usize,
    pub skipped_queries: usize,
}

/// Sum over query domains of the mean InfoNCE of that domain's valid queries.
///
/// Queries with an empty positive or negative set are skipped and left out of
/// their domain's count. Target queries count only when `pl` is set.
pub fn contrastive_objective(members: &[BatchMember], pairs: &[PairSets], tau: f64, pl: bool) -> Result<ContrastiveOutput> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let mut out = ContrastiveOutput {
        loss: 0.0,
        grad: None,
        valid_queries: 0,
        skipped_queries: 0,
    };
    let active: Vec<&PairSets> = pairs
        .iter()
        .filter(|ps| pl || !members[ps.query].is_target)
        .collect();
    let mut domain_counts: Vec<(usize, usize)> = Vec::new();
    for ps in &active {
        if ps.positives.is_empty() || ps.negatives.is_empty() {
            out.skipped_queries += 1;
            continue;
        }
        out.valid_queries += 1;
        let d = members[ps.query].domain;
        match domain_counts.iter_mut().find(|(dom, _)| *dom == d) {
            Some((_, c)) => *c += 1,
            None => domain_counts.push((d, 1)),
        }
    }
    if out.valid_queries == 0 {
        if !active.is_empty() {
            ALL_SKIPPED.fetch_add(1, Ordering::Relaxed);
            log::warn!("all {} contrastive queries skipped", active.len());
        }
        return Ok(out);
    }

    let proj = members[0].z.len();
    let mut unit = Vec::with_capacity(members.len() * proj);
    let mut norms = Vec::with_capacity(members.len());
    for m in members {
        if m.z.len() != proj {
            return Err(Error::shape("contrastive_objective", "members with different projection sizes"));
        }
        let n = m.z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        norms.push(n);
        unit.extend(m.z.iter().map(|v| v / n));
    }
    let u = |k: usize| &unit[k * proj..(k + 1) * proj];
    let dot = |a: usize, b: usize| u(a).iter().zip(u(b)).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0);

    let mut d_unit = vec![0.0; unit.len()];
    let add_pair = |d_unit: &mut [f64], a: usize, b: usize, coeff: f64| {
        for i in 0..proj {
            d_unit[a * proj + i] += coeff * unit[b * proj + i];
            d_unit[b * proj + i] += coeff * unit[a * proj + i];
        }
    };

    let mut logits = Vec::new();
    for ps in &active {
        if ps.positives.is_empty() || ps.negatives.is_empty() {
            continue;
        }
        let q = ps.query;
        let d = members[q].domain;
        let count = domain_counts.iter().find(|(dom, _)| *dom == d).map(|(_, c)| *c).unwrap_or(1);
        let weight = 1.0 / (count as f64 * ps.positives.len() as f64);
        let neg: Vec<f64> = ps.negatives.iter().map(|&n| dot(q, n) / tau).collect();
        let mut neg_coeff = vec![0.0; neg.len()];
        for &p in &ps.positives {
            let sp = dot(q, p) / tau;
            logits.clear();
            logits.push(sp);
            logits.extend_from_slice(&neg);
            let lse = log_sum_exp(&logits);
            out.loss += weight * (lse - sp);
            // d/ds_p = (softmax_p - 1)/τ, d/ds_n = softmax_n/τ
            add_pair(&mut d_unit, q, p, weight * ((sp - lse).exp() - 1.0) / tau);
            for (c, s) in neg_coeff.iter_mut().zip(&neg) {
                *c += weight * (s - lse).exp() / tau;
            }
        }
        for (&n, c) in ps.negatives.iter().zip(&neg_coeff) {
            add_pair(&mut d_unit, q, n, *c);
        }
    }

    // back through z / ‖z‖
    let mut grad = vec![0.0; unit.len()];
    for k in 0..members.len() {
        let uk = u(k);
        let g = &d_unit[k * proj..(k + 1) * proj];
        let proj_g: f64 = uk.iter().zip(g).map(|(a, b)| a * b).sum();
        for i in 0..proj {
            grad[k * proj + i] = (g[i] - uk[i] * proj_g) / norms[k];
        }
    }
    out.grad = Some(Tensor::new(vec![members.len(), proj], grad)?);
    Ok(out)
}

/// `KL(y_true ‖ mean softmax)` over a target batch given its task
/// log-probabilities, with both distributions floored at [`KL_EPSILON`] and
/// renormalized. Returns the gradient with respect to the log-probabilities.
pub fn weak_supervision_loss(y_true: &LabelProportions, log_probs: &Tensor) -> Result<(f64, Tensor)> {
    if log_probs.rank() != 2 || log_probs.dim(1) != y_true.len() {
        return Err(Error::shape(
            "weak_supervision_loss",
            format!("{} classes vs log-probs {:?}", y_true.len(), log_probs.shape()),
        ));
    }
    let (rows, classes) = (log_probs.dim(0), log_probs.dim(1));
    let probs: Vec<f64> = log_probs.data().iter().map(|v| v.exp()).collect();
    let mut mean = vec![0.0; classes];
    for row in probs.chunks_exact(classes) {
        for (m, p) in mean.iter_mut().zip(row) {
            *m += p / rows as f64;
        }
    }
    let (p, _) = floor_normalize(y_true.as_slice());
    let (q, q_sum) = floor_normalize(&mean);
    let loss: f64 = p.iter().zip(&q).map(|(a, b)| a * (a.ln() - b.ln())).sum();

    // d/d(floored mean_k) = (1 - p_k/q_k)/S; the floor passes gradient only above ε
    let d_mean: Vec<f64> = (0..classes)
        .map(|k| if mean[k] > KL_EPSILON { (1.0 - p[k] / q[k]) / q_sum } else { 0.0 })
        .collect();
    let mut grad = Vec::with_capacity(probs.len());
    for row in probs.chunks_exact(classes) {
        grad.extend(row.iter().zip(&d_mean).map(|(pr, g)| g * pr / rows as f64));
    }
    Ok((loss.max(0.0), Tensor::new(log_probs.shape().to_vec(), grad)?))
}

fn floor_normalize(v: &[f64]) -> (Vec<f64>, f64) {
    let floored: Vec<f64> = v.iter().map(|x| x.max(KL_EPSILON)).collect();
    let sum: f64 = floored.iter().sum();
    (floored.iter().map(|x| x / sum).collect(), sum)
}
