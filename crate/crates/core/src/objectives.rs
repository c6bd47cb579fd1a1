//! Self-supervised losses, the per-axis classifier and their combinations.
//!
//! Every loss has a plain value function and a `*_with_grad` twin returning
//! the gradient with respect to the node representations.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::ClassifierHead;
use crate::labels::{TypeCode, DIMENSIONS};
use crate::matrix::{dot, DenseMatrix};

/// Edge-prediction logits are clamped to this magnitude.
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub tau_temp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.1,
            lambda: 0.5,
            tau_temp: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma, self.lambda];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter("loss weights must be finite and >= 0".into()));
        }
        if !(self.tau_temp > 0.0 && self.tau_temp.is_finite()) {
            return Err(Error::Parameter("tau_temp must be positive".into()));
        }
        Ok(())
    }
}

/// How the four per-axis cross-entropies are reduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimReduction {
    Sum,
    Mean,
}

impl DimReduction {
    pub fn factor(self) -> f64 {
        match self {
            DimReduction::Sum => 1.0,
            DimReduction::Mean => 1.0 / DIMENSIONS.len() as f64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeSampleSet {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

fn same_shape(a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared row distance between outputs and inputs.
pub fn loss_node(h_out: &DenseMatrix, h_in: &DenseMatrix) -> Result<f64> {
    Ok(loss_node_with_grad(h_out, h_in)?.0)
}

/// Returns the loss and `∂L/∂h_out`; `∂L/∂h_in` is its negation.
pub fn loss_node_with_grad(h_out: &DenseMatrix, h_in: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
    same_shape(h_out, h_in)?;
    let n = h_out.rows();
    if n == 0 {
        return Err(Error::EmptyInput("no nodes".into()));
    }
    let mut grad = DenseMatrix::zeros(n, h_out.cols());
    let mut total = 0.0;
    for i in 0..n {
        let mut row_sq = 0.0;
        for (j, (o, x)) in h_out.row(i).iter().zip(h_in.row(i)).enumerate() {
            let diff = o - x;
            row_sq += diff * diff;
            grad[(i, j)] = 2.0 * diff / n as f64;
        }
        total += row_sq;
    }
    Ok((total / n as f64, grad))
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_pair(n: usize, (i, j): (usize, usize)) -> Result<()> {
    if i >= n || j >= n {
        return Err(Error::Dimension(format!("pair ({i},{j}) out of {n} nodes")));
    }
    Ok(())
}

/// Logistic link-prediction loss over sampled positive and negative pairs.
pub fn loss_edge(h_out: &DenseMatrix, samples: &EdgeSampleSet) -> Result<f64> {
    Ok(loss_edge_with_grad(h_out, samples)?.0)
}

pub fn loss_edge_with_grad(h_out: &DenseMatrix, samples: &EdgeSampleSet) -> Result<(f64, DenseMatrix)> {
    if samples.positives.is_empty() && samples.negatives.is_empty() {
        return Err(Error::DegenerateInput("no edge samples".into()));
    }
    let n = h_out.rows();
    let mut grad = DenseMatrix::zeros(n, h_out.cols());
    let mut total = 0.0;
    let labeled = samples
        .positives
        .iter()
        .map(|&p| (p, true))
        .chain(samples.negatives.iter().map(|&p| (p, false)));
    for ((i, j), positive) in labeled {
        check_pair(n, (i, j))?;
        let raw = dot(h_out.row(i), h_out.row(j));
        let logit = raw.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        let (loss, dlogit) = if positive {
            (softplus(-logit), sigmoid(logit) - 1.0)
        } else {
            (softplus(logit), sigmoid(logit))
        };
        total += loss;
        if raw.abs() > LOGIT_CLAMP {
            continue;
        }
        for c in 0..h_out.cols() {
            let (hi, hj) = (h_out[(i, c)], h_out[(j, c)]);
            grad[(i, c)] += dlogit * hj;
            grad[(j, c)] += dlogit * hi;
        }
    }
    Ok((total, grad))
}

/// All upper-triangle edges plus a seeded uniform sample of non-edges.
pub fn sample_edges(a: &DenseMatrix, neg_ratio: f64, rng_seed: u64) -> EdgeSampleSet {
    let n = a.rows();
    let mut positives = Vec::new();
    let mut zeros = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if a[(i, j)] > 0.0 {
                positives.push((i, j));
            } else {
                zeros.push((i, j));
            }
        }
    }
    let wanted = (neg_ratio.max(0.0) * positives.len() as f64).round() as usize;
    let count = wanted.min(zeros.len());
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut picked = sample(&mut rng, zeros.len(), count).into_vec();
    picked.sort_unstable();
    let negatives = picked.into_iter().map(|k| zeros[k]).collect();
    EdgeSampleSet {
        positives,
        negatives,
    }
}

/// Per node, up to `count` distinct non-neighbours (excluding itself).
pub fn sample_contrastive_negatives(a: &DenseMatrix, count: usize, rng_seed: u64) -> Vec<Vec<usize>> {
    let n = a.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    (0..n)
        .map(|i| {
            let pool: Vec<usize> = (0..n).filter(|&j| j != i && a[(i, j)] == 0.0).collect();
            let mut picked = sample(&mut rng, pool.len(), count.min(pool.len())).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|k| pool[k]).collect()
        })
        .collect()
}

/// Strongest neighbour of node `i` (ties go to the lowest index).
pub fn strongest_neighbour(a: &DenseMatrix, i: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &w) in a.row(i).iter().enumerate() {
        if j == i || w <= 0.0 {
            continue;
        }
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some((j, w));
        }
    }
    best.map(|(j, _)| j)
}

/// Temperature-scaled contrastive loss; nodes without neighbours are skipped.
pub fn loss_contrastive(
    h_out: &DenseMatrix,
    a: &DenseMatrix,
    negatives: &[Vec<usize>],
    tau_temp: f64,
) -> Result<f64> {
    Ok(loss_contrastive_with_grad(h_out, a, negatives, tau_temp)?.0)
}

pub fn loss_contrastive_with_grad(
    h_out: &DenseMatrix,
    a: &DenseMatrix,
    negatives: &[Vec<usize>],
    tau_temp: f64,
) -> Result<(f64, DenseMatrix)> {
    if !(tau_temp > 0.0) {
        return Err(Error::Parameter(format!("tau_temp {tau_temp} must be > 0")));
    }
    let n = h_out.rows();
    if a.shape() != (n, n) || negatives.len() != n {
        return Err(Error::Dimension(format!(
            "{n} nodes, adjacency {:?}, {} negative lists",
            a.shape(),
            negatives.len()
        )));
    }
    let mut grad = DenseMatrix::zeros(n, h_out.cols());
    let mut total = 0.0;
    let mut included = 0usize;
    let mut per_node: Vec<(usize, Vec<usize>, Vec<f64>)> = Vec::new();
    for i in 0..n {
        let Some(pos) = strongest_neighbour(a, i) else {
            continue;
        };
        let mut candidates = Vec::with_capacity(1 + negatives[i].len());
        candidates.push(pos);
        for &j in &negatives[i] {
            check_pair(n, (i, j))?;
            candidates.push(j);
        }
        let logits: Vec<f64> = candidates
            .iter()
            .map(|&j| dot(h_out.row(i), h_out.row(j)) / tau_temp)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() + max - logits[0];
        included += 1;
        let probs = exps.iter().map(|e| e / z).collect();
        per_node.push((i, candidates, probs));
    }
    if included == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / included as f64;
    for (i, candidates, probs) in per_node {
        for (k, (&j, &p)) in candidates.iter().zip(&probs).enumerate() {
            let ds = (p - if k == 0 { 1.0 } else { 0.0 }) * scale / tau_temp;
            for c in 0..h_out.cols() {
                let (hi, hj) = (h_out[(i, c)], h_out[(j, c)]);
                grad[(i, c)] += ds * hj;
                grad[(j, c)] += ds * hi;
            }
        }
    }
    Ok((total * scale, grad))
}

/// `α·L_node + β·L_edge + γ·L_contrastive`.
pub fn loss_total(node: f64, edge: f64, contrastive: f64, w: &LossWeights) -> f64 {
    w.alpha * node + w.beta * edge + w.gamma * contrastive
}

/// `L_class + λ·L_total`.
pub fn loss_final(class_loss: f64, total_loss: f64, lambda: f64) -> f64 {
    class_loss + lambda * total_loss
}

pub type AxisProbs = [[f64; 2]; 4];

fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let z = e[0] + e[1];
    [e[0] / z, e[1] / z]
}

/// Per-axis class probabilities for a user representation.
pub fn classify(h_u: &[f64], heads: &[ClassifierHead]) -> Result<AxisProbs> {
    if heads.len() != DIMENSIONS.len() {
        return Err(Error::Dimension(format!("{} heads, expected 4", heads.len())));
    }
    let mut out = [[0.0; 2]; 4];
    for (k, head) in heads.iter().enumerate() {
        if head.weight.cols() != h_u.len() {
            return Err(Error::Dimension(format!(
                "head {k} expects width {}, got {}",
                head.weight.cols(),
                h_u.len()
            )));
        }
        out[k] = softmax2(head.logits(h_u));
    }
    Ok(out)
}

/// Cross-entropy averaged over users and reduced across the four axes.
pub fn loss_class(preds: &[AxisProbs], labels: &[TypeCode], reduction: DimReduction) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (p, y) in preds.iter().zip(labels) {
        for k in 0..DIMENSIONS.len() {
            for c in 0..2 {
                let prob = p[k][c];
                if !(0.0..=1.0).contains(&prob) {
                    return Err(Error::Numeric(format!(
                        "probability {prob} outside [0, 1] on axis {k}"
                    )));
                }
                if usize::from(y.bit(k)) == c {
                    total -= prob.ln();
                }
            }
        }
    }
    Ok(total / preds.len() as f64 * reduction.factor())
}
