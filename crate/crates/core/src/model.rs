//! One user's forward pass, `L_final` and its gradient for every parameter.
//!
//! Node features are the post embeddings plus, when the user node is on,
//! `h_u = Σ softmax(H w)_i h_i` recomputed from the current `w`. The user
//! representation fed to the heads is the user node's GCN output, or the
//! mean of post outputs when the user node is disabled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{gcn_backward, gcn_forward, normalize_adjacency, ModelParams, NormalizedAdjacency};
use crate::graph::{aggregate_user, UserGraph};
use crate::labels::{TypeCode, DIMENSIONS};
use crate::matrix::{dot, DenseMatrix};
use crate::objectives::{
    classify, loss_class, loss_contrastive_with_grad, loss_edge_with_grad, loss_final,
    loss_node_with_grad, loss_total, sample_contrastive_negatives, sample_edges, AxisProbs,
    DimReduction, LossWeights,
};

/// Everything about the objective that is not a learnable parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub neg_ratio: f64,
    /// Sampled non-neighbours per node for the contrastive term.
    pub contrastive_negatives: usize,
    pub reduction: DimReduction,
    pub dropout: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            neg_ratio: 1.0,
            contrastive_negatives: 5,
            reduction: DimReduction::Sum,
            dropout: 0.2,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.neg_ratio.is_finite() && self.neg_ratio >= 0.0) {
            return Err(Error::Parameter(format!("neg_ratio {} must be >= 0", self.neg_ratio)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// A graph with its adjacency normalized once, ready for repeated passes.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    /// Post embeddings only; the user row is rebuilt from `w` every pass.
    pub posts: DenseMatrix,
    pub adjacency: DenseMatrix,
    pub normalized: NormalizedAdjacency,
    pub user_node: bool,
}

impl PreparedGraph {
    pub fn new(graph: &UserGraph) -> Result<Self> {
        Self::from_parts(graph.post_embeddings().rows, graph.adjacency.clone(), graph.user_node)
    }

    pub fn from_parts(posts: DenseMatrix, adjacency: DenseMatrix, user_node: bool) -> Result<Self> {
        let n = posts.rows() + usize::from(user_node);
        if posts.rows() == 0 {
            return Err(Error::EmptyInput("graph has no posts".into()));
        }
        if adjacency.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "adjacency {:?} for {n} nodes",
                adjacency.shape()
            )));
        }
        let normalized = normalize_adjacency(&adjacency)?;
        Ok(Self {
            posts,
            adjacency,
            normalized,
            user_node,
        })
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.rows()
    }

    fn features(&self, w: &[f64]) -> Result<(DenseMatrix, Vec<f64>)> {
        if !self.user_node {
            return Ok((self.posts.clone(), Vec::new()));
        }
        let (h_u, alpha) = aggregate_user(&self.posts, w)?;
        let mut rows = self.posts.to_rows();
        rows.push(h_u);
        Ok((DenseMatrix::from_rows(&rows)?, alpha))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub class: f64,
    pub node: f64,
    pub edge: f64,
    pub contrastive: f64,
    pub total: f64,
    pub final_loss: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.class, self.node, self.edge, self.contrastive, self.total, self.final_loss]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserOutput {
    pub probs: AxisProbs,
    pub readout: Vec<f64>,
    /// Attention over posts; empty when the user node is disabled.
    pub alpha: Vec<f64>,
}

impl UserOutput {
    /// Argmax per axis, ties toward class 0.
    pub fn type_code(&self) -> TypeCode {
        let mut bits = [0u8; 4];
        for (b, p) in bits.iter_mut().zip(&self.probs) {
            *b = u8::from(p[1] > p[0]);
        }
        TypeCode(bits)
    }
}

fn readout(out: &DenseMatrix, prep: &PreparedGraph) -> Vec<f64> {
    if prep.user_node {
        return out.row(out.rows() - 1).to_vec();
    }
    let n = out.rows() as f64;
    let mut mean = vec![0.0; out.cols()];
    for i in 0..out.rows() {
        for (m, v) in mean.iter_mut().zip(out.row(i)) {
            *m += v / n;
        }
    }
    mean
}

/// Eval-mode inference (no dropout).
pub fn infer(params: &ModelParams, prep: &PreparedGraph) -> Result<UserOutput> {
    let (x, alpha) = prep.features(&params.user_attention)?;
    let cache = gcn_forward(&x, &prep.normalized, params, 0.0, false, 0)?;
    let r = readout(cache.output(), prep);
    let probs = classify(&r, &params.heads)?;
    Ok(UserOutput {
        probs,
        readout: r,
        alpha,
    })
}

/// Seeds for the stochastic parts of one training pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PassSeeds {
    pub dropout: u64,
    pub sampling: u64,
}

/// `L_final` for one user and its gradient with respect to every parameter.
///
/// Terms with nothing to sample (no edges and no non-edges, or no node with
/// a neighbour) contribute zero.
pub fn loss_and_grad(
    params: &ModelParams,
    prep: &PreparedGraph,
    label: TypeCode,
    cfg: &ObjectiveConfig,
    seeds: PassSeeds,
) -> Result<(LossBreakdown, ModelParams)> {
    let w = &cfg.weights;
    let (x, alpha) = prep.features(&params.user_attention)?;
    let training = cfg.dropout > 0.0;
    let cache = gcn_forward(&x, &prep.normalized, params, cfg.dropout, training, seeds.dropout)?;
    let z = cache.output();
    let (rows, cols) = z.shape();
    let mut grads = params.zeros_like();

    // Classification.
    let r = readout(z, prep);
    let probs = classify(&r, &params.heads)?;
    let class = loss_class(&[probs], &[label], cfg.reduction)?;
    let factor = cfg.reduction.factor();
    let mut d_r = vec![0.0; r.len()];
    for k in 0..DIMENSIONS.len() {
        let head = &params.heads[k];
        let g = &mut grads.heads[k];
        for c in 0..2 {
            let target = if usize::from(label.bit(k)) == c { 1.0 } else { 0.0 };
            let dl = (probs[k][c] - target) * factor;
            g.bias[c] += dl;
            for (j, rj) in r.iter().enumerate() {
                g.weight[(c, j)] += dl * rj;
                d_r[j] += dl * head.weight[(c, j)];
            }
        }
    }
    let mut d_z = DenseMatrix::zeros(rows, cols);
    if prep.user_node {
        d_z.row_mut(rows - 1).copy_from_slice(&d_r);
    } else {
        for i in 0..rows {
            for (d, v) in d_z.row_mut(i).iter_mut().zip(&d_r) {
                *d += v / rows as f64;
            }
        }
    }

    // Self-supervised terms.
    let mut d_x_direct = DenseMatrix::zeros(x.rows(), x.cols());
    let (node, g_node) = loss_node_with_grad(z, &x)?;
    let s = cfg.weights.lambda * w.alpha;
    for ((dz, dx), g) in d_z
        .as_mut_slice()
        .iter_mut()
        .zip(d_x_direct.as_mut_slice())
        .zip(g_node.as_slice())
    {
        *dz += s * g;
        *dx -= s * g;
    }

    let samples = sample_edges(&prep.adjacency, cfg.neg_ratio, seeds.sampling);
    let edge = if samples.positives.is_empty() && samples.negatives.is_empty() {
        0.0
    } else {
        let (edge, g_edge) = loss_edge_with_grad(z, &samples)?;
        accumulate(&mut d_z, &g_edge, cfg.weights.lambda * w.beta);
        edge
    };

    let negatives = sample_contrastive_negatives(
        &prep.adjacency,
        cfg.contrastive_negatives,
        seeds.sampling.wrapping_add(1),
    );
    let (contrastive, g_con) =
        loss_contrastive_with_grad(z, &prep.adjacency, &negatives, w.tau_temp)?;
    accumulate(&mut d_z, &g_con, cfg.weights.lambda * w.gamma);

    let total = loss_total(node, edge, contrastive, w);
    let final_loss = loss_final(class, total, w.lambda);

    // Through the GCN, then through the attention pooling.
    let back = gcn_backward(&cache, &prep.normalized, params, &d_z)?;
    for (dst, src) in grads.layers.iter_mut().zip(back.layers) {
        dst.weight = src;
    }
    if prep.user_node {
        let u = rows - 1;
        let d_hu: Vec<f64> = back
            .input
            .row(u)
            .iter()
            .zip(d_x_direct.row(u))
            .map(|(a, b)| a + b)
            .collect();
        let d_alpha: Vec<f64> = (0..prep.posts.rows())
            .map(|i| dot(&d_hu, prep.posts.row(i)))
            .collect();
        let mean: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
        for i in 0..prep.posts.rows() {
            let d_logit = alpha[i] * (d_alpha[i] - mean);
            for (gw, h) in grads.user_attention.iter_mut().zip(prep.posts.row(i)) {
                *gw += d_logit * h;
            }
        }
    }

    let breakdown = LossBreakdown {
        class,
        node,
        edge,
        contrastive,
        total,
        final_loss,
    };
    Ok((breakdown, grads))
}

fn accumulate(dst: &mut DenseMatrix, src: &DenseMatrix, scale: f64) {
    if scale == 0.0 {
        return;
    }
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *d += scale * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::ModelShape;

    fn small_graph(user_node: bool) -> PreparedGraph {
        let posts = DenseMatrix::from_rows(&[
            vec![0.5, -0.2, 0.1],
            vec![0.1, 0.4, -0.3],
            vec![-0.2, 0.3, 0.6],
        ])
        .unwrap();
        let mut a = DenseMatrix::zeros(3, 3);
        a[(0, 1)] = 0.8;
        a[(1, 0)] = 0.8;
        if user_node {
            a = crate::graph::attach_user(&a, &[0.9, 0.6, 0.7]).unwrap();
        }
        PreparedGraph::from_parts(posts, a, user_node).unwrap()
    }

    fn params(seed: u64) -> ModelParams {
        let mut p = ModelParams::init(
            ModelShape {
                input_dim: 3,
                hidden_dim: 4,
                depth: 2,
            },
            seed,
        )
        .unwrap();
        p.user_attention = vec![0.3, -0.5, 0.2];
        p
    }

    #[test]
    fn zero_heads_give_uniform_probs_and_estj() {
        let mut p = params(1);
        for h in &mut p.heads {
            *h = crate::gcn::ClassifierHead::zeros(3);
        }
        let out = infer(&p, &small_graph(true)).unwrap();
        assert!(out.probs.iter().all(|pk| pk == &[0.5, 0.5]));
        assert_eq!(out.type_code().to_string(), "ESTJ");
        assert!((out.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn breakdown_is_consistent() {
        let cfg = ObjectiveConfig {
            dropout: 0.0,
            ..ObjectiveConfig::default()
        };
        let label = TypeCode::parse("INFP").unwrap();
        let seeds = PassSeeds {
            dropout: 0,
            sampling: 4,
        };
        let (b, _) = loss_and_grad(&params(2), &small_graph(true), label, &cfg, seeds).unwrap();
        let w = cfg.weights;
        let total = w.alpha * b.node + w.beta * b.edge + w.gamma * b.contrastive;
        assert_eq!(b.total, total);
        assert_eq!(b.final_loss, b.class + w.lambda * total);
    }

    #[test]
    fn no_user_node_gives_zero_attention_gradient() {
        let cfg = ObjectiveConfig::default();
        let label = TypeCode::parse("ENTP").unwrap();
        let seeds = PassSeeds {
            dropout: 9,
            sampling: 1,
        };
        let (_, g) = loss_and_grad(&params(3), &small_graph(false), label, &cfg, seeds).unwrap();
        assert!(g.user_attention.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lambda_zero_leaves_pure_class_gradient() {
        let label = TypeCode::parse("ISTJ").unwrap();
        let seeds = PassSeeds {
            dropout: 0,
            sampling: 2,
        };
        let base = ObjectiveConfig {
            dropout: 0.0,
            ..ObjectiveConfig::default()
        };
        let mut pure = base;
        pure.weights.lambda = 0.0;
        let mut pure_gamma = pure;
        pure_gamma.weights.gamma = 0.0;
        let p = params(4);
        let (b, g1) = loss_and_grad(&p, &small_graph(true), label, &pure, seeds).unwrap();
        let (_, g2) = loss_and_grad(&p, &small_graph(true), label, &pure_gamma, seeds).unwrap();
        assert_eq!(b.final_loss, b.class);
        assert_eq!(g1, g2);
    }
}
