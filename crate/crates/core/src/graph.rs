//! Per-user post graphs.
//!
//! Post-post edges are the sum of an explicit part (cosine similarity plus
//! weighted personalization, thresholded at `tau`) and an implicit part
//! (latent relation score plus weighted contradiction, thresholded at
//! `tau_prime`, then symmetrized). A user node is appended as the last row and
//! column; its links are the rescaled cosine between each post and the mean
//! post embedding, and its feature row is the attention-pooled post embedding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, DenseMatrix};
use crate::providers::{score_matrix, score_new_post, EmbeddingMatrix, Provider, RelationScores};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetrize {
    Mean,
    Max,
}

impl std::str::FromStr for Symmetrize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Symmetrize::Mean),
            "max" => Ok(Symmetrize::Max),
            other => Err(Error::Parameter(format!("unknown symmetrization {other:?}"))),
        }
    }
}

impl Symmetrize {
    pub fn as_str(self) -> &'static str {
        match self {
            Symmetrize::Mean => "mean",
            Symmetrize::Max => "max",
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Symmetrize::Mean => (a + b) / 2.0,
            Symmetrize::Max => a.max(b),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeParams {
    pub lambda_p: f64,
    pub lambda_c: f64,
    pub tau: f64,
    pub tau_prime: f64,
    pub symmetrize: Symmetrize,
    /// Append the user node. When off, the graph holds post nodes only.
    pub user_node: bool,
}

impl Default for EdgeParams {
    fn default() -> Self {
        Self {
            lambda_p: 0.2,
            lambda_c: 0.3,
            tau: 0.5,
            tau_prime: 0.5,
            symmetrize: Symmetrize::Mean,
            user_node: true,
        }
    }
}

impl EdgeParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda_p, self.lambda_c, self.tau, self.tau_prime]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Parameter("edge parameters must be finite".into()));
        }
        if self.lambda_p < 0.0 || self.lambda_c < 0.0 {
            return Err(Error::Parameter("lambda_p and lambda_c must be >= 0".into()));
        }
        Ok(())
    }

    fn fingerprint(&self) -> String {
        format!(
            "lp={:e};lc={:e};tau={:e};tau'={:e};sym={};user={}",
            self.lambda_p,
            self.lambda_c,
            self.tau,
            self.tau_prime,
            self.symmetrize.as_str(),
            self.user_node
        )
    }
}

/// Cosine similarity, clamped to `[-1, 1]` against rounding.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput("cosine of a zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[inline]
fn keep_above(weight: f64, threshold: f64) -> f64 {
    if weight > threshold {
        weight
    } else {
        0.0
    }
}

/// Thresholded explicit weight between two posts.
pub fn explicit_weight(h_i: &[f64], h_j: &[f64], personalization: f64, params: &EdgeParams) -> Result<f64> {
    let w = cosine_sim(h_i, h_j)? + params.lambda_p * personalization;
    Ok(keep_above(w, params.tau))
}

/// Thresholded implicit weight for one ordered pair, before symmetrization.
pub fn implicit_weight(implicit: f64, contradiction: f64, params: &EdgeParams) -> f64 {
    keep_above(implicit + params.lambda_c * contradiction, params.tau_prime)
}

fn square(m: &DenseMatrix, n: usize, what: &str) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "{what} is {:?}, expected {n}x{n}",
            m.shape()
        )));
    }
    Ok(())
}

pub fn build_explicit(
    h: &EmbeddingMatrix,
    personalization: &DenseMatrix,
    params: &EdgeParams,
) -> Result<DenseMatrix> {
    let n = h.len();
    square(personalization, n, "personalization matrix")?;
    if !personalization.is_symmetric() {
        return Err(Error::Parameter("personalization matrix must be symmetric".into()));
    }
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let w = explicit_weight(h.row(i), h.row(j), personalization[(i, j)], params)?;
            out[(i, j)] = w;
            out[(j, i)] = w;
        }
    }
    Ok(out)
}

pub fn build_implicit(
    implicit: &DenseMatrix,
    contradiction: &DenseMatrix,
    params: &EdgeParams,
) -> Result<DenseMatrix> {
    let n = implicit.rows();
    square(implicit, n, "implicit matrix")?;
    square(contradiction, n, "contradiction matrix")?;
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let fwd = implicit_weight(implicit[(i, j)], contradiction[(i, j)], params);
            let back = implicit_weight(implicit[(j, i)], contradiction[(j, i)], params);
            let w = params.symmetrize.apply(fwd, back);
            out[(i, j)] = w;
            out[(j, i)] = w;
        }
    }
    Ok(out)
}

/// `A = A_explicit + A_implicit`.
pub fn combine(explicit: &DenseMatrix, implicit: &DenseMatrix) -> Result<DenseMatrix> {
    if explicit.shape() != implicit.shape() {
        return Err(Error::Dimension(format!(
            "cannot combine {:?} with {:?}",
            explicit.shape(),
            implicit.shape()
        )));
    }
    if explicit.as_slice().iter().chain(implicit.as_slice()).any(|&v| v < 0.0) {
        return Err(Error::Parameter("edge weights must be nonnegative".into()));
    }
    let mut out = explicit.clone();
    out.add_assign(implicit)?;
    Ok(out)
}

fn mean_row(h: &EmbeddingMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; h.dim()];
    for i in 0..h.len() {
        for (m, x) in mean.iter_mut().zip(h.row(i)) {
            *m += x;
        }
    }
    let n = h.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// `(cos(h_i, mean(H)) + 1) / 2`.
pub fn user_link(h: &EmbeddingMatrix, i: usize) -> Result<f64> {
    if i >= h.len() {
        return Err(Error::Dimension(format!("post index {i} out of {}", h.len())));
    }
    let mean = mean_row(h);
    Ok((cosine_sim(h.row(i), &mean)? + 1.0) / 2.0)
}

pub fn user_links(h: &EmbeddingMatrix) -> Result<Vec<f64>> {
    let mean = mean_row(h);
    (0..h.len())
        .map(|i| Ok((cosine_sim(h.row(i), &mean)? + 1.0) / 2.0))
        .collect()
}

/// Appends the user node as the last row/column of the post adjacency.
pub fn attach_user(post_adjacency: &DenseMatrix, user_weights: &[f64]) -> Result<DenseMatrix> {
    let n = post_adjacency.rows();
    square(post_adjacency, n, "post adjacency")?;
    if user_weights.len() != n {
        return Err(Error::Dimension(format!(
            "{} user weights for {n} posts",
            user_weights.len()
        )));
    }
    if user_weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::Parameter("user weights must be finite and nonnegative".into()));
    }
    let mut out = DenseMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        out.row_mut(i)[..n].copy_from_slice(post_adjacency.row(i));
        out[(i, n)] = user_weights[i];
        out[(n, i)] = user_weights[i];
    }
    Ok(out)
}

/// Attention pooling: `α = softmax(H w)`, `h_u = Σ α_i h_i`.
pub fn aggregate_user(h: &DenseMatrix, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if h.rows() == 0 {
        return Err(Error::EmptyInput("no posts to aggregate".into()));
    }
    if w.len() != h.cols() {
        return Err(Error::Dimension(format!(
            "attention vector has {} entries, embeddings have {}",
            w.len(),
            h.cols()
        )));
    }
    let logits: Vec<f64> = (0..h.rows()).map(|i| dot(h.row(i), w)).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let alpha: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let mut h_u = vec![0.0; h.cols()];
    for (i, a) in alpha.iter().enumerate() {
        for (u, x) in h_u.iter_mut().zip(h.row(i)) {
            *u += a * x;
        }
    }
    Ok((h_u, alpha))
}

/// A user's post graph.
#[derive(Clone, Debug, PartialEq)]
pub struct UserGraph {
    /// Post embeddings, plus `h_u` as the last row when the user node is on.
    pub features: DenseMatrix,
    pub adjacency: DenseMatrix,
    pub post_ids: Vec<String>,
    pub posts: Vec<String>,
    pub attention: Vec<f64>,
    /// The vector `w` that produced `attention`.
    pub attention_vector: Vec<f64>,
    pub user_embedding: Vec<f64>,
    pub user_node: bool,
    /// Provider and edge settings the graph was built with.
    pub fingerprint: String,
}

impl UserGraph {
    pub fn post_count(&self) -> usize {
        self.posts.len()
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn post_embeddings(&self) -> EmbeddingMatrix {
        let n = self.post_count();
        let rows = DenseMatrix::from_vec(
            n,
            self.features.cols(),
            self.features.as_slice()[..n * self.features.cols()].to_vec(),
        )
        .expect("post rows");
        EmbeddingMatrix::new(rows, self.post_ids.clone()).expect("post ids")
    }

    /// Post-post block of the adjacency.
    pub fn post_adjacency(&self) -> DenseMatrix {
        let n = self.post_count();
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            out.row_mut(i).copy_from_slice(&self.adjacency.row(i)[..n]);
        }
        out
    }

    pub fn to_export(&self) -> GraphExport {
        GraphExport {
            post_ids: self.post_ids.clone(),
            adjacency: self.adjacency.to_rows(),
            alpha: self.attention.clone(),
            attention_vector: self.attention_vector.clone(),
            user_embedding: self.user_embedding.clone(),
            posts: self.posts.clone(),
            post_embeddings: self.post_embeddings().rows.to_rows(),
            user_node: self.user_node,
            fingerprint: self.fingerprint.clone(),
        }
    }

    pub fn from_export(export: &GraphExport) -> Result<Self> {
        let n = export.posts.len();
        if export.post_ids.len() != n || export.post_embeddings.len() != n || export.alpha.len() != n {
            return Err(Error::Consistency(
                "graph export has inconsistent post counts".into(),
            ));
        }
        let expect_nodes = n + usize::from(export.user_node);
        let adjacency = DenseMatrix::from_rows(&export.adjacency)?;
        square(&adjacency, expect_nodes, "exported adjacency")?;
        let mut rows = export.post_embeddings.clone();
        if export.user_node {
            rows.push(export.user_embedding.clone());
        }
        let features = DenseMatrix::from_rows(&rows)?;
        if export.attention_vector.len() != features.cols() {
            return Err(Error::Consistency(format!(
                "attention vector has {} entries for width {}",
                export.attention_vector.len(),
                features.cols()
            )));
        }
        Ok(Self {
            features,
            adjacency,
            post_ids: export.post_ids.clone(),
            posts: export.posts.clone(),
            attention: export.alpha.clone(),
            attention_vector: export.attention_vector.clone(),
            user_embedding: export.user_embedding.clone(),
            user_node: export.user_node,
            fingerprint: export.fingerprint.clone(),
        })
    }
}

/// JSON view of a [`UserGraph`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub post_ids: Vec<String>,
    pub adjacency: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub attention_vector: Vec<f64>,
    pub user_embedding: Vec<f64>,
    pub posts: Vec<String>,
    pub post_embeddings: Vec<Vec<f64>>,
    pub user_node: bool,
    pub fingerprint: String,
}

pub fn graph_fingerprint(provider: &dyn Provider, params: &EdgeParams) -> String {
    format!("{}|{}", provider.fingerprint(), params.fingerprint())
}

fn assemble(
    posts: Vec<String>,
    embeddings: &EmbeddingMatrix,
    post_adjacency: DenseMatrix,
    params: &EdgeParams,
    attention_vector: &[f64],
    fingerprint: String,
) -> Result<UserGraph> {
    let (user_embedding, attention) = aggregate_user(&embeddings.rows, attention_vector)?;
    let (adjacency, features) = if params.user_node {
        let links = user_links(embeddings)?;
        let mut rows = embeddings.rows.to_rows();
        rows.push(user_embedding.clone());
        (attach_user(&post_adjacency, &links)?, DenseMatrix::from_rows(&rows)?)
    } else {
        (post_adjacency, embeddings.rows.clone())
    };
    Ok(UserGraph {
        features,
        adjacency,
        post_ids: embeddings.post_ids.clone(),
        posts,
        attention,
        attention_vector: attention_vector.to_vec(),
        user_embedding,
        user_node: params.user_node,
        fingerprint,
    })
}

/// Builds a graph from already computed embeddings and relation scores.
pub fn build_graph_from_parts(
    posts: &[String],
    embeddings: &EmbeddingMatrix,
    scores: &RelationScores,
    params: &EdgeParams,
    attention_vector: &[f64],
    fingerprint: String,
) -> Result<UserGraph> {
    params.validate()?;
    if posts.len() != embeddings.len() {
        return Err(Error::Dimension(format!(
            "{} posts but {} embeddings",
            posts.len(),
            embeddings.len()
        )));
    }
    let explicit = build_explicit(embeddings, &scores.personalization, params)?;
    let implicit = build_implicit(&scores.implicit, &scores.contradiction, params)?;
    let post_adjacency = combine(&explicit, &implicit)?;
    assemble(
        posts.to_vec(),
        embeddings,
        post_adjacency,
        params,
        attention_vector,
        fingerprint,
    )
}

/// Embeds, scores and assembles the full graph for one user.
pub fn build_graph(
    posts: &[String],
    provider: &dyn Provider,
    params: &EdgeParams,
    attention_vector: &[f64],
) -> Result<UserGraph> {
    params.validate()?;
    let embeddings = provider.embed_batch(posts)?;
    let scores = score_matrix(provider, posts, &embeddings)?;
    build_graph_from_parts(
        posts,
        &embeddings,
        &scores,
        params,
        attention_vector,
        graph_fingerprint(provider, params),
    )
}

/// [`build_graph`] with a zero attention vector, i.e. uniform pooling.
pub fn build_graph_uniform(
    posts: &[String],
    provider: &dyn Provider,
    params: &EdgeParams,
) -> Result<UserGraph> {
    params.validate()?;
    let embeddings = provider.embed_batch(posts)?;
    let scores = score_matrix(provider, posts, &embeddings)?;
    let zeros = vec![0.0; embeddings.dim()];
    build_graph_from_parts(
        posts,
        &embeddings,
        &scores,
        params,
        &zeros,
        graph_fingerprint(provider, params),
    )
}

/// Adds one post to an existing graph.
///
/// Only edges touching the new post are scored; all post-post weights of the
/// old graph are carried over. User links and the attention pooling depend
/// on every post, so they are recomputed. The result equals
/// `build_graph(posts + [new_post])` entry for entry.
pub fn add_post(
    graph: &UserGraph,
    new_post: &str,
    provider: &dyn Provider,
    params: &EdgeParams,
    attention_vector: &[f64],
) -> Result<UserGraph> {
    if new_post.trim().is_empty() {
        return Err(Error::EmptyInput("new post is blank".into()));
    }
    let fingerprint = graph_fingerprint(provider, params);
    if fingerprint != graph.fingerprint {
        return Err(Error::Consistency(format!(
            "graph was built with [{}], update requested with [{}]",
            graph.fingerprint, fingerprint
        )));
    }
    let n = graph.post_count();
    let new_row = provider.embed_batch(&[new_post.to_owned()])?;
    let old = graph.post_embeddings();
    if new_row.dim() != old.dim() {
        return Err(Error::Dimension(format!(
            "new embedding width {} differs from graph width {}",
            new_row.dim(),
            old.dim()
        )));
    }
    let mut rows = old.rows.to_rows();
    rows.push(new_row.row(0).to_vec());
    let embeddings = EmbeddingMatrix::from_vectors(rows)?;
    let mut posts = graph.posts.clone();
    posts.push(new_post.to_owned());

    let [pers, contra, implicit_in, implicit_out] =
        score_new_post(provider, &posts, &embeddings, n)?;

    let old_block = graph.post_adjacency();
    let mut post_adjacency = DenseMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        post_adjacency.row_mut(i)[..n].copy_from_slice(old_block.row(i));
        let explicit = explicit_weight(embeddings.row(i), embeddings.row(n), pers[i], params)?;
        let fwd = implicit_weight(implicit_in[i], contra[i], params);
        let back = implicit_weight(implicit_out[i], contra[i], params);
        let w = explicit + params.symmetrize.apply(fwd, back);
        post_adjacency[(i, n)] = w;
        post_adjacency[(n, i)] = w;
    }
    assemble(posts, &embeddings, post_adjacency, params, attention_vector, fingerprint)
}
