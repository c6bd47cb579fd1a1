//! Post embeddings and pairwise relation scores behind one interface.
//!
//! Three interchangeable backends implement [`Provider`]:
//! - [`ToyProvider`]: the seeded stand-in encoder plus cheap text heuristics,
//! - [`FileCacheProvider`]: a newline-delimited JSON cache in front of the toy
//!   backend,
//! - [`RemoteProvider`]: an HTTP client for an external embedding/scoring
//!   service.

mod cache;
pub mod heuristics;
mod remote;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::encoder::{encode_post, GroupedAttentionConfig, RotaryConfig, ToyEncoderParams};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub use cache::{CacheRecord, FileCacheProvider};
pub use remote::RemoteProvider;

/// One embedding row per post, in post order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: DenseMatrix,
    pub post_ids: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn new(rows: DenseMatrix, post_ids: Vec<String>) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::EmptyInput("embedding matrix has no rows".into()));
        }
        if rows.rows() != post_ids.len() {
            return Err(Error::Dimension(format!(
                "{} embedding rows for {} post ids",
                rows.rows(),
                post_ids.len()
            )));
        }
        Ok(Self { rows, post_ids })
    }

    /// Builds from per-post vectors, assigning positional ids `p0, p1, …`.
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..vectors.len()).map(post_id).collect();
        Self::new(DenseMatrix::from_rows(&vectors)?, ids)
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }
}

pub fn post_id(index: usize) -> String {
    format!("p{index}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Personalization,
    Contradiction,
    Implicit,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Personalization => "personalization",
            ScoreKind::Contradiction => "contradiction",
            ScoreKind::Implicit => "implicit",
        }
    }
}

/// Pairwise relation matrices: personalization `P`, contradiction `C` and
/// the implicit latent-relation score `F`. All entries lie in `[0, 1]` and
/// the diagonals are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationScores {
    pub personalization: DenseMatrix,
    pub contradiction: DenseMatrix,
    pub implicit: DenseMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Toy,
    File,
    Remote,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Backend::Toy),
            "file" => Ok(Backend::File),
            "remote" => Ok(Backend::Remote),
            other => Err(Error::Parameter(format!("unknown backend {other:?}"))),
        }
    }
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Toy => "toy",
            Backend::File => "file",
            Backend::Remote => "remote",
        }
    }
}

/// Toy encoder dimensions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderSettings {
    pub model_dim: usize,
    pub key_dim: usize,
    pub groups: usize,
    pub table_size: usize,
    pub angle_base: f64,
    pub frequency_base: f64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            model_dim: 32,
            key_dim: 32,
            groups: 4,
            table_size: 4096,
            angle_base: 1.0,
            frequency_base: 10_000.0,
        }
    }
}

impl EncoderSettings {
    pub fn params(&self, seed: u64) -> Result<ToyEncoderParams> {
        if !self.model_dim.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "encoder model_dim {} must be even",
                self.model_dim
            )));
        }
        ToyEncoderParams::new(
            seed,
            self.table_size,
            RotaryConfig {
                pair_count: self.model_dim / 2,
                angle_base: self.angle_base,
                frequency_base: self.frequency_base,
            },
            GroupedAttentionConfig {
                group_count: self.groups,
                key_dim: self.key_dim,
                model_dim: self.model_dim,
            },
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProviderConfig {
    pub backend: Backend,
    pub cache_path: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    pub seed: u64,
    /// File backend only: compute and persist cache misses with the toy encoder.
    pub compute_missing: bool,
    pub encoder: EncoderSettings,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Toy,
            cache_path: None,
            endpoint: None,
            timeout: Duration::from_secs(30),
            retries: 2,
            seed: 0,
            compute_missing: true,
            encoder: EncoderSettings::default(),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        match self.backend {
            Backend::File if self.cache_path.is_none() => Err(Error::Parameter(
                "file backend requires provider.cache_path".into(),
            )),
            Backend::Remote if self.endpoint.is_none() => Err(Error::Parameter(
                "remote backend requires provider.endpoint".into(),
            )),
            _ => Ok(()),
        }
    }
}

pub trait Provider: Send + Sync {
    /// Short backend identifier, part of every cache key.
    fn backend_id(&self) -> &'static str;

    /// Identifies everything that determines the produced numbers. Backends
    /// yielding identical bits share a fingerprint.
    fn fingerprint(&self) -> String {
        self.backend_id().to_owned()
    }

    fn embed_batch(&self, posts: &[String]) -> Result<EmbeddingMatrix>;

    /// Scores `(i, j)` index pairs into `posts`; `embeddings` rows align with
    /// `posts`.
    fn score_batch(
        &self,
        kind: ScoreKind,
        pairs: &[(usize, usize)],
        posts: &[String],
        embeddings: &EmbeddingMatrix,
    ) -> Result<Vec<f64>>;
}

/// Builds the backend named in `cfg`.
pub fn build_provider(cfg: &ProviderConfig) -> Result<Arc<dyn Provider>> {
    cfg.validate()?;
    Ok(match cfg.backend {
        Backend::Toy => Arc::new(ToyProvider::new(cfg.seed, &cfg.encoder)?),
        Backend::File => Arc::new(FileCacheProvider::open(
            cfg.cache_path.clone().expect("validated"),
            ToyProvider::new(cfg.seed, &cfg.encoder)?,
            cfg.compute_missing,
        )?),
        Backend::Remote => Arc::new(RemoteProvider::new(
            cfg.endpoint.clone().expect("validated"),
            cfg.timeout,
            cfg.retries,
        )?),
    })
}

/// Embeds `posts` with the backend in `cfg`.
pub fn embed_batch(posts: &[String], cfg: &ProviderConfig) -> Result<EmbeddingMatrix> {
    build_provider(cfg)?.embed_batch(posts)
}

fn check_posts(posts: &[String]) -> Result<()> {
    if posts.is_empty() {
        return Err(Error::EmptyInput("no posts".into()));
    }
    if let Some(i) = posts.iter().position(|p| p.trim().is_empty()) {
        return Err(Error::EmptyInput(format!("post {i} is blank")));
    }
    Ok(())
}

/// Seeded toy encoder with heuristic scorers.
#[derive(Clone, Debug)]
pub struct ToyProvider {
    params: Arc<ToyEncoderParams>,
}

impl ToyProvider {
    pub fn new(seed: u64, encoder: &EncoderSettings) -> Result<Self> {
        Ok(Self {
            params: Arc::new(encoder.params(seed)?),
        })
    }

    pub fn params(&self) -> &ToyEncoderParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.params.seed
    }

    pub fn embed_one(&self, post: &str) -> Result<Vec<f64>> {
        encode_post(post, &self.params)
    }
}

impl Provider for ToyProvider {
    fn backend_id(&self) -> &'static str {
        "toy"
    }

    fn fingerprint(&self) -> String {
        let p = &self.params;
        format!(
            "toy:seed={};table={};rotary={:?};attention={:?}",
            p.seed, p.token_table_size, p.rotary, p.attention
        )
    }

    fn embed_batch(&self, posts: &[String]) -> Result<EmbeddingMatrix> {
        use rayon::prelude::*;
        check_posts(posts)?;
        let vectors = posts
            .par_iter()
            .map(|p| self.embed_one(p))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingMatrix::from_vectors(vectors)
    }

    fn score_batch(
        &self,
        kind: ScoreKind,
        pairs: &[(usize, usize)],
        posts: &[String],
        embeddings: &EmbeddingMatrix,
    ) -> Result<Vec<f64>> {
        heuristics::score_pairs(kind, pairs, posts, embeddings)
    }
}

/// Fills all three relation matrices for `posts`.
///
/// Symmetric kinds are scored once per unordered pair `i < j` and mirrored;
/// the implicit score is taken for every ordered pair.
pub fn score_matrix(
    provider: &dyn Provider,
    posts: &[String],
    embeddings: &EmbeddingMatrix,
) -> Result<RelationScores> {
    check_posts(posts)?;
    let n = posts.len();
    if embeddings.len() != n {
        return Err(Error::Dimension(format!(
            "{n} posts but {} embedding rows",
            embeddings.len()
        )));
    }
    let upper: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let ordered: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();

    let mut out = RelationScores {
        personalization: DenseMatrix::zeros(n, n),
        contradiction: DenseMatrix::zeros(n, n),
        implicit: DenseMatrix::zeros(n, n),
    };
    for (kind, pairs) in [
        (ScoreKind::Personalization, &upper),
        (ScoreKind::Contradiction, &upper),
        (ScoreKind::Implicit, &ordered),
    ] {
        let scores = provider.score_batch(kind, pairs, posts, embeddings)?;
        check_scores(kind, pairs, &scores)?;
        let target = match kind {
            ScoreKind::Personalization => &mut out.personalization,
            ScoreKind::Contradiction => &mut out.contradiction,
            ScoreKind::Implicit => &mut out.implicit,
        };
        for (&(i, j), &s) in pairs.iter().zip(&scores) {
            target[(i, j)] = s;
            if kind != ScoreKind::Implicit {
                target[(j, i)] = s;
            }
        }
    }
    Ok(out)
}

/// Scores linking post `new_index` to every earlier post, in the same pair
/// orientation [`score_matrix`] uses. Returns `(P, C, F_in, F_out)` where
/// `F_in[i] = F(i, new)` and `F_out[i] = F(new, i)`.
pub fn score_new_post(
    provider: &dyn Provider,
    posts: &[String],
    embeddings: &EmbeddingMatrix,
    new_index: usize,
) -> Result<[Vec<f64>; 4]> {
    check_posts(posts)?;
    let to_new: Vec<(usize, usize)> = (0..new_index).map(|i| (i, new_index)).collect();
    let from_new: Vec<(usize, usize)> = (0..new_index).map(|i| (new_index, i)).collect();
    let run = |kind, pairs: &[(usize, usize)]| -> Result<Vec<f64>> {
        let s = provider.score_batch(kind, pairs, posts, embeddings)?;
        check_scores(kind, pairs, &s)?;
        Ok(s)
    };
    Ok([
        run(ScoreKind::Personalization, &to_new)?,
        run(ScoreKind::Contradiction, &to_new)?,
        run(ScoreKind::Implicit, &to_new)?,
        run(ScoreKind::Implicit, &from_new)?,
    ])
}

fn check_scores(kind: ScoreKind, pairs: &[(usize, usize)], scores: &[f64]) -> Result<()> {
    if scores.len() != pairs.len() {
        return Err(Error::Dimension(format!(
            "{} scores returned for {} {} pairs",
            scores.len(),
            pairs.len(),
            kind.as_str()
        )));
    }
    for (&(i, j), &s) in pairs.iter().zip(scores) {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Numeric(format!(
                "{} score {s} for pair ({i},{j}) outside [0,1]",
                kind.as_str()
            )));
        }
    }
    Ok(())
}
