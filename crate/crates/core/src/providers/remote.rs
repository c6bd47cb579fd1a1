use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{check_posts, EmbeddingMatrix, Provider, ScoreKind};
use crate::error::{Error, Result};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    pairs: Vec<[&'a str; 2]>,
    kinds: Vec<&'static str>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// Client for an external embedding/scoring service.
///
/// `POST {endpoint}/embed` takes `{"texts": [..]}` and answers
/// `{"embeddings": [[..], ..]}`; `POST {endpoint}/score` takes
/// `{"pairs": [[a, b], ..], "kinds": [..]}` and answers `{"scores": [..]}`.
/// Timeouts, connection failures and 5xx responses are retried up to
/// `retries` times; any other non-200 status fails immediately.
#[derive(Debug, Clone)]
pub struct RemoteProvider {
    endpoint: String,
    retries: u32,
    client: Client,
}

impl RemoteProvider {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, retries: u32) -> Result<Self> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport {
                retries: 0,
                message: format!("cannot build HTTP client: {e}"),
            })?;
        Ok(Self {
            endpoint: endpoint.into().trim_end_matches('/').to_owned(),
            retries,
            client,
        })
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        route: &str,
        body: &Req,
    ) -> Result<Resp> {
        let url = format!("{}/{route}", self.endpoint);
        let mut attempt = 0;
        loop {
            let outcome = self.client.post(&url).json(body).send();
            let retryable = match outcome {
                Ok(resp) if resp.status() == StatusCode::OK => {
                    return resp.json::<Resp>().map_err(|e| Error::Transport {
                        retries: attempt,
                        message: format!("bad response body from {url}: {e}"),
                    });
                }
                Ok(resp) if resp.status().is_server_error() => {
                    format!("{url} answered {}", resp.status())
                }
                Ok(resp) => {
                    return Err(Error::Transport {
                        retries: attempt,
                        message: format!("{url} answered {}", resp.status()),
                    })
                }
                Err(e) => format!("request to {url} failed: {e}"),
            };
            if attempt >= self.retries {
                return Err(Error::Transport {
                    retries: attempt,
                    message: retryable,
                });
            }
            attempt += 1;
            log::warn!("{retryable}; retry {attempt}/{}", self.retries);
        }
    }

    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let resp: EmbedResponse = self.post("embed", &EmbedRequest { texts })?;
        if resp.embeddings.len() != texts.len() {
            return Err(Error::Dimension(format!(
                "service returned {} embeddings for {} texts",
                resp.embeddings.len(),
                texts.len()
            )));
        }
        Ok(resp.embeddings)
    }

    pub fn score_texts(&self, kind: ScoreKind, pairs: &[(&str, &str)]) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let req = ScoreRequest {
            pairs: pairs.iter().map(|&(a, b)| [a, b]).collect(),
            kinds: vec![kind.as_str(); pairs.len()],
        };
        let resp: ScoreResponse = self.post("score", &req)?;
        Ok(resp.scores)
    }
}

impl Provider for RemoteProvider {
    fn backend_id(&self) -> &'static str {
        "remote"
    }

    fn fingerprint(&self) -> String {
        format!("remote:{}", self.endpoint)
    }

    fn embed_batch(&self, posts: &[String]) -> Result<EmbeddingMatrix> {
        check_posts(posts)?;
        EmbeddingMatrix::from_vectors(self.embed_texts(posts)?)
    }

    fn score_batch(
        &self,
        kind: ScoreKind,
        pairs: &[(usize, usize)],
        posts: &[String],
        _embeddings: &EmbeddingMatrix,
    ) -> Result<Vec<f64>> {
        let texts: Vec<(&str, &str)> = pairs
            .iter()
            .map(|&(i, j)| (posts[i].as_str(), posts[j].as_str()))
            .collect();
        self.score_texts(kind, &texts)
    }
}
