use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{check_posts, EmbeddingMatrix, Provider, ScoreKind, ToyProvider};
use crate::error::{Error, Result};
use crate::hash::fnv1a64_parts;

/// One line of the cache file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub hash: String,
    pub dim: usize,
    pub vec: Vec<f64>,
}

/// Newline-delimited JSON embedding cache in front of the toy encoder.
///
/// Keys are the 64-bit hash of `(backend id, seed, post text)`. Misses are
/// computed by the fallback and appended to the file when `compute_missing`
/// is set; otherwise a miss is an error. Appends are serialized through a
/// mutex while lookups only take a read lock.
#[derive(Debug)]
pub struct FileCacheProvider {
    path: PathBuf,
    fallback: ToyProvider,
    compute_missing: bool,
    entries: RwLock<HashMap<u64, Vec<f64>>>,
    writer: Mutex<()>,
}

impl FileCacheProvider {
    pub fn open(
        path: impl Into<PathBuf>,
        fallback: ToyProvider,
        compute_missing: bool,
    ) -> Result<Self> {
        let path = path.into();
        let entries = if path.exists() {
            load_records(&path)?
        } else {
            HashMap::new()
        };
        Ok(Self {
            path,
            fallback,
            compute_missing,
            entries: RwLock::new(entries),
            writer: Mutex::new(()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn key(&self, text: &str) -> u64 {
        content_hash(self.fallback.backend_id(), self.fallback.seed(), text)
    }

    /// Flushes nothing buffered in memory; every miss is appended as soon as
    /// it is computed. Kept so callers can mark a durable point.
    pub fn flush(&self) -> Result<()> {
        let _guard = self.writer.lock().expect("cache writer");
        if self.path.exists() {
            File::open(&self.path)
                .and_then(|f| f.sync_all())
                .map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(())
    }

    fn append(&self, fresh: &[(u64, Vec<f64>)]) -> Result<()> {
        if fresh.is_empty() {
            return Ok(());
        }
        let _guard = self.writer.lock().expect("cache writer");
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let mut buf = String::new();
        for (key, vec) in fresh {
            let record = CacheRecord {
                hash: format!("{key:016x}"),
                dim: vec.len(),
                vec: vec.clone(),
            };
            buf.push_str(&serde_json::to_string(&record)?);
            buf.push('\n');
        }
        file.write_all(buf.as_bytes())
            .map_err(|e| Error::io(&self.path, e))?;
        let mut entries = self.entries.write().expect("cache lock");
        for (key, vec) in fresh {
            entries.insert(*key, vec.clone());
        }
        Ok(())
    }
}

pub fn content_hash(backend: &str, seed: u64, text: &str) -> u64 {
    fnv1a64_parts(&[backend.as_bytes(), &seed.to_le_bytes(), text.as_bytes()])
}

fn load_records(path: &Path) -> Result<HashMap<u64, Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let record_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Format {
            record: record_no,
            message,
        };
        let rec: CacheRecord =
            serde_json::from_str(&line).map_err(|e| bad(format!("invalid JSON: {e}")))?;
        if rec.hash.len() != 16 {
            return Err(bad(format!("hash {:?} is not 16 hex digits", rec.hash)));
        }
        let key = u64::from_str_radix(&rec.hash, 16)
            .map_err(|_| bad(format!("hash {:?} is not hex", rec.hash)))?;
        if rec.dim != rec.vec.len() {
            return Err(bad(format!(
                "dim {} but vector has {} entries",
                rec.dim,
                rec.vec.len()
            )));
        }
        if rec.vec.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite vector entry".into()));
        }
        out.insert(key, rec.vec);
    }
    Ok(out)
}

impl Provider for FileCacheProvider {
    fn backend_id(&self) -> &'static str {
        "file"
    }

    fn fingerprint(&self) -> String {
        self.fallback.fingerprint()
    }

    fn embed_batch(&self, posts: &[String]) -> Result<EmbeddingMatrix> {
        check_posts(posts)?;
        let keys: Vec<u64> = posts.iter().map(|p| self.key(p)).collect();
        let mut fresh: Vec<(u64, Vec<f64>)> = Vec::new();
        {
            let entries = self.entries.read().expect("cache lock");
            for (post, &key) in posts.iter().zip(&keys) {
                if entries.contains_key(&key) || fresh.iter().any(|(k, _)| *k == key) {
                    continue;
                }
                if !self.compute_missing {
                    return Err(Error::Consistency(format!(
                        "cache miss for post {post:?} ({key:016x}) with computation disabled"
                    )));
                }
                fresh.push((key, self.fallback.embed_one(post)?));
            }
        }
        self.append(&fresh)?;
        let entries = self.entries.read().expect("cache lock");
        let vectors = keys.iter().map(|k| entries[k].clone()).collect();
        EmbeddingMatrix::from_vectors(vectors)
    }

    fn score_batch(
        &self,
        kind: ScoreKind,
        pairs: &[(usize, usize)],
        posts: &[String],
        embeddings: &EmbeddingMatrix,
    ) -> Result<Vec<f64>> {
        self.fallback.score_batch(kind, pairs, posts, embeddings)
    }
}
