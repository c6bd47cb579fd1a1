use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SplitSpec;
use crate::error::{Error, Result};
use crate::labels::{all_type_codes, TypeCode, DIMENSIONS};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub mbti: TypeCode,
    pub posts: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "jsonl" => Ok(DataFormat::Jsonl),
            other => Err(Error::Parameter(format!("unknown format {other:?}"))),
        }
    }
}

impl DataFormat {
    /// Guesses from the file extension, defaulting to jsonl.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Jsonl,
        }
    }
}

/// Parsed users plus the ids of users dropped for having no usable posts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ingested {
    pub records: Vec<UserRecord>,
    pub rejected: Vec<String>,
}

/// Separator between posts in the csv `posts` column.
pub const POST_SEPARATOR: &str = "|||";

fn keep_posts(posts: impl IntoIterator<Item = String>) -> Vec<String> {
    posts
        .into_iter()
        .map(|p| p.trim().to_owned())
        .filter(|p| !p.is_empty())
        .collect()
}

pub fn ingest(path: &Path, format: DataFormat) -> Result<Ingested> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        DataFormat::Jsonl => ingest_jsonl(BufReader::new(file), path),
        DataFormat::Csv => ingest_csv(file),
    }
}

#[derive(Deserialize)]
struct JsonlRow {
    user_id: String,
    mbti: String,
    posts: Vec<String>,
}

fn push_user(out: &mut Ingested, user_id: String, mbti: TypeCode, posts: Vec<String>) {
    let posts = keep_posts(posts);
    if posts.is_empty() {
        log::warn!("user {user_id} has no non-blank posts; skipped");
        out.rejected.push(user_id);
    } else {
        out.records.push(UserRecord {
            user_id,
            mbti,
            posts,
        });
    }
}

fn ingest_jsonl(reader: impl BufRead, path: &Path) -> Result<Ingested> {
    let mut out = Ingested::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonlRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let mbti = TypeCode::parse(&row.mbti)?;
        push_user(&mut out, row.user_id, mbti, row.posts);
    }
    Ok(out)
}

fn ingest_csv(reader: impl std::io::Read) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let bad_header = |message: String| Error::Parse { line: 1, message };
    let headers = rdr.headers().map_err(|e| bad_header(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| bad_header(format!("missing column {name:?}")))
    };
    let (type_col, posts_col) = (col("type")?, col("posts")?);
    let mut out = Ingested::default();
    for (idx, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(idx + 2, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(idx + 2, |p| p.line() as usize);
        let field = |c: usize| {
            row.get(c).ok_or_else(|| Error::Parse {
                line,
                message: format!("row has {} fields", row.len()),
            })
        };
        let mbti = TypeCode::parse(field(type_col)?)?;
        let posts = field(posts_col)?
            .split(POST_SEPARATOR)
            .map(str::to_owned)
            .collect::<Vec<_>>();
        push_user(&mut out, format!("u{idx}"), mbti, posts);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[UserRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn label_words() -> &'static HashSet<String> {
    static WORDS: OnceLock<HashSet<String>> = OnceLock::new();
    WORDS.get_or_init(|| {
        let mut set: HashSet<String> = HashSet::new();
        for code in all_type_codes() {
            let code = code.to_lowercase();
            set.insert(format!("{code}s"));
            set.insert(code);
        }
        let stems = [
            "introvert", "extrovert", "extravert", "intuitive", "sensing", "thinking",
            "feeling", "judging", "perceiving",
        ];
        let variants = [
            "introverts", "introverted", "introversion", "extroverts", "extroverted",
            "extroversion", "extraverts", "extraverted", "extraversion", "intuitives",
            "intuition", "intuitively", "sensor", "sensors", "thinker", "thinkers",
            "feeler", "feelers", "judger", "judgers", "perceiver", "perceivers",
        ];
        set.extend(stems.iter().chain(&variants).map(|w| (*w).to_owned()));
        set
    })
}

/// Removes whole-word type codes and axis words, case-insensitively.
///
/// Whitespace left doubled by a removal is collapsed; text with no label
/// words is returned unchanged.
pub fn mask_label_words(text: &str) -> String {
    let words = label_words();
    let mut out = String::with_capacity(text.len());
    let mut dropped = false;
    let mut rest = text;
    while !rest.is_empty() {
        let is_word = rest.chars().next().is_some_and(char::is_alphanumeric);
        let end = rest
            .char_indices()
            .find(|&(_, c)| c.is_alphanumeric() != is_word)
            .map_or(rest.len(), |(i, _)| i);
        let (segment, tail) = rest.split_at(end);
        rest = tail;
        if is_word {
            if words.contains(&segment.to_lowercase()) {
                dropped = true;
            } else {
                out.push_str(segment);
                dropped = false;
            }
        } else if dropped && out.chars().last().is_none_or(char::is_whitespace) {
            out.push_str(segment.trim_start());
            dropped = false;
        } else {
            out.push_str(segment);
            dropped = false;
        }
    }
    if dropped {
        let trimmed = out.trim_end().len();
        out.truncate(trimmed);
    }
    out
}

/// Masks every post; users left with no posts are dropped.
pub fn mask_records(records: &[UserRecord]) -> Vec<UserRecord> {
    records
        .iter()
        .filter_map(|r| {
            let posts = keep_posts(r.posts.iter().map(|p| mask_label_words(p)));
            (!posts.is_empty()).then(|| UserRecord {
                posts,
                ..r.clone()
            })
        })
        .collect()
}

pub const MIN_SPLIT_USERS: usize = 5;

/// Seeded shuffle, then contiguous train/val/test cut.
pub fn split(records: &[UserRecord], spec: &SplitSpec) -> Result<[Vec<UserRecord>; 3]> {
    let n = records.len();
    if n < MIN_SPLIT_USERS {
        return Err(Error::EmptyInput(format!(
            "{n} users; at least {MIN_SPLIT_USERS} are needed to split"
        )));
    }
    let fractions = [spec.train, spec.val, spec.test];
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Parameter(format!("bad split fractions {fractions:?}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut n_train = ((spec.train * n as f64).round() as usize).max(1);
    let mut n_val = ((spec.val * n as f64).round() as usize).max(1);
    while n_train + n_val >= n {
        if n_train >= n_val && n_train > 1 {
            n_train -= 1;
        } else {
            n_val -= 1;
        }
    }
    let pick = |range: std::ops::Range<usize>| -> Vec<UserRecord> {
        order[range].iter().map(|&i| records[i].clone()).collect()
    };
    Ok([
        pick(0..n_train),
        pick(n_train..n_train + n_val),
        pick(n_train + n_val..n),
    ])
}

/// Shape of a generated corpus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub users: usize,
    pub posts_per_user: usize,
    /// Probability that a cue word is drawn from the opposite class.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            users: 60,
            posts_per_user: 8,
            noise: 0.1,
            seed: 0,
        }
    }
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ru", "ze", "ta", "vo", "ni", "shu", "be", "qa", "dro", "fi", "gu", "xe", "ply",
];

fn made_up_word(index: usize) -> String {
    let a = SYLLABLES[index % 16];
    let b = SYLLABLES[(index / 16) % 16];
    let c = SYLLABLES[(index / 256 + 5) % 16];
    format!("{a}{b}{c}x")
}

/// Cue words per axis and class, plus shared filler words.
fn synth_vocab() -> ([[Vec<String>; 2]; 4], Vec<String>) {
    let mut next = 0;
    let mut take = |count: usize| {
        let words: Vec<String> = (next..next + count).map(made_up_word).collect();
        next += count;
        words
    };
    let cues = std::array::from_fn(|_| [take(4), take(4)]);
    let filler = take(24);
    (cues, filler)
}

/// Users with uniformly random types whose posts carry label-correlated
/// cue words from an invented vocabulary.
pub fn synth_dataset(spec: &SynthSpec) -> Vec<UserRecord> {
    let (cues, filler) = synth_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.users)
        .map(|u| {
            let bits: [u8; 4] = std::array::from_fn(|_| rng.gen_range(0..2));
            let posts = (0..spec.posts_per_user.max(1))
                .map(|_| {
                    let mut words = Vec::new();
                    for (k, _) in DIMENSIONS.iter().enumerate() {
                        let flip = rng.gen::<f64>() < spec.noise;
                        let class = usize::from(bits[k] ^ u8::from(flip));
                        words.push(cues[k][class].choose(&mut rng).expect("cues").clone());
                    }
                    for _ in 0..rng.gen_range(2..5) {
                        words.push(filler.choose(&mut rng).expect("filler").clone());
                    }
                    words.shuffle(&mut rng);
                    words.join(" ")
                })
                .collect();
            UserRecord {
                user_id: format!("s{u}"),
                mbti: TypeCode(bits),
                posts,
            }
        })
        .collect()
}
