//! Deterministic stand-in text encoder.
//!
//! Posts are tokenized, mapped to seed-keyed hashed token vectors, rotated by
//! position (rotary embedding), passed through one grouped-query attention
//! layer, mean-pooled and L2-normalized. No weights are learned: everything is
//! derived from the seed, so the same `(seed, text)` always yields the same
//! bits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{norm, DenseMatrix};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub positions: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> TokenSequence {
    let tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    let positions = (0..tokens.len()).collect();
    TokenSequence { tokens, positions }
}

/// Rotary position embedding settings.
///
/// Pair `k` rotates by `θ_k = p · angle_base · frequency_base^(−k / pair_count)`.
/// `angle_base = 1, frequency_base = 1` gives the plain `θ = p` rotation for
/// every pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotaryConfig {
    pub pair_count: usize,
    pub angle_base: f64,
    pub frequency_base: f64,
}

impl Default for RotaryConfig {
    fn default() -> Self {
        Self {
            pair_count: 16,
            angle_base: 1.0,
            frequency_base: 10_000.0,
        }
    }
}

impl RotaryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pair_count == 0 {
            return Err(Error::Parameter("pair_count must be >= 1".into()));
        }
        if !(self.angle_base > 0.0 && self.angle_base.is_finite()) {
            return Err(Error::Parameter("angle_base must be positive".into()));
        }
        if !(self.frequency_base > 0.0 && self.frequency_base.is_finite()) {
            return Err(Error::Parameter("frequency_base must be positive".into()));
        }
        Ok(())
    }

    pub fn angle(&self, position: usize, pair: usize) -> f64 {
        let freq = self
            .frequency_base
            .powf(-(pair as f64) / self.pair_count as f64);
        position as f64 * self.angle_base * freq
    }
}

/// Rotates each consecutive pair `(a, b)` of `vec` by the position angle.
pub fn rope_rotate(vec: &[f64], position: usize, cfg: &RotaryConfig) -> Result<Vec<f64>> {
    if !vec.len().is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "rotary input must have even length, got {}",
            vec.len()
        )));
    }
    if vec.len() != 2 * cfg.pair_count {
        return Err(Error::Dimension(format!(
            "rotary input has {} pairs, config expects {}",
            vec.len() / 2,
            cfg.pair_count
        )));
    }
    let mut out = Vec::with_capacity(vec.len());
    for (k, pair) in vec.chunks_exact(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        if position == 0 {
            out.extend_from_slice(pair);
            continue;
        }
        let (sin, cos) = cfg.angle(position, k).sin_cos();
        out.push(a * cos - b * sin);
        out.push(a * sin + b * cos);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupedAttentionConfig {
    pub group_count: usize,
    pub key_dim: usize,
    pub model_dim: usize,
}

impl Default for GroupedAttentionConfig {
    fn default() -> Self {
        Self {
            group_count: 4,
            key_dim: 32,
            model_dim: 32,
        }
    }
}

impl GroupedAttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_count == 0 {
            return Err(Error::Parameter("group_count must be >= 1".into()));
        }
        if self.model_dim == 0 {
            return Err(Error::Parameter("model_dim must be >= 1".into()));
        }
        if self.key_dim == 0 || !self.key_dim.is_multiple_of(self.group_count) {
            return Err(Error::Parameter(format!(
                "key_dim {} must be a positive multiple of group_count {}",
                self.key_dim, self.group_count
            )));
        }
        Ok(())
    }
}

fn check_attention_shapes(
    q: &DenseMatrix,
    k: &DenseMatrix,
    v: &DenseMatrix,
    cfg: &GroupedAttentionConfig,
) -> Result<()> {
    cfg.validate()?;
    if q.rows() != k.rows() || k.rows() != v.rows() {
        return Err(Error::Dimension(format!(
            "Q, K, V row counts differ: {}, {}, {}",
            q.rows(),
            k.rows(),
            v.rows()
        )));
    }
    if q.cols() != cfg.key_dim || k.cols() != cfg.key_dim {
        return Err(Error::Dimension(format!(
            "Q and K need {} columns, got {} and {}",
            cfg.key_dim,
            q.cols(),
            k.cols()
        )));
    }
    if !v.cols().is_multiple_of(cfg.group_count) {
        return Err(Error::Dimension(format!(
            "V width {} not divisible by {} groups",
            v.cols(),
            cfg.group_count
        )));
    }
    Ok(())
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Per-group attention probabilities `rowsoftmax(Q_g K_gᵀ / √(d_k/G))`.
pub fn grouped_attention_weights(
    q: &DenseMatrix,
    k: &DenseMatrix,
    cfg: &GroupedAttentionConfig,
) -> Result<Vec<DenseMatrix>> {
    let v_stub = DenseMatrix::zeros(q.rows(), cfg.group_count);
    check_attention_shapes(q, k, &v_stub, cfg)?;
    let n = q.rows();
    let width = cfg.key_dim / cfg.group_count;
    let scale = (width as f64).sqrt();
    let mut out = Vec::with_capacity(cfg.group_count);
    for g in 0..cfg.group_count {
        let cols = g * width..(g + 1) * width;
        let mut scores = DenseMatrix::zeros(n, n);
        for i in 0..n {
            let qi = &q.row(i)[cols.clone()];
            for j in 0..n {
                let kj = &k.row(j)[cols.clone()];
                scores[(i, j)] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / scale;
            }
            softmax_in_place(scores.row_mut(i));
        }
        out.push(scores);
    }
    Ok(out)
}

/// Grouped-query attention; group outputs are concatenated column-wise.
pub fn grouped_attention(
    q: &DenseMatrix,
    k: &DenseMatrix,
    v: &DenseMatrix,
    cfg: &GroupedAttentionConfig,
) -> Result<DenseMatrix> {
    check_attention_shapes(q, k, v, cfg)?;
    let weights = grouped_attention_weights(q, k, cfg)?;
    let n = q.rows();
    let v_width = v.cols() / cfg.group_count;
    let mut out = DenseMatrix::zeros(n, v.cols());
    for (g, probs) in weights.iter().enumerate() {
        let cols = g * v_width..(g + 1) * v_width;
        for i in 0..n {
            for j in 0..n {
                let p = probs[(i, j)];
                let vj = &v.row(j)[cols.clone()];
                let oi = &mut out.row_mut(i)[cols.clone()];
                for (o, x) in oi.iter_mut().zip(vj) {
                    *o += p * x;
                }
            }
        }
    }
    Ok(out)
}

/// Seed-derived encoder state: hashed token table plus Q/K/V projections.
#[derive(Clone, Debug)]
pub struct ToyEncoderParams {
    pub seed: u64,
    pub token_table_size: usize,
    pub rotary: RotaryConfig,
    pub attention: GroupedAttentionConfig,
    token_table: DenseMatrix,
    w_query: DenseMatrix,
    w_key: DenseMatrix,
    w_value: DenseMatrix,
}

impl ToyEncoderParams {
    pub fn new(
        seed: u64,
        token_table_size: usize,
        rotary: RotaryConfig,
        attention: GroupedAttentionConfig,
    ) -> Result<Self> {
        rotary.validate()?;
        attention.validate()?;
        if token_table_size == 0 {
            return Err(Error::Parameter("token_table_size must be >= 1".into()));
        }
        if 2 * rotary.pair_count != attention.model_dim {
            return Err(Error::Parameter(format!(
                "model_dim {} must equal 2 * pair_count ({})",
                attention.model_dim, rotary.pair_count
            )));
        }
        if !attention.model_dim.is_multiple_of(attention.group_count) {
            return Err(Error::Parameter(format!(
                "model_dim {} not divisible by {} groups",
                attention.model_dim, attention.group_count
            )));
        }
        let d = attention.model_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize, scale: f64| {
            let values = (0..rows * cols)
                .map(|_| rng.gen_range(-1.0..1.0) * scale)
                .collect();
            DenseMatrix::from_vec(rows, cols, values).expect("shape")
        };
        let proj_scale = (3.0 / d as f64).sqrt();
        let token_table = uniform(token_table_size, d, 1.0);
        let w_query = uniform(d, attention.key_dim, proj_scale);
        let w_key = uniform(d, attention.key_dim, proj_scale);
        let w_value = uniform(d, d, proj_scale);
        Ok(Self {
            seed,
            token_table_size,
            rotary,
            attention,
            token_table,
            w_query,
            w_key,
            w_value,
        })
    }

    pub fn with_seed(seed: u64) -> Self {
        Self::new(
            seed,
            4096,
            RotaryConfig::default(),
            GroupedAttentionConfig::default(),
        )
        .expect("default encoder config is valid")
    }

    pub fn model_dim(&self) -> usize {
        self.attention.model_dim
    }

    fn bucket(&self, token: &str) -> usize {
        let h = crate::hash::fnv1a64_parts(&[&self.seed.to_le_bytes(), token.as_bytes()]);
        (h % self.token_table_size as u64) as usize
    }

    pub fn token_vector(&self, token: &str) -> &[f64] {
        self.token_table.row(self.bucket(token))
    }
}

/// Encodes one post into a unit-norm vector of width `model_dim`.
pub fn encode_post(text: &str, params: &ToyEncoderParams) -> Result<Vec<f64>> {
    let seq = tokenize(text);
    if seq.is_empty() {
        return Err(Error::EmptyInput("post has no tokens".into()));
    }
    let rows = seq
        .tokens
        .iter()
        .zip(&seq.positions)
        .map(|(tok, &p)| rope_rotate(params.token_vector(tok), p, &params.rotary))
        .collect::<Result<Vec<_>>>()?;
    let x = DenseMatrix::from_rows(&rows)?;
    let q = x.matmul(&params.w_query)?;
    let k = x.matmul(&params.w_key)?;
    let v = x.matmul(&params.w_value)?;
    let attended = grouped_attention(&q, &k, &v, &params.attention)?;

    let d = params.model_dim();
    let mut pooled = vec![0.0; d];
    for i in 0..attended.rows() {
        for (p, x) in pooled.iter_mut().zip(attended.row(i)) {
            *p += x;
        }
    }
    let n = attended.rows() as f64;
    pooled.iter_mut().for_each(|p| *p /= n);
    let len = norm(&pooled);
    if len == 0.0 || !len.is_finite() {
        return Err(Error::DegenerateInput("pooled embedding has zero norm".into()));
    }
    pooled.iter_mut().for_each(|p| *p /= len);
    Ok(pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn rot(pairs: usize) -> RotaryConfig {
        RotaryConfig {
            pair_count: pairs,
            ..RotaryConfig::default()
        }
    }

    #[test]
    fn tokenize_lowercases_and_splits() {
        let seq = tokenize("Hello, WORLD!! it's 2 fast");
        assert_eq!(seq.tokens, ["hello", "world", "it", "s", "2", "fast"]);
        assert_eq!(seq.positions, vec![0, 1, 2, 3, 4, 5]);
        assert!(tokenize("  ... ").is_empty());
    }

    #[test]
    fn rope_position_zero_is_identity() {
        let v = [0.3, -1.2, 4.0, 0.5];
        assert_eq!(rope_rotate(&v, 0, &rot(2)).unwrap(), v.to_vec());
    }

    #[test]
    fn rope_quarter_turn() {
        let cfg = RotaryConfig {
            pair_count: 1,
            angle_base: FRAC_PI_2,
            frequency_base: 10_000.0,
        };
        let out = rope_rotate(&[1.0, 0.0], 1, &cfg).unwrap();
        assert!(out[0].abs() < 1e-15);
        assert!((out[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rope_unit_schedule_uses_raw_position() {
        let cfg = RotaryConfig {
            pair_count: 2,
            angle_base: 1.0,
            frequency_base: 1.0,
        };
        let out = rope_rotate(&[1.0, 0.0, 1.0, 0.0], 3, &cfg).unwrap();
        let want = [3f64.cos(), 3f64.sin(), 3f64.cos(), 3f64.sin()];
        for (a, b) in out.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rope_preserves_norm_of_3_4() {
        for p in [0, 1, 7, 1000, 123_456] {
            let out = rope_rotate(&[3.0, 4.0], p, &rot(1)).unwrap();
            assert!((norm(&out) - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rope_rejects_odd_length() {
        assert!(matches!(
            rope_rotate(&[1.0, 2.0, 3.0], 1, &rot(1)),
            Err(Error::Dimension(_))
        ));
    }

    proptest! {
        #[test]
        fn rope_is_an_isometry(
            v in prop::collection::vec(-10.0f64..10.0, 1..=8usize).prop_map(|mut v| { if v.len() % 2 == 1 { v.push(0.5); } v }),
            p in 0usize..100_000,
        ) {
            let cfg = rot(v.len() / 2);
            let out = rope_rotate(&v, p, &cfg).unwrap();
            prop_assert!((norm(&out) - norm(&v)).abs() < 1e-9);
        }
    }

    #[test]
    fn attention_single_token_returns_value_row() {
        let cfg = GroupedAttentionConfig {
            group_count: 2,
            key_dim: 4,
            model_dim: 4,
        };
        let q = DenseMatrix::from_rows(&[[0.3, -2.0, 1.0, 5.0]]).unwrap();
        let k = DenseMatrix::from_rows(&[[1.0, 1.0, -1.0, 0.2]]).unwrap();
        let v = DenseMatrix::from_rows(&[[7.0, -1.0, 0.25, 3.0]]).unwrap();
        let out = grouped_attention(&q, &k, &v, &cfg).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn attention_uniform_scores_average_values() {
        let cfg = GroupedAttentionConfig {
            group_count: 1,
            key_dim: 1,
            model_dim: 2,
        };
        let zero = DenseMatrix::zeros(2, 1);
        let v = DenseMatrix::identity(2);
        let out = grouped_attention(&zero, &zero, &v, &cfg).unwrap();
        assert_eq!(out.to_rows(), vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
    }

    #[test]
    fn attention_shape_errors() {
        let cfg = GroupedAttentionConfig {
            group_count: 2,
            key_dim: 4,
            model_dim: 4,
        };
        let q = DenseMatrix::zeros(3, 4);
        let short = DenseMatrix::zeros(2, 4);
        assert!(matches!(
            grouped_attention(&q, &short, &q, &cfg),
            Err(Error::Dimension(_))
        ));
        let odd_v = DenseMatrix::zeros(3, 3);
        assert!(matches!(
            grouped_attention(&q, &q, &odd_v, &cfg),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn encoder_is_deterministic_and_unit_norm() {
        let params = ToyEncoderParams::with_seed(7);
        let a = encode_post("The quick brown fox", &params).unwrap();
        let b = encode_post("The quick brown fox", &params).unwrap();
        assert_eq!(a, b);
        assert!((norm(&a) - 1.0).abs() < 1e-9);
        assert_eq!(a.len(), 32);
    }

    #[test]
    fn encoder_is_position_sensitive() {
        let params = ToyEncoderParams::with_seed(7);
        let a = encode_post("hello world", &params).unwrap();
        let b = encode_post("hello world hello world", &params).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn encoder_seed_changes_output() {
        let a = encode_post("same text", &ToyEncoderParams::with_seed(1)).unwrap();
        let b = encode_post("same text", &ToyEncoderParams::with_seed(2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn encoder_rejects_blank_text() {
        let params = ToyEncoderParams::with_seed(7);
        assert!(matches!(
            encode_post("   \t ", &params),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn encoder_rejects_mismatched_dims() {
        let bad = ToyEncoderParams::new(
            1,
            16,
            RotaryConfig {
                pair_count: 3,
                ..RotaryConfig::default()
            },
            GroupedAttentionConfig::default(),
        );
        assert!(matches!(bad, Err(Error::Parameter(_))));
    }
}
