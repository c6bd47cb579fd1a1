//! Dense graph convolution with hand-written gradients.
//!
//! Layer rule: `H⁽ˡ⁺¹⁾ = σ(Â H⁽ˡ⁾ W⁽ˡ⁾)` with `Â = D̃^{-1/2}(A + I)D̃^{-1/2}`.
//! Hidden layers use ReLU followed by inverted dropout while training; the
//! last layer is linear.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::labels::DIMENSIONS;
use crate::matrix::DenseMatrix;

/// Symmetrically normalized adjacency with self-loops.
///
/// Only [`normalize_adjacency`] constructs it, so a raw adjacency cannot be
/// fed to the layers by mistake.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency(DenseMatrix);

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }
}

/// Returns `D̃^{-1/2}(A + I)D̃^{-1/2}`.
///
/// `A` must be symmetric, nonnegative, finite and have a zero diagonal. A
/// nonzero diagonal is taken as evidence that the matrix was already
/// normalized (or already carries self-loops) and is rejected as a
/// consistency error.
pub fn normalize_adjacency(a: &DenseMatrix) -> Result<NormalizedAdjacency> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Dimension(format!("adjacency is {:?}", a.shape())));
    }
    if !a.all_finite() || a.as_slice().iter().any(|&v| v < 0.0) {
        return Err(Error::Parameter(
            "adjacency must be finite and nonnegative".into(),
        ));
    }
    if (0..n).any(|i| a[(i, i)] != 0.0) {
        return Err(Error::Consistency(
            "adjacency has self-loops; it is already normalized or augmented".into(),
        ));
    }
    if !a.is_symmetric() {
        return Err(Error::Parameter("adjacency must be symmetric".into()));
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| 1.0 / (1.0 + a.row(i).iter().sum::<f64>()).sqrt())
        .collect();
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let tilde = if i == j { 1.0 } else { a[(i, j)] };
            out[(i, j)] = inv_sqrt_deg[i] * tilde * inv_sqrt_deg[j];
        }
    }
    Ok(NormalizedAdjacency(out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnLayer {
    pub weight: DenseMatrix,
    pub activation: Activation,
}

/// Two-way softmax classifier for one personality axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    /// `2 × d` weights.
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl ClassifierHead {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(2, dim),
            bias: vec![0.0; 2],
        }
    }

    pub fn logits(&self, x: &[f64]) -> [f64; 2] {
        let dot = |r: usize| -> f64 { self.weight.row(r).iter().zip(x).map(|(w, v)| w * v).sum() };
        [dot(0) + self.bias[0], dot(1) + self.bias[1]]
    }
}

/// All learnable parameters: GCN layers, user-attention vector, four heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<GcnLayer>,
    pub user_attention: Vec<f64>,
    pub heads: Vec<ClassifierHead>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            input_dim: 32,
            hidden_dim: 64,
            depth: 2,
        }
    }
}

impl ModelParams {
    /// Glorot-uniform layers and heads, zero attention vector and biases.
    ///
    /// The last layer maps back to `input_dim` so that outputs can be compared
    /// with inputs by the reconstruction loss.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        if shape.depth == 0 || shape.input_dim == 0 || shape.hidden_dim == 0 {
            return Err(Error::Parameter(format!("invalid model shape {shape:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let values = (0..rows * cols)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            DenseMatrix::from_vec(rows, cols, values).expect("shape")
        };
        let mut dims = vec![shape.input_dim];
        dims.extend(std::iter::repeat_n(shape.hidden_dim, shape.depth - 1));
        dims.push(shape.input_dim);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| GcnLayer {
                weight: glorot(w[0], w[1]),
                activation: if l + 1 == shape.depth {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect();
        let heads = (0..DIMENSIONS.len())
            .map(|_| ClassifierHead {
                weight: glorot(2, shape.input_dim),
                bias: vec![0.0; 2],
            })
            .collect();
        Ok(Self {
            layers,
            user_attention: vec![0.0; shape.input_dim],
            heads,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Parameter("model has no layers".into()));
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[0].weight.cols() != pair[1].weight.rows() {
                return Err(Error::Dimension(format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    pair[0].weight.cols(),
                    l + 1,
                    pair[1].weight.rows()
                )));
            }
        }
        if self.user_attention.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "attention vector has {} entries, input width is {}",
                self.user_attention.len(),
                self.input_dim()
            )));
        }
        if self.heads.len() != DIMENSIONS.len() {
            return Err(Error::Dimension(format!("{} heads, expected 4", self.heads.len())));
        }
        for (k, h) in self.heads.iter().enumerate() {
            if h.weight.shape() != (2, self.output_dim()) || h.bias.len() != 2 {
                return Err(Error::Dimension(format!(
                    "head {k} is {:?}, expected 2x{}",
                    h.weight.shape(),
                    self.output_dim()
                )));
            }
        }
        Ok(())
    }

    /// A parameter set of the same shapes filled with zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| GcnLayer {
                    weight: DenseMatrix::zeros(l.weight.rows(), l.weight.cols()),
                    activation: l.activation,
                })
                .collect(),
            user_attention: vec![0.0; self.user_attention.len()],
            heads: self
                .heads
                .iter()
                .map(|h| ClassifierHead::zeros(h.weight.cols()))
                .collect(),
        }
    }

    /// Named flat views of every parameter tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.weight"), layer.weight.as_slice()));
        }
        out.push(("user_attention".into(), &self.user_attention));
        for (head, dim) in self.heads.iter().zip(DIMENSIONS) {
            out.push((format!("head.{}.weight", dim.key()), head.weight.as_slice()));
            out.push((format!("head.{}.bias", dim.key()), &head.bias));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{l}.weight"), layer.weight.as_mut_slice()));
        }
        out.push(("user_attention".into(), &mut self.user_attention));
        for (head, dim) in self.heads.iter_mut().zip(DIMENSIONS) {
            out.push((format!("head.{}.weight", dim.key()), head.weight.as_mut_slice()));
            out.push((format!("head.{}.bias", dim.key()), &mut head.bias));
        }
        out
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    /// Order-sensitive checksum of every parameter bit.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        for (_, t) in self.tensors() {
            for v in t {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        fnv1a64(&bytes)
    }
}

/// Activations saved by [`gcn_forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `H⁽⁰⁾`.
    pub input: DenseMatrix,
    /// `Â H⁽ˡ⁾` per layer.
    propagated: Vec<DenseMatrix>,
    /// Pre-activation `Â H⁽ˡ⁾ W⁽ˡ⁾` per layer.
    pre_activation: Vec<DenseMatrix>,
    /// Per hidden layer, `0` or `1/(1−rate)` for each entry when training.
    dropout_scale: Vec<Option<DenseMatrix>>,
    /// `H⁽ˡ⁺¹⁾` per layer; the last entry is the network output.
    pub outputs: Vec<DenseMatrix>,
    params_checksum: u64,
    adjacency_checksum: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &DenseMatrix {
        self.outputs.last().expect("at least one layer")
    }
}

fn matrix_checksum(m: &DenseMatrix) -> u64 {
    let bytes: Vec<u8> = m
        .as_slice()
        .iter()
        .flat_map(|v| v.to_bits().to_le_bytes())
        .collect();
    fnv1a64(&bytes)
}

/// Runs every layer; dropout masks are drawn from `rng_seed` only when
/// `training` is set.
pub fn gcn_forward(
    input: &DenseMatrix,
    adjacency: &NormalizedAdjacency,
    params: &ModelParams,
    dropout_rate: f64,
    training: bool,
    rng_seed: u64,
) -> Result<ForwardCache> {
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::Parameter(format!(
            "dropout rate {dropout_rate} outside [0, 1)"
        )));
    }
    if input.rows() != adjacency.size() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} graph nodes",
            input.rows(),
            adjacency.size()
        )));
    }
    let a = adjacency.matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut x = input.clone();
    let mut propagated = Vec::with_capacity(params.layers.len());
    let mut pre_activation = Vec::with_capacity(params.layers.len());
    let mut dropout_scale = Vec::with_capacity(params.layers.len());
    let mut outputs = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        if x.cols() != layer.weight.rows() {
            return Err(Error::Dimension(format!(
                "layer {l} expects width {}, got {}",
                layer.weight.rows(),
                x.cols()
            )));
        }
        let p = a.matmul(&x)?;
        let s = p.matmul(&layer.weight)?;
        let mut out = match layer.activation {
            Activation::Relu => s.map(|v| v.max(0.0)),
            Activation::Identity => s.clone(),
        };
        let hidden = l + 1 < params.layers.len();
        let scale = if hidden && training && dropout_rate > 0.0 {
            let keep = 1.0 / (1.0 - dropout_rate);
            let mask: Vec<f64> = (0..out.rows() * out.cols())
                .map(|_| if rng.gen::<f64>() < dropout_rate { 0.0 } else { keep })
                .collect();
            let mask = DenseMatrix::from_vec(out.rows(), out.cols(), mask)?;
            for (o, m) in out.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                *o *= m;
            }
            Some(mask)
        } else {
            None
        };
        propagated.push(p);
        pre_activation.push(s);
        dropout_scale.push(scale);
        outputs.push(out.clone());
        x = out;
    }
    Ok(ForwardCache {
        input: input.clone(),
        propagated,
        pre_activation,
        dropout_scale,
        outputs,
        params_checksum: params.checksum(),
        adjacency_checksum: matrix_checksum(a),
    })
}

/// Layer-weight gradients plus the gradient with respect to `H⁽⁰⁾`.
#[derive(Clone, Debug)]
pub struct GcnGradients {
    pub layers: Vec<DenseMatrix>,
    pub input: DenseMatrix,
}

/// Backpropagates `d_output = ∂L/∂H⁽ᴸ⁾` through the cached forward pass.
pub fn gcn_backward(
    cache: &ForwardCache,
    adjacency: &NormalizedAdjacency,
    params: &ModelParams,
    d_output: &DenseMatrix,
) -> Result<GcnGradients> {
    if cache.params_checksum != params.checksum()
        || cache.adjacency_checksum != matrix_checksum(adjacency.matrix())
    {
        return Err(Error::Consistency(
            "forward cache was produced with different parameters or graph".into(),
        ));
    }
    if d_output.shape() != cache.output().shape() {
        return Err(Error::Dimension(format!(
            "upstream gradient {:?} vs output {:?}",
            d_output.shape(),
            cache.output().shape()
        )));
    }
    let a = adjacency.matrix();
    let mut grad = d_output.clone();
    let mut layer_grads = vec![DenseMatrix::zeros(0, 0); params.layers.len()];
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        if let Some(mask) = &cache.dropout_scale[l] {
            for (g, m) in grad.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                *g *= m;
            }
        }
        if layer.activation == Activation::Relu {
            for (g, s) in grad
                .as_mut_slice()
                .iter_mut()
                .zip(cache.pre_activation[l].as_slice())
            {
                if *s <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        layer_grads[l] = cache.propagated[l].t_matmul(&grad)?;
        let d_prop = grad.matmul_t(&layer.weight)?;
        grad = a.t_matmul(&d_prop)?;
    }
    Ok(GcnGradients {
        layers: layer_grads,
        input: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_layer(weight: DenseMatrix, activation: Activation) -> ModelParams {
        let d = weight.cols();
        ModelParams {
            user_attention: vec![0.0; weight.rows()],
            layers: vec![GcnLayer { weight, activation }],
            heads: (0..4).map(|_| ClassifierHead::zeros(d)).collect(),
        }
    }

    #[test]
    fn isolated_node_normalizes_to_one() {
        let out = normalize_adjacency(&DenseMatrix::zeros(1, 1)).unwrap();
        assert_eq!(out.matrix().to_rows(), vec![vec![1.0]]);
    }

    #[test]
    fn two_node_edge_gives_halves() {
        let a = DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let out = normalize_adjacency(&a).unwrap();
        for v in out.matrix().as_slice() {
            assert!((v - 0.5).abs() <= 1e-15);
        }
    }

    #[test]
    fn isolated_rows_are_unit_vectors() {
        let a = DenseMatrix::from_rows(&[[0.0, 2.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let out = normalize_adjacency(&a).unwrap();
        assert_eq!(out.matrix().row(2), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn double_normalization_is_rejected() {
        let a = DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let once = normalize_adjacency(&a).unwrap();
        assert!(matches!(
            normalize_adjacency(once.matrix()),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn normalize_rejects_bad_input() {
        let asym = DenseMatrix::from_rows(&[[0.0, 1.0], [0.5, 0.0]]).unwrap();
        assert!(matches!(normalize_adjacency(&asym), Err(Error::Parameter(_))));
        let neg = DenseMatrix::from_rows(&[[0.0, -1.0], [-1.0, 0.0]]).unwrap();
        assert!(normalize_adjacency(&neg).is_err());
        assert!(normalize_adjacency(&DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn identity_graph_identity_layer_passes_through() {
        let a = normalize_adjacency(&DenseMatrix::zeros(3, 3)).unwrap();
        let h0 = DenseMatrix::from_rows(&[[1.0, -2.0], [0.5, 3.0], [0.0, 1.0]]).unwrap();
        let params = single_layer(DenseMatrix::identity(2), Activation::Identity);
        let cache = gcn_forward(&h0, &a, &params, 0.0, false, 0).unwrap();
        assert_eq!(cache.output(), &h0);
    }

    #[test]
    fn two_node_relu_layer() {
        let a = normalize_adjacency(&DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap()).unwrap();
        let h0 = DenseMatrix::identity(2);
        let params = single_layer(DenseMatrix::identity(2), Activation::Relu);
        let cache = gcn_forward(&h0, &a, &params, 0.0, false, 0).unwrap();
        for v in cache.output().as_slice() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn eval_forward_is_deterministic_and_ignores_seed() {
        let a = normalize_adjacency(&DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap()).unwrap();
        let h0 = DenseMatrix::from_rows(&[[0.3, -0.1], [0.2, 0.9]]).unwrap();
        let params = ModelParams::init(
            ModelShape {
                input_dim: 2,
                hidden_dim: 4,
                depth: 2,
            },
            5,
        )
        .unwrap();
        let x = gcn_forward(&h0, &a, &params, 0.2, false, 1).unwrap();
        let y = gcn_forward(&h0, &a, &params, 0.2, false, 2).unwrap();
        assert_eq!(x.output(), y.output());
        let t1 = gcn_forward(&h0, &a, &params, 0.5, true, 1).unwrap();
        let t2 = gcn_forward(&h0, &a, &params, 0.5, true, 1).unwrap();
        assert_eq!(t1.output(), t2.output());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let a = normalize_adjacency(&DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap()).unwrap();
        let h0 = DenseMatrix::from_rows(&[[0.3, -0.1], [0.2, 0.9]]).unwrap();
        let params = ModelParams::init(
            ModelShape {
                input_dim: 2,
                hidden_dim: 3,
                depth: 2,
            },
            1,
        )
        .unwrap();
        let cache = gcn_forward(&h0, &a, &params, 0.0, false, 0).unwrap();
        let g = gcn_backward(&cache, &a, &params, &DenseMatrix::zeros(2, 2)).unwrap();
        assert!(g.layers.iter().all(|m| m.max_abs() == 0.0));
        assert_eq!(g.input.max_abs(), 0.0);
    }

    #[test]
    fn single_linear_layer_half_square_norm() {
        // L = ½‖H1‖², H1 = Â H0 W  ⇒  dL/dW = (Â H0)ᵀ H1.
        let a = normalize_adjacency(
            &DenseMatrix::from_rows(&[[0.0, 0.4, 0.0], [0.4, 0.0, 1.0], [0.0, 1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let h0 = DenseMatrix::from_rows(&[[1.0, 2.0], [-0.5, 0.3], [0.7, -1.1]]).unwrap();
        let w = DenseMatrix::from_rows(&[[0.2, -0.3, 0.5], [0.9, 0.1, -0.4]]).unwrap();
        let params = single_layer(w, Activation::Identity);
        let cache = gcn_forward(&h0, &a, &params, 0.0, false, 0).unwrap();
        let h1 = cache.output().clone();
        let g = gcn_backward(&cache, &a, &params, &h1).unwrap();
        let expected = a.matrix().matmul(&h0).unwrap().t_matmul(&h1).unwrap();
        for (x, y) in g.layers[0].as_slice().iter().zip(expected.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let a = normalize_adjacency(&DenseMatrix::zeros(2, 2)).unwrap();
        let h0 = DenseMatrix::identity(2);
        let mut params = single_layer(DenseMatrix::identity(2), Activation::Identity);
        let cache = gcn_forward(&h0, &a, &params, 0.0, false, 0).unwrap();
        params.layers[0].weight[(0, 1)] = 0.25;
        assert!(matches!(
            gcn_backward(&cache, &a, &params, &h0),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn init_chains_dimensions() {
        let p = ModelParams::init(ModelShape::default(), 3).unwrap();
        p.validate().unwrap();
        assert_eq!(p.layers.len(), 2);
        assert_eq!(p.layers[0].weight.shape(), (32, 64));
        assert_eq!(p.layers[1].weight.shape(), (64, 32));
        assert_eq!(p.layers[0].activation, Activation::Relu);
        assert_eq!(p.layers[1].activation, Activation::Identity);
        assert_eq!(p.tensors().len(), 2 + 1 + 8);
    }
}
