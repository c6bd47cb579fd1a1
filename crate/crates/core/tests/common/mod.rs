#![allow(dead_code)]

use persona_graph::gcn::{ModelParams, ModelShape};
use persona_graph::graph::attach_user;
use persona_graph::labels::TypeCode;
use persona_graph::matrix::DenseMatrix;
use persona_graph::model::{loss_and_grad, ObjectiveConfig, PassSeeds, PreparedGraph};
use persona_graph::objectives::LossWeights;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct GradInstance {
    pub params: ModelParams,
    pub graph: PreparedGraph,
    pub label: TypeCode,
    pub cfg: ObjectiveConfig,
    pub seeds: PassSeeds,
}

/// Random small problem: at most 6 nodes and 8 feature dims.
pub fn grad_instance(seed: u64) -> GradInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let user_node = seed % 4 != 3;
    let posts = rng.gen_range(2..=5);
    let dim = rng.gen_range(2..=8);
    let rows: Vec<Vec<f64>> = (0..posts)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut a = DenseMatrix::zeros(posts, posts);
    for i in 0..posts {
        for j in i + 1..posts {
            if rng.gen_bool(0.6) {
                let w = rng.gen_range(0.1..1.5);
                a[(i, j)] = w;
                a[(j, i)] = w;
            }
        }
    }
    if user_node {
        let links: Vec<f64> = (0..posts).map(|_| rng.gen_range(0.05..1.0)).collect();
        a = attach_user(&a, &links).unwrap();
    }
    let graph =
        PreparedGraph::from_parts(DenseMatrix::from_rows(&rows).unwrap(), a, user_node).unwrap();
    let shape = ModelShape {
        input_dim: dim,
        hidden_dim: rng.gen_range(2..=8),
        depth: rng.gen_range(1..=3),
    };
    let mut params = ModelParams::init(shape, seed ^ 0x5eed).unwrap();
    for w in &mut params.user_attention {
        *w = rng.gen_range(-1.0..1.0);
    }
    for h in &mut params.heads {
        for b in &mut h.bias {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    let label = TypeCode(std::array::from_fn(|_| rng.gen_range(0..2)));
    let cfg = ObjectiveConfig {
        weights: LossWeights {
            alpha: rng.gen_range(0.2..1.5),
            beta: rng.gen_range(0.2..1.5),
            gamma: rng.gen_range(0.05..0.5),
            lambda: rng.gen_range(0.2..1.0),
            tau_temp: rng.gen_range(0.3..1.0),
        },
        neg_ratio: 1.0,
        contrastive_negatives: rng.gen_range(1..=3),
        dropout: if seed % 2 == 0 { 0.0 } else { 0.2 },
        ..ObjectiveConfig::default()
    };
    GradInstance {
        params,
        graph,
        label,
        cfg,
        seeds: PassSeeds {
            dropout: seed.wrapping_mul(31),
            sampling: seed.wrapping_mul(17),
        },
    }
}

/// Max over tensors of `‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞, 1e-8)`,
/// with central differences of step `h`. Returns the worst tensor name too.
pub fn gradient_check(inst: &GradInstance, h: f64) -> (f64, String) {
    let loss = |p: &ModelParams| {
        loss_and_grad(p, &inst.graph, inst.label, &inst.cfg, inst.seeds)
            .unwrap()
            .0
            .final_loss
    };
    let (_, analytic) =
        loss_and_grad(&inst.params, &inst.graph, inst.label, &inst.cfg, inst.seeds).unwrap();
    let mut worst = (0.0, String::new());
    let names: Vec<String> = inst.params.tensors().into_iter().map(|(n, _)| n).collect();
    for (t, name) in names.iter().enumerate() {
        let len = inst.params.tensors()[t].1.len();
        let a = analytic.tensors()[t].1.to_vec();
        let mut numeric = vec![0.0; len];
        for k in 0..len {
            let mut plus = inst.params.clone();
            plus.tensors_mut()[t].1[k] += h;
            let mut minus = inst.params.clone();
            minus.tensors_mut()[t].1[k] -= h;
            numeric[k] = (loss(&plus) - loss(&minus)) / (2.0 * h);
        }
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let diff: Vec<f64> = a.iter().zip(&numeric).map(|(x, y)| x - y).collect();
        let rel = inf(&diff) / inf(&a).max(inf(&numeric)).max(1e-8);
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    worst
}
