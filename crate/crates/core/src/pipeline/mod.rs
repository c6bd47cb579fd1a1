//! Dataset handling, training over users, evaluation and prediction.

mod dataset;
mod metrics;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamState};
use crate::checkpoint::Checkpoint;
use crate::config::Settings;
use crate::error::{Error, Result};
use crate::gcn::ModelParams;
use crate::graph::{build_graph, build_graph_uniform, EdgeParams};
use crate::hash::fnv1a64_parts;
use crate::labels::{TypeCode, DIMENSIONS};
use crate::model::{infer, loss_and_grad, LossBreakdown, PassSeeds, PreparedGraph};
use crate::providers::{build_provider, Provider};

pub use dataset::{
    ingest, mask_label_words, mask_records, split, synth_dataset, write_jsonl, DataFormat,
    Ingested, SynthSpec, UserRecord, MIN_SPLIT_USERS, POST_SEPARATOR,
};
pub use metrics::{macro_f1, macro_f1_detail, MacroF1};

/// Switches that remove one component for comparison runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    None,
    NoPersonalization,
    NoContradiction,
    NoUserNode,
    NoNodeLoss,
    NoEdgeLoss,
    NoContrastiveLoss,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::None,
        Ablation::NoPersonalization,
        Ablation::NoContradiction,
        Ablation::NoUserNode,
        Ablation::NoNodeLoss,
        Ablation::NoEdgeLoss,
        Ablation::NoContrastiveLoss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoPersonalization => "no-personalization",
            Ablation::NoContradiction => "no-contradiction",
            Ablation::NoUserNode => "no-user-node",
            Ablation::NoNodeLoss => "no-node-loss",
            Ablation::NoEdgeLoss => "no-edge-loss",
            Ablation::NoContrastiveLoss => "no-contrastive-loss",
        }
    }

    pub fn apply(self, settings: &mut Settings) {
        let w = &mut settings.objective.weights;
        match self {
            Ablation::None => {}
            Ablation::NoPersonalization => settings.edge.lambda_p = 0.0,
            Ablation::NoContradiction => settings.edge.lambda_c = 0.0,
            Ablation::NoUserNode => settings.edge.user_node = false,
            Ablation::NoNodeLoss => w.alpha = 0.0,
            Ablation::NoEdgeLoss => w.beta = 0.0,
            Ablation::NoContrastiveLoss => w.gamma = 0.0,
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown ablation {s:?}")))
    }
}

/// A user's prepared graph and label.
#[derive(Clone, Debug)]
pub struct LabeledGraph {
    pub user_id: String,
    pub label: TypeCode,
    pub graph: PreparedGraph,
}

/// Builds every user's graph in parallel, preserving input order.
pub fn prepare_users(
    records: &[UserRecord],
    provider: &dyn Provider,
    edge: &EdgeParams,
) -> Result<Vec<LabeledGraph>> {
    records
        .par_iter()
        .map(|r| {
            let graph = build_graph_uniform(&r.posts, provider, edge)
                .and_then(|g| PreparedGraph::new(&g))
                .map_err(|e| e.context(format!("user {}", r.user_id)))?;
            Ok(LabeledGraph {
                user_id: r.user_id.clone(),
                label: r.mbti,
                graph,
            })
        })
        .collect()
}

/// Four per-axis scores, serialized under the axis keys.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct DimScores {
    pub EI: f64,
    pub SN: f64,
    pub TF: f64,
    pub JP: f64,
}

impl DimScores {
    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            EI: a[0],
            SN: a[1],
            TF: a[2],
            JP: a[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.EI, self.SN, self.TF, self.JP]
    }

    pub fn mean(self) -> f64 {
        self.to_array().iter().sum::<f64>() / 4.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dims: DimScores,
    pub avg: f64,
    /// Axis/class pairs absent from both predictions and labels.
    pub flags: Vec<String>,
}

fn score_predictions(preds: &[TypeCode], labels: &[TypeCode]) -> Result<EvalReport> {
    let mut dims = [0.0; 4];
    let mut flags = Vec::new();
    for (k, dim) in DIMENSIONS.iter().enumerate() {
        let p: Vec<u8> = preds.iter().map(|t| t.bit(k)).collect();
        let y: Vec<u8> = labels.iter().map(|t| t.bit(k)).collect();
        let m = macro_f1_detail(&p, &y)?;
        dims[k] = m.score;
        for (c, absent) in m.absent.iter().enumerate() {
            if *absent {
                flags.push(format!("{}: class {} absent, scored F1=0", dim.key(), dim.letters[c]));
            }
        }
    }
    let dims = DimScores::from_array(dims);
    Ok(EvalReport {
        dims,
        avg: dims.mean(),
        flags,
    })
}

/// Eval-mode predictions and per-axis Macro-F1 over `graphs`.
pub fn evaluate_graphs(params: &ModelParams, graphs: &[LabeledGraph]) -> Result<EvalReport> {
    if graphs.is_empty() {
        return Err(Error::EmptyInput("no users to evaluate".into()));
    }
    let preds = graphs
        .par_iter()
        .map(|g| infer(params, &g.graph).map(|o| o.type_code()))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<TypeCode> = graphs.iter().map(|g| g.label).collect();
    score_predictions(&preds, &labels)
}

/// Builds graphs for `records` with the given settings and evaluates.
pub fn evaluate(params: &ModelParams, records: &[UserRecord], settings: &Settings) -> Result<EvalReport> {
    let provider = build_provider(&settings.provider)?;
    let graphs = prepare_users(&mask_records(records), provider.as_ref(), &settings.edge)?;
    evaluate_graphs(params, &graphs)
}

/// Predicts the per-axis majority class of `train` for every user of `test`.
pub fn majority_baseline(train: &[TypeCode], test: &[TypeCode]) -> Result<EvalReport> {
    if train.is_empty() {
        return Err(Error::EmptyInput("no training labels".into()));
    }
    let mut bits = [0u8; 4];
    for (k, b) in bits.iter_mut().enumerate() {
        let ones = train.iter().filter(|t| t.bit(k) == 1).count();
        *b = u8::from(2 * ones > train.len());
    }
    score_predictions(&vec![TypeCode(bits); test.len()], test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean `L_final` over training users.
    pub train_loss: f64,
    pub val_avg: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub adam: AdamState,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
}

fn pass_seeds(seed: u64, epoch: usize, user: usize) -> PassSeeds {
    let base = [seed.to_le_bytes(), (epoch as u64).to_le_bytes(), (user as u64).to_le_bytes()];
    let mix = |tag: &[u8]| fnv1a64_parts(&[&base[0], &base[1], &base[2], tag]);
    PassSeeds {
        dropout: mix(b"dropout"),
        sampling: mix(b"sampling"),
    }
}

fn non_finite(user: &str, epoch: usize, b: &LossBreakdown) -> Error {
    Error::Numeric(format!(
        "non-finite loss for user {user} at epoch {epoch}: class={} node={} edge={} contrastive={} final={}",
        b.class, b.node, b.edge, b.contrastive, b.final_loss
    ))
}

/// Trains from scratch with Adam, one step per batch of users, and returns
/// the parameters with the best validation average (the last ones when
/// `val` is empty).
pub fn train_graphs(
    train: &[LabeledGraph],
    val: &[LabeledGraph],
    settings: &Settings,
    seed: u64,
) -> Result<TrainOutcome> {
    settings.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::EmptyInput("empty training split".into()))?;
    let input_dim = first.graph.posts.cols();
    if let Some(bad) = train.iter().chain(val).find(|g| g.graph.posts.cols() != input_dim) {
        return Err(Error::Dimension(format!(
            "user {} has embedding width {}, expected {input_dim}",
            bad.user_id,
            bad.graph.posts.cols()
        )));
    }
    let cfg = settings.objective;
    let tc = settings.train;
    let mut params = ModelParams::init(settings.model_shape(input_dim), seed)?;
    let mut adam = AdamState::new(&params);
    let mut best: Option<(f64, usize, ModelParams, AdamState)> = None;
    let mut history = Vec::new();
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..tc.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64_parts(&[
            &seed.to_le_bytes(),
            &(epoch as u64).to_le_bytes(),
            b"order",
        ]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let results = batch
                .par_iter()
                .map(|&u| {
                    let g = &train[u];
                    loss_and_grad(&params, &g.graph, g.label, &cfg, pass_seeds(seed, epoch, u))
                        .map_err(|e| e.context(format!("user {} epoch {epoch}", g.user_id)))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = params.zeros_like();
            for (&u, (breakdown, g)) in batch.iter().zip(&results) {
                if !breakdown.is_finite() {
                    return Err(non_finite(&train[u].user_id, epoch, breakdown));
                }
                loss_sum += breakdown.final_loss;
                grads.add_scaled(g, 1.0 / batch.len() as f64);
            }
            adam_step(&mut params, &grads, &mut adam, tc.lr)
                .map_err(|e| e.context(format!("epoch {epoch}")))?;
        }
        let val_avg = if val.is_empty() {
            None
        } else {
            Some(evaluate_graphs(&params, val)?.avg)
        };
        history.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_avg,
        });
        if let Some(score) = val_avg {
            if best.as_ref().is_none_or(|(b, ..)| score > *b) {
                best = Some((score, epoch, params.clone(), adam.clone()));
                stale = 0;
            } else {
                stale += 1;
                if tc.patience > 0 && stale >= tc.patience {
                    log::info!("early stop at epoch {epoch}");
                    break;
                }
            }
        }
    }
    let (params, adam, best_epoch) = match best {
        Some((_, epoch, p, a)) => (p, a, epoch),
        None => (params, adam, history.len().saturating_sub(1)),
    };
    Ok(TrainOutcome {
        params,
        adam,
        history,
        best_epoch,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunDetail {
    pub seed: u64,
    pub dims: DimScores,
    pub avg: f64,
    pub best_epoch: usize,
    pub loss_curve: Vec<f64>,
    pub val_curve: Vec<Option<f64>>,
    pub flags: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub dims: DimScores,
    pub avg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Test-set Macro-F1 (%) averaged over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dims: DimScores,
    pub avg: f64,
    pub runs: usize,
    pub stddev: Spread,
    pub ablation: Ablation,
    pub seeds: Vec<u64>,
    pub majority_baseline: EvalReport,
    pub users: SplitSizes,
    pub per_run: Vec<RunDetail>,
    pub errors: Vec<String>,
    pub config: BTreeMap<String, String>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug)]
pub struct Experiment {
    pub report: RunReport,
    /// Parameters from the first successful run.
    pub checkpoint: Checkpoint,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Masks, splits, builds graphs once, then trains and tests `n_runs` times
/// with seeds `train.seed, train.seed + 1, …`.
///
/// Failed runs are listed in `errors`; if every run fails the first error
/// is returned.
pub fn run_experiment(
    records: &[UserRecord],
    settings: &Settings,
    n_runs: usize,
    ablation: Ablation,
) -> Result<Experiment> {
    if n_runs == 0 {
        return Err(Error::Parameter("runs must be >= 1".into()));
    }
    let mut settings = settings.clone();
    ablation.apply(&mut settings);
    settings.validate()?;
    let masked = mask_records(records);
    let [train, val, test] = split(&masked, &settings.split)?;
    let provider = build_provider(&settings.provider)?;
    let prep = |r: &[UserRecord]| prepare_users(r, provider.as_ref(), &settings.edge);
    let (train_g, val_g, test_g) = (prep(&train)?, prep(&val)?, prep(&test)?);
    let labels = |g: &[LabeledGraph]| g.iter().map(|x| x.label).collect::<Vec<_>>();
    let baseline = majority_baseline(&labels(&train_g), &labels(&test_g))?;

    let mut details = Vec::new();
    let mut errors: Vec<Error> = Vec::new();
    let mut checkpoint = None;
    let seeds: Vec<u64> = (0..n_runs as u64).map(|r| settings.train.seed + r).collect();
    for &seed in &seeds {
        let outcome = train_graphs(&train_g, &val_g, &settings, seed)
            .and_then(|o| evaluate_graphs(&o.params, &test_g).map(|e| (o, e)));
        match outcome {
            Ok((o, eval)) => {
                details.push(RunDetail {
                    seed,
                    dims: eval.dims,
                    avg: eval.avg,
                    best_epoch: o.best_epoch,
                    loss_curve: o.history.iter().map(|h| h.train_loss).collect(),
                    val_curve: o.history.iter().map(|h| h.val_avg).collect(),
                    flags: eval.flags,
                });
                if checkpoint.is_none() {
                    checkpoint = Some(Checkpoint::new(&settings, seed, o.best_epoch, o.params, o.adam));
                }
            }
            Err(e) => {
                log::error!("run with seed {seed} failed: {e}");
                errors.push(e.context(format!("seed {seed}")));
            }
        }
    }
    let Some(checkpoint) = checkpoint else {
        return Err(errors.into_iter().next().expect("at least one run"));
    };
    let mut dims = [0.0; 4];
    let mut spread = [0.0; 4];
    for k in 0..4 {
        let v: Vec<f64> = details.iter().map(|d| d.dims.to_array()[k]).collect();
        (dims[k], spread[k]) = mean_std(&v);
    }
    let avgs: Vec<f64> = details.iter().map(|d| d.avg).collect();
    let (avg_mean, avg_std) = mean_std(&avgs);
    let dims = DimScores::from_array(dims);
    let report = RunReport {
        avg: dims.mean(),
        dims,
        runs: n_runs,
        stddev: Spread {
            dims: DimScores::from_array(spread),
            avg: avg_std,
        },
        ablation,
        seeds,
        majority_baseline: baseline,
        users: SplitSizes {
            train: train.len(),
            val: val.len(),
            test: test.len(),
        },
        per_run: details,
        errors: errors.iter().map(|e| e.to_string()).collect(),
        config: settings.snapshot(),
    };
    debug_assert!((report.avg - avg_mean).abs() < 1e-9);
    Ok(Experiment { report, checkpoint })
}

/// One axis of a prediction: the two letters with their probabilities.
pub type AxisProbabilities = BTreeMap<String, f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct PredictedProbs {
    pub EI: AxisProbabilities,
    pub SN: AxisProbabilities,
    pub TF: AxisProbabilities,
    pub JP: AxisProbabilities,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "type")]
    pub type_code: String,
    pub probs: PredictedProbs,
}

/// Builds the user's graph with the trained attention vector and classifies.
pub fn predict_user(
    params: &ModelParams,
    posts: &[String],
    provider: &dyn Provider,
    edge: &EdgeParams,
) -> Result<Prediction> {
    let posts: Vec<String> = posts
        .iter()
        .map(|p| mask_label_words(p))
        .filter(|p| !p.trim().is_empty())
        .collect();
    if posts.is_empty() {
        return Err(Error::EmptyInput("no non-blank posts to classify".into()));
    }
    let graph = build_graph(&posts, provider, edge, &params.user_attention)?;
    let out = infer(params, &PreparedGraph::new(&graph)?)?;
    let axis = |k: usize| -> AxisProbabilities {
        let letters = DIMENSIONS[k].letters;
        (0..2)
            .map(|c| (letters[c].to_string(), out.probs[k][c]))
            .collect()
    };
    Ok(Prediction {
        type_code: out.type_code().to_string(),
        probs: PredictedProbs {
            EI: axis(0),
            SN: axis(1),
            TF: axis(2),
            JP: axis(3),
        },
    })
}
