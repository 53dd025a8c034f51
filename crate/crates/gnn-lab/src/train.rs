//! Binary cross-entropy training with plain (mini)batch gradient descent,
//! the closed-form gradient route for attention pooling in theory mode, and
//! gradient verification against finite differences.

use crate::autodiff::{
    finite_diff_grad, log1p_exp, sigmoid, softmax_beta_values, Tensor,
};
use crate::graph::Graph;
use crate::model::{
    effective_adjacency, forward, one_hot_features, Conv, ForwardPass, GradMode, ModelError,
    ModelParams, Pooling,
};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training data is empty")]
    EmptyData,
    #[error("graph {0} has no label; training requires labels 0/1")]
    MissingLabel(usize),
    #[error("loss became NaN at step {step}; aborting")]
    NanLoss { step: usize },
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("epochs must be at least 1")]
    NoEpochs,
    #[error("closed-form gradients require theory mode with attention pooling")]
    ClosedFormUnavailable,
    #[error("checkpoint version {found} is unsupported (expected {expected})")]
    BadVersion { found: u32, expected: u32 },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error in {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Batch {
    Full,
    Mini(usize),
}

/// Update rule. Plain gradient descent mirrors the gradient-flow analysis
/// and is the default; Adam is what the experiment suite trains with, since
/// the grid features are too badly conditioned for plain descent at the
/// standard budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: Batch,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub shuffle: bool,
    /// Monitor / trace cadence in optimizer steps. The final step is always
    /// logged.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 100,
            batch: Batch::Full,
            optimizer: Optimizer::Sgd,
            seed: 0,
            shuffle: true,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainTrace {
    pub entries: Vec<TraceEntry>,
    pub warnings: Vec<String>,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,train_acc\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.step, e.loss, e.train_acc));
        }
        out
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.entries.last().map(|e| e.train_acc)
    }
}

/// Read-only view of the optimizer state handed to monitors after a step.
pub struct StepInfo<'a> {
    pub step: usize,
    pub epoch: usize,
    pub model: &'a ModelParams,
    pub loss: f64,
    pub train_acc: f64,
    /// Last applied update of the classifier vector (zero at step 0).
    pub delta_classifier: &'a Tensor,
    /// Last applied update of the attention vector (zero at step 0).
    pub delta_attn: &'a Tensor,
}

/// Observer invoked between optimizer steps at the configured cadence.
pub trait TrainMonitor {
    fn observe(&mut self, info: &StepInfo<'_>);
}

/// Stable binary cross-entropy in logit form:
/// `log(1 + exp(z)) - y z = -[y log p + (1-y) log(1-p)]` for `p = sigma(z)`.
pub fn bce_loss_logit(z: f64, y: f64) -> f64 {
    log1p_exp(z) - y * z
}

/// Binary cross-entropy from a probability. Prefer [`bce_loss_logit`] inside
/// training; this form is for reporting.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

#[derive(Debug, Clone, Default)]
pub struct GradSet {
    pub theta: Option<Tensor>,
    pub attn: Option<Tensor>,
    pub classifier: Option<Tensor>,
    pub bias: Option<Tensor>,
    pub gat_attn: Option<Tensor>,
}

impl GradSet {
    fn accumulate(&mut self, other: &GradSet) {
        fn acc(slot: &mut Option<Tensor>, incoming: &Option<Tensor>) {
            if let Some(g) = incoming {
                match slot {
                    Some(t) => t.add_scaled(g, 1.0),
                    None => *slot = Some(g.clone()),
                }
            }
        }
        acc(&mut self.theta, &other.theta);
        acc(&mut self.attn, &other.attn);
        acc(&mut self.classifier, &other.classifier);
        acc(&mut self.bias, &other.bias);
        acc(&mut self.gat_attn, &other.gat_attn);
    }

    fn scale(&mut self, c: f64) {
        for slot in [
            &mut self.theta,
            &mut self.attn,
            &mut self.classifier,
            &mut self.bias,
            &mut self.gat_attn,
        ] {
            if let Some(t) = slot {
                t.scale_in_place(c);
            }
        }
    }
}

struct Moments {
    m: Tensor,
    v: Tensor,
}

/// Per-parameter optimizer state; applies one update and returns the delta
/// actually added to the parameter.
#[derive(Default)]
struct OptSlot {
    moments: Option<Moments>,
}

impl OptSlot {
    fn apply(
        &mut self,
        param: &mut Tensor,
        grad: &Tensor,
        cfg: &TrainConfig,
        step: usize,
    ) -> Tensor {
        let lr = cfg.learning_rate;
        let mut delta = Tensor::zeros(param.rows(), param.cols());
        match cfg.optimizer {
            Optimizer::Sgd => {
                delta.add_scaled(grad, -lr);
            }
            Optimizer::Adam => {
                let st = self.moments.get_or_insert_with(|| Moments {
                    m: Tensor::zeros(param.rows(), param.cols()),
                    v: Tensor::zeros(param.rows(), param.cols()),
                });
                let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
                for i in 0..grad.len() {
                    let g = grad.data()[i];
                    let m = ADAM_BETA1 * st.m.data()[i] + (1.0 - ADAM_BETA1) * g;
                    let v = ADAM_BETA2 * st.v.data()[i] + (1.0 - ADAM_BETA2) * g * g;
                    st.m.data_mut()[i] = m;
                    st.v.data_mut()[i] = v;
                    delta.data_mut()[i] = -lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
                }
            }
        }
        param.add_scaled(&delta, 1.0);
        delta
    }
}

/// Per-graph cache of the parameter-independent aggregate `A_eff * X`
/// (GCN only; GAT recomputes from scratch).
pub struct AggregateCache {
    per_graph: Vec<Option<Tensor>>,
}

impl AggregateCache {
    pub fn build(graphs: &[&Graph], params: &ModelParams) -> Result<Self, ModelError> {
        let per_graph = match params.conv {
            Conv::Gcn => graphs
                .iter()
                .map(|g| {
                    let x = one_hot_features(g, params.palette())?;
                    let a = effective_adjacency(g, &params.flags);
                    Ok(Some(a.matmul_values(&x)))
                })
                .collect::<Result<Vec<_>, ModelError>>()?,
            Conv::Gat => vec![None; graphs.len()],
        };
        Ok(AggregateCache { per_graph })
    }

    fn get(&self, idx: usize) -> Option<&Tensor> {
        self.per_graph[idx].as_ref()
    }
}

/// Loss and parameter gradients for a single labeled graph.
pub fn loss_and_grads(
    params: &ModelParams,
    g: &Graph,
    y: f64,
    cached: Option<&Tensor>,
) -> Result<(f64, GradSet), TrainError> {
    let pass = forward(g, params, GradMode::Training, cached)?;
    let ForwardPass { mut tape, theta, attn, classifier, bias, gat_attn, logit, .. } = pass;
    let lse = tape.log1p_exp(logit);
    let neg = tape.scale(logit, -y);
    let loss = tape.add(lse, neg).map_err(ModelError::from)?;
    tape.backward(loss).map_err(ModelError::from)?;
    let grads = GradSet {
        theta: if params.flags.theory_mode { None } else { Some(tape.grad_or_zeros(theta)) },
        attn: attn.map(|a| tape.grad_or_zeros(a)),
        classifier: classifier.map(|w| tape.grad_or_zeros(w)),
        bias: bias.map(|b| tape.grad_or_zeros(b)),
        gat_attn: gat_attn.map(|a| tape.grad_or_zeros(a)),
    };
    Ok((tape.value(loss).as_scalar(), grads))
}

/// Plain loss evaluation, used by the finite-difference oracle.
pub fn loss_value(params: &ModelParams, g: &Graph, y: f64) -> Result<f64, ModelError> {
    let pass = forward(g, params, GradMode::Inference, None)?;
    Ok(bce_loss_logit(pass.logit_value(), y))
}

fn labels_of(graphs: &[&Graph]) -> Result<Vec<f64>, TrainError> {
    graphs
        .iter()
        .enumerate()
        .map(|(i, g)| g.label().map(f64::from).ok_or(TrainError::MissingLabel(i)))
        .collect()
}

/// Fraction of graphs classified correctly at threshold 0.5.
pub fn accuracy(
    params: &ModelParams,
    graphs: &[&Graph],
    labels: &[f64],
    cache: Option<&AggregateCache>,
) -> Result<f64, TrainError> {
    let correct: Result<Vec<bool>, ModelError> = graphs
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let cached = cache.and_then(|c| c.get(i));
            let pass = forward(g, params, GradMode::Inference, cached)?;
            let predicted = if pass.prob() >= 0.5 { 1.0 } else { 0.0 };
            Ok(predicted == labels[i])
        })
        .collect();
    let correct = correct?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / graphs.len().max(1) as f64)
}

/// Gradient-descent training: `p <- p - lr * grad`, gradients averaged over
/// each batch, deterministic given the config seed and initial parameters.
/// Monitors observe at `log_every` steps (and at step 0 and the final step).
pub fn train(
    initial: &ModelParams,
    graphs: &[&Graph],
    cfg: &TrainConfig,
    monitors: &mut [&mut dyn TrainMonitor],
) -> Result<(ModelParams, TrainTrace), TrainError> {
    if graphs.is_empty() {
        return Err(TrainError::EmptyData);
    }
    if !(cfg.learning_rate > 0.0) && cfg.learning_rate != 0.0 {
        return Err(TrainError::BadLearningRate(cfg.learning_rate));
    }
    if cfg.learning_rate < 0.0 {
        return Err(TrainError::BadLearningRate(cfg.learning_rate));
    }
    if cfg.epochs == 0 {
        return Err(TrainError::NoEpochs);
    }
    initial.validate()?;
    let labels = labels_of(graphs)?;
    let mut trace = TrainTrace::default();
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    if positives * 2 != labels.len() {
        trace.warnings.push(format!(
            "class imbalance: {positives} positive of {} samples",
            labels.len()
        ));
    }

    let cache = AggregateCache::build(graphs, initial)?;
    let mut params = initial.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = graphs.len();
    let batch_size = match cfg.batch {
        Batch::Full => n,
        Batch::Mini(k) => k.clamp(1, n),
    };
    let total_steps = cfg.epochs * n.div_ceil(batch_size);

    let zero_w = Tensor::zeros(params.classifier.rows(), 1);
    let zero_a = Tensor::zeros(params.attn.rows(), 1);
    let observe = |step: usize,
                       epoch: usize,
                       model: &ModelParams,
                       loss: f64,
                       dw: &Tensor,
                       da: &Tensor,
                       trace: &mut TrainTrace,
                       monitors: &mut [&mut dyn TrainMonitor]|
     -> Result<(), TrainError> {
        let acc = accuracy(model, graphs, &labels, Some(&cache))?;
        trace.entries.push(TraceEntry { step, epoch, loss, train_acc: acc });
        let info = StepInfo {
            step,
            epoch,
            model,
            loss,
            train_acc: acc,
            delta_classifier: dw,
            delta_attn: da,
        };
        for m in monitors.iter_mut() {
            m.observe(&info);
        }
        Ok(())
    };

    // Step 0: initial state, zero deltas.
    let init_loss = mean_loss(&params, graphs, &labels, &cache)?;
    observe(0, 0, &params, init_loss, &zero_w, &zero_a, &mut trace, monitors)?;

    let mut opt_theta = OptSlot::default();
    let mut opt_attn = OptSlot::default();
    let mut opt_classifier = OptSlot::default();
    let mut opt_bias = OptSlot::default();
    let mut opt_gat = OptSlot::default();

    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch_size) {
            // Per-graph gradients evaluate in parallel; the reduction is a
            // fixed-order fold so results do not depend on scheduling.
            let results: Result<Vec<(f64, GradSet)>, TrainError> = chunk
                .par_iter()
                .map(|&i| loss_and_grads(&params, graphs[i], labels[i], cache.get(i)))
                .collect();
            let results = results?;
            let mut batch_loss = 0.0;
            let mut grads = GradSet::default();
            for (l, g) in &results {
                batch_loss += l;
                grads.accumulate(g);
            }
            batch_loss /= chunk.len() as f64;
            grads.scale(1.0 / chunk.len() as f64);
            step += 1;
            if batch_loss.is_nan() {
                return Err(TrainError::NanLoss { step });
            }

            let mut delta_w = zero_w.clone();
            let mut delta_a = zero_a.clone();
            if let Some(gt) = &grads.theta {
                opt_theta.apply(&mut params.theta, gt, cfg, step);
            }
            if let Some(ga) = &grads.attn {
                delta_a = opt_attn.apply(&mut params.attn, ga, cfg, step);
            }
            if let Some(gw) = &grads.classifier {
                delta_w = opt_classifier.apply(&mut params.classifier, gw, cfg, step);
            }
            if let Some(gb) = &grads.bias {
                opt_bias.apply(&mut params.bias, gb, cfg, step);
            }
            if let Some(gg) = &grads.gat_attn {
                opt_gat.apply(params.gat_attn.as_mut().expect("validated"), gg, cfg, step);
            }

            let is_last = step == total_steps;
            if (cfg.log_every > 0 && step % cfg.log_every == 0) || is_last {
                observe(step, epoch, &params, batch_loss, &delta_w, &delta_a, &mut trace, monitors)?;
            }
        }
    }
    Ok((params, trace))
}

fn mean_loss(
    params: &ModelParams,
    graphs: &[&Graph],
    labels: &[f64],
    cache: &AggregateCache,
) -> Result<f64, TrainError> {
    let losses: Result<Vec<f64>, TrainError> = graphs
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let pass = forward(g, params, GradMode::Inference, cache.get(i))?;
            Ok(bce_loss_logit(pass.logit_value(), labels[i]))
        })
        .collect();
    Ok(losses?.iter().sum::<f64>() / graphs.len() as f64)
}

/// Closed-form gradients of the BCE loss for a theory-mode attention model,
/// derived by hand rather than by the tape:
///
/// - `dL/dw = (p - y) vhat`
/// - `dL/da = ((p - y) / beta) sum_i alpha_i <w, v_i> (v_i - vhat)`
///
/// The softmax Jacobian contributes the `alpha_i` weight and `1/beta` factor
/// to each node term. Node aggregates are rebuilt from raw neighbor color
/// counts, independent of the tape's matrix pipeline.
pub fn closed_form_grads(
    g: &Graph,
    y: f64,
    params: &ModelParams,
) -> Result<(Tensor, Tensor), TrainError> {
    if !params.flags.theory_mode || params.pooling != Pooling::Attn {
        return Err(TrainError::ClosedFormUnavailable);
    }
    params.validate()?;
    let k = params.palette();
    let v = crate::theory::aggregate_color_counts(g, k, !params.flags.theory_open_neighborhood);
    let n = g.num_nodes();
    let a = params.attn.data();
    let w = params.classifier.data();

    let scores: Vec<f64> = (0..n)
        .map(|i| v.row(i).iter().zip(a).map(|(x, ai)| x * ai).sum())
        .collect();
    let alpha = softmax_beta_values(&scores, params.beta);

    let mut vhat = vec![0.0; k];
    for i in 0..n {
        for (c, x) in v.row(i).iter().enumerate() {
            vhat[c] += alpha[i] * x;
        }
    }
    let z: f64 = w.iter().zip(&vhat).map(|(wi, vi)| wi * vi).sum();
    let p = sigmoid(z);
    let residual = p - y;

    let mut dw = Tensor::zeros(k, 1);
    for (c, &x) in vhat.iter().enumerate() {
        dw.data_mut()[c] = residual * x;
    }

    let mut da = Tensor::zeros(k, 1);
    for i in 0..n {
        let w_dot_vi: f64 = w.iter().zip(v.row(i)).map(|(wi, vi)| wi * vi).sum();
        let coeff = residual * alpha[i] * w_dot_vi / params.beta;
        for (c, &x) in v.row(i).iter().enumerate() {
            da.data_mut()[c] += coeff * (x - vhat[c]);
        }
    }
    Ok((dw, da))
}

/// Scaled error used throughout gradient checking: relative for large
/// entries, absolute below magnitude one.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn max_rel_err(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckGroup {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tol: f64,
    pub groups: Vec<GradCheckGroup>,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.groups.iter().all(|g| g.pass)
    }

    pub fn worst(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }
}

/// Margin below which max pooling sits too close to a subgradient point for
/// finite differences to be meaningful.
pub const MAX_POOL_TIE_MARGIN: f64 = 1e-3;

/// Compares tape gradients against central finite differences (h = 1e-5) on
/// every labeled graph, per parameter group; in theory mode with attention
/// pooling the closed-form route is compared as well. Max-pooling models skip
/// graphs whose row max is not unique by [`MAX_POOL_TIE_MARGIN`].
pub fn grad_check(
    params: &ModelParams,
    graphs: &[(&Graph, f64)],
    tol: f64,
) -> Result<GradCheckReport, TrainError> {
    params.validate()?;
    let mut worst: std::collections::BTreeMap<String, f64> = Default::default();
    for &(g, y) in graphs {
        if params.pooling == Pooling::Max {
            let pass = forward(g, params, GradMode::Inference, None)?;
            if crate::model::row_max_margin(pass.reps_values()) <= MAX_POOL_TIE_MARGIN {
                continue;
            }
        }
        let (_, grads) = loss_and_grads(params, g, y, None)?;

        let mut names: Vec<&str> = Vec::new();
        let mut tensors: Vec<Tensor> = Vec::new();
        if grads.theta.is_some() {
            names.push("theta");
            tensors.push(params.theta.clone());
        }
        if grads.attn.is_some() {
            names.push("attn");
            tensors.push(params.attn.clone());
        }
        if grads.classifier.is_some() {
            names.push("classifier");
            tensors.push(params.classifier.clone());
        }
        if grads.bias.is_some() {
            names.push("bias");
            tensors.push(params.bias.clone());
        }
        if grads.gat_attn.is_some() {
            names.push("gat_attn");
            tensors.push(params.gat_attn.clone().expect("present"));
        }

        let base = params.clone();
        let graph = g.clone();
        let names_owned: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let f = move |p: &[Tensor]| {
            let mut cand = base.clone();
            for (slot, t) in names_owned.iter().zip(p) {
                match slot.as_str() {
                    "theta" => cand.theta = t.clone(),
                    "attn" => cand.attn = t.clone(),
                    "classifier" => cand.classifier = t.clone(),
                    "bias" => cand.bias = t.clone(),
                    "gat_attn" => cand.gat_attn = Some(t.clone()),
                    _ => unreachable!(),
                }
            }
            loss_value(&cand, &graph, y).expect("forward on perturbed params")
        };
        let fd = finite_diff_grad(&f, &tensors, 1e-5);

        let ordered = [
            ("theta", &grads.theta),
            ("attn", &grads.attn),
            ("classifier", &grads.classifier),
            ("bias", &grads.bias),
            ("gat_attn", &grads.gat_attn),
        ];
        let mut fd_iter = fd.into_iter();
        for (name, maybe_grad) in ordered {
            if let Some(tape_grad) = maybe_grad {
                let fd_grad = fd_iter.next().expect("one fd tensor per group");
                let err = max_rel_err(tape_grad, &fd_grad);
                let entry = worst.entry(name.to_string()).or_insert(0.0);
                *entry = entry.max(err);
            }
        }

        if params.flags.theory_mode && params.pooling == Pooling::Attn {
            let (dw, da) = closed_form_grads(g, y, params)?;
            let tape_w = grads.classifier.as_ref().expect("classifier trained");
            let tape_a = grads.attn.as_ref().expect("attention trained");
            let err = tape_w.max_abs_diff(&dw).max(tape_a.max_abs_diff(&da));
            let entry = worst.entry("closed_form".to_string()).or_insert(0.0);
            *entry = entry.max(err);
        }
    }
    let groups = worst
        .into_iter()
        .map(|(name, err)| GradCheckGroup { name, max_rel_err: err, pass: err < tol })
        .collect();
    Ok(GradCheckReport { tol, groups })
}

/// Random labeled graphs for gradient checking: up to `max_nodes` nodes,
/// colors below `palette`, Bernoulli(0.3) edges, alternating labels.
pub fn random_gradcheck_graphs(
    count: usize,
    max_nodes: usize,
    palette: usize,
    seed: u64,
) -> Vec<(Graph, f64)> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let n = rng.random_range(3..=max_nodes);
            let colors: Vec<usize> = (0..n).map(|_| rng.random_range(0..palette)).collect();
            let mut edges = Vec::new();
            for a in 0..n {
                for b in (a + 1)..n {
                    if rng.random_range(0.0..1.0) < 0.3 {
                        edges.push((a, b));
                    }
                }
            }
            let g = Graph::new(colors, &edges).expect("random graph is valid");
            (g, (i % 2) as f64)
        })
        .collect()
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    conv: Conv,
    pooling: Pooling,
    beta: f64,
    flags: crate::model::ModelFlags,
    theta: Tensor,
    attn: Tensor,
    classifier: Tensor,
    bias: Tensor,
    gat_attn: Option<Tensor>,
}

/// Writes the model as JSON. Arrays round-trip bit-exactly.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), TrainError> {
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        conv: params.conv,
        pooling: params.pooling,
        beta: params.beta,
        flags: params.flags,
        theta: params.theta.clone(),
        attn: params.attn.clone(),
        classifier: params.classifier.clone(),
        bias: params.bias.clone(),
        gat_attn: params.gat_attn.clone(),
    };
    let body = serde_json::to_string_pretty(&ck)
        .map_err(|e| TrainError::Parse { path: path.display().to_string(), source: e })?;
    std::fs::write(path, body)
        .map_err(|e| TrainError::Io { path: path.display().to_string(), source: e })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, TrainError> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| TrainError::Io { path: path.display().to_string(), source: e })?;
    let ck: Checkpoint = serde_json::from_str(&body)
        .map_err(|e| TrainError::Parse { path: path.display().to_string(), source: e })?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(TrainError::BadVersion { found: ck.version, expected: CHECKPOINT_VERSION });
    }
    let params = ModelParams {
        theta: ck.theta,
        attn: ck.attn,
        classifier: ck.classifier,
        bias: ck.bias,
        gat_attn: ck.gat_attn,
        pooling: ck.pooling,
        beta: ck.beta,
        conv: ck.conv,
        flags: ck.flags,
    };
    params.validate()?;
    Ok(params)
}
