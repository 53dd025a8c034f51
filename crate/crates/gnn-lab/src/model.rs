//! Forward computation of the 1-layer GCN / GAT graph classifiers with the
//! max / average / sum / attention pooling family.

use crate::autodiff::{sigmoid, AutodiffError, Tape, Tensor, VarId};
use crate::graph::Graph;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("node {node} has color {color} but the model was built for {palette} colors")]
    ColorOutOfRange { node: usize, color: usize, palette: usize },
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Max,
    Avg,
    Sum,
    Attn,
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Pooling::Max => write!(f, "max"),
            Pooling::Avg => write!(f, "avg"),
            Pooling::Sum => write!(f, "sum"),
            Pooling::Attn => write!(f, "attn"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conv {
    Gcn,
    Gat,
}

impl std::fmt::Display for Conv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Conv::Gcn => write!(f, "gcn"),
            Conv::Gat => write!(f, "gat"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFlags {
    pub use_self_loops: bool,
    pub degree_normalize: bool,
    pub nonlinearity: Nonlinearity,
    pub use_linear_classifier: bool,
    /// Scalar intercept on the classifier logit. Off in theory mode, where
    /// the analysis works with the pure inner product.
    pub use_bias: bool,
    pub theory_mode: bool,
    /// Sensitivity toggle: drop the self term from the theory-mode
    /// aggregation (open neighborhood instead of closed).
    pub theory_open_neighborhood: bool,
}

impl ModelFlags {
    pub fn training_default() -> Self {
        ModelFlags {
            use_self_loops: true,
            degree_normalize: true,
            nonlinearity: Nonlinearity::Sigmoid,
            use_linear_classifier: true,
            use_bias: true,
            theory_mode: false,
            theory_open_neighborhood: false,
        }
    }

    pub fn theory_default() -> Self {
        ModelFlags {
            use_self_loops: false,
            degree_normalize: false,
            nonlinearity: Nonlinearity::Identity,
            use_linear_classifier: true,
            use_bias: false,
            theory_mode: true,
            theory_open_neighborhood: false,
        }
    }
}

pub const GAT_LEAKY_SLOPE: f64 = 0.2;

/// Glorot-uniform limit for a weight with the given fan-in and fan-out.
fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// All trainable parameters plus the architecture switches.
///
/// Shapes: `theta` is `K x d`, `attn` and `classifier` are `d x 1`,
/// `gat_attn` is `2d x 1` and present iff `conv == Gat`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub theta: Tensor,
    pub attn: Tensor,
    pub classifier: Tensor,
    /// Scalar classifier intercept, used iff `flags.use_bias`.
    pub bias: Tensor,
    pub gat_attn: Option<Tensor>,
    pub pooling: Pooling,
    pub beta: f64,
    pub conv: Conv,
    pub flags: ModelFlags,
}

impl ModelParams {
    /// Training-mode model with Glorot-uniform parameter init.
    pub fn new_training(
        conv: Conv,
        pooling: Pooling,
        palette: usize,
        hidden: usize,
        beta: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        let st = glorot_limit(palette, hidden);
        let sg = glorot_limit(2 * hidden, 1);
        // Readout vectors start at zero: the first update then moves them
        // along the class-difference direction with no calibration debt
        // (there is no bias term to absorb one).
        let params = ModelParams {
            theta: Tensor::uniform(palette, hidden, -st, st, rng),
            attn: Tensor::zeros(hidden, 1),
            classifier: Tensor::zeros(hidden, 1),
            bias: Tensor::scalar(0.0),
            gat_attn: match conv {
                Conv::Gat => Some(Tensor::uniform(2 * hidden, 1, -sg, sg, rng)),
                Conv::Gcn => None,
            },
            pooling,
            beta,
            conv: Conv::Gcn,
            flags: ModelFlags::training_default(),
        };
        let params = ModelParams { conv, ..params };
        params.validate()?;
        Ok(params)
    }

    /// Classifier-free variant: the convolution itself reduces to one
    /// dimension (`theta` is `K x 1`) and the pooled scalar is the logit.
    pub fn new_training_no_classifier(
        conv: Conv,
        pooling: Pooling,
        palette: usize,
        beta: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        let mut params = Self::new_training(conv, pooling, palette, 1, beta, rng)?;
        params.flags.use_linear_classifier = false;
        params.validate()?;
        Ok(params)
    }

    /// Theory-mode model: identity transform (`d = K`), identity
    /// nonlinearity, raw closed-neighborhood aggregation, and zero-initialized
    /// attention and classifier vectors.
    pub fn new_theory(pooling: Pooling, palette: usize, beta: f64) -> Result<Self, ModelError> {
        let params = ModelParams {
            theta: Tensor::identity(palette),
            attn: Tensor::zeros(palette, 1),
            classifier: Tensor::zeros(palette, 1),
            bias: Tensor::scalar(0.0),
            gat_attn: None,
            pooling,
            beta,
            conv: Conv::Gcn,
            flags: ModelFlags::theory_default(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn palette(&self) -> usize {
        self.theta.rows()
    }

    pub fn hidden(&self) -> usize {
        self.theta.cols()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.beta > 0.0) {
            return Err(ModelError::InvalidParams(format!(
                "temperature must be positive, got {}",
                self.beta
            )));
        }
        let d = self.hidden();
        if self.attn.shape() != (d, 1) {
            return Err(ModelError::InvalidParams(format!(
                "attention vector must be ({d}, 1), got {:?}",
                self.attn.shape()
            )));
        }
        if self.classifier.shape() != (d, 1) {
            return Err(ModelError::InvalidParams(format!(
                "classifier vector must be ({d}, 1), got {:?}",
                self.classifier.shape()
            )));
        }
        if !self.bias.is_scalar() {
            return Err(ModelError::InvalidParams(format!(
                "bias must be a scalar, got {:?}",
                self.bias.shape()
            )));
        }
        match (self.conv, &self.gat_attn) {
            (Conv::Gat, Some(a)) if a.shape() != (2 * d, 1) => {
                return Err(ModelError::InvalidParams(format!(
                    "gat_attn must be ({}, 1), got {:?}",
                    2 * d,
                    a.shape()
                )));
            }
            (Conv::Gat, None) => {
                return Err(ModelError::InvalidParams(
                    "gat_attn is required for GAT models".into(),
                ));
            }
            (Conv::Gcn, Some(_)) => {
                return Err(ModelError::InvalidParams(
                    "gat_attn must be absent for GCN models".into(),
                ));
            }
            _ => {}
        }
        if !self.flags.use_linear_classifier && d != 1 {
            return Err(ModelError::InvalidParams(
                "classifier-free models need hidden dimension 1".into(),
            ));
        }
        if self.flags.theory_mode {
            let k = self.palette();
            if d != k || self.theta != Tensor::identity(k) {
                return Err(ModelError::InvalidParams(
                    "theory mode requires an identity transform".into(),
                ));
            }
            if self.flags.nonlinearity != Nonlinearity::Identity
                || self.flags.degree_normalize
                || self.flags.use_self_loops
                || self.flags.use_bias
                || self.conv != Conv::Gcn
            {
                return Err(ModelError::InvalidParams(
                    "theory mode requires identity nonlinearity, no degree \
                     normalization, no self-loop flag, no intercept, and GCN \
                     convolution"
                        .into(),
                ));
            }
        }
        Ok(())
    }
}

/// One-hot color features, `N x K`.
pub fn one_hot_features(g: &Graph, palette: usize) -> Result<Tensor, ModelError> {
    let n = g.num_nodes();
    let mut x = Tensor::zeros(n, palette);
    for i in 0..n {
        let c = g.color(i);
        if c >= palette {
            return Err(ModelError::ColorOutOfRange { node: i, color: c, palette });
        }
        x.set(i, c, 1.0);
    }
    Ok(x)
}

/// Aggregation matrix selected by the flags.
///
/// Theory mode: `A + I` (closed neighborhood) or plain `A` with the
/// open-neighborhood toggle. Training mode: `D^{-1/2} (A + I) D^{-1/2}` when
/// normalizing with self-loops, with the obvious variants otherwise.
/// Zero-degree rows scale to zero under normalization.
pub fn effective_adjacency(g: &Graph, flags: &ModelFlags) -> Tensor {
    let n = g.num_nodes();
    let self_loops = if flags.theory_mode {
        !flags.theory_open_neighborhood
    } else {
        flags.use_self_loops
    };
    let mut a = Tensor::zeros(n, n);
    for &(i, j) in g.edges() {
        a.set(i, j, 1.0);
        a.set(j, i, 1.0);
    }
    if self_loops {
        for i in 0..n {
            a.set(i, i, 1.0);
        }
    }
    if !flags.theory_mode && flags.degree_normalize {
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| {
                let deg: f64 = (0..n).map(|j| a.get(i, j)).sum();
                if deg > 0.0 {
                    1.0 / deg.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                let v = a.get(i, j);
                if v != 0.0 {
                    a.set(i, j, v * inv_sqrt[i] * inv_sqrt[j]);
                }
            }
        }
    }
    a
}

/// Which leaves require gradients during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    Inference,
    Training,
}

/// A recorded forward evaluation: the tape plus handles to the interesting
/// intermediate values.
pub struct ForwardPass {
    pub tape: Tape,
    pub theta: VarId,
    pub attn: Option<VarId>,
    pub classifier: Option<VarId>,
    pub bias: Option<VarId>,
    pub gat_attn: Option<VarId>,
    /// Post-nonlinearity node representations, `N x d`.
    pub reps: VarId,
    /// Pooling attention weights, `N x 1`, present for ATTN pooling.
    pub alpha: Option<VarId>,
    /// Pooled graph representation, `d x 1`.
    pub pooled: VarId,
    /// Classifier logit, `1 x 1`.
    pub logit: VarId,
}

impl ForwardPass {
    pub fn logit_value(&self) -> f64 {
        self.tape.value(self.logit).as_scalar()
    }

    pub fn prob(&self) -> f64 {
        sigmoid(self.logit_value())
    }

    pub fn reps_values(&self) -> &Tensor {
        self.tape.value(self.reps)
    }

    pub fn alpha_values(&self) -> Option<&Tensor> {
        self.alpha.map(|a| self.tape.value(a))
    }

    pub fn pooled_values(&self) -> &Tensor {
        self.tape.value(self.pooled)
    }
}

/// Runs the model end to end on one graph, recording the computation on a
/// fresh tape.
///
/// `cached_aggregate` short-circuits the `A_eff * X` product for GCN models
/// (it does not depend on any trainable parameter); training loops compute it
/// once per graph.
pub fn forward(
    g: &Graph,
    params: &ModelParams,
    mode: GradMode,
    cached_aggregate: Option<&Tensor>,
) -> Result<ForwardPass, ModelError> {
    params.validate()?;
    let mut tape = Tape::new();
    let train = mode == GradMode::Training;

    let theta = if train && !params.flags.theory_mode {
        tape.param(params.theta.clone())
    } else {
        tape.constant(params.theta.clone())
    };

    let (reps, gat_attn) = match params.conv {
        Conv::Gcn => {
            let aggregated = match cached_aggregate {
                Some(ax) => tape.constant(ax.clone()),
                None => {
                    let x = one_hot_features(g, params.palette())?;
                    let a_eff = effective_adjacency(g, &params.flags);
                    let xv = tape.constant(x);
                    let av = tape.constant(a_eff);
                    tape.matmul(av, xv)?
                }
            };
            let h = if params.flags.theory_mode {
                aggregated
            } else {
                tape.matmul(aggregated, theta)?
            };
            let reps = match params.flags.nonlinearity {
                Nonlinearity::Sigmoid => tape.sigmoid(h),
                Nonlinearity::Identity => h,
            };
            (reps, None)
        }
        Conv::Gat => {
            let (reps, gat_var) = gat_reps(g, params, &mut tape, theta, train)?;
            (reps, Some(gat_var))
        }
    };

    let (pooled, alpha) = pool(&mut tape, reps, params, train)?;

    let (mut logit, classifier) = if params.flags.use_linear_classifier {
        let w = if train { tape.param(params.classifier.clone()) } else {
            tape.constant(params.classifier.clone())
        };
        (tape.dot(w, pooled)?, Some(w))
    } else {
        (pooled, None)
    };
    let bias = if params.flags.use_bias && classifier.is_some() {
        let b = if train { tape.param(params.bias.clone()) } else {
            tape.constant(params.bias.clone())
        };
        logit = tape.add(logit, b)?;
        Some(b)
    } else {
        None
    };

    Ok(ForwardPass {
        tape,
        theta,
        attn: alpha.map(|(_, attn_param)| attn_param),
        classifier,
        bias,
        gat_attn,
        reps,
        alpha: alpha.map(|(alpha, _)| alpha),
        pooled,
        logit,
    })
}

/// Single-head GAT aggregation over closed neighborhoods with leaky-relu
/// edge scores. Returns the representations and the attention parameter
/// handle.
fn gat_reps(
    g: &Graph,
    params: &ModelParams,
    tape: &mut Tape,
    theta: VarId,
    train: bool,
) -> Result<(VarId, VarId), ModelError> {
    let n = g.num_nodes();
    let d = params.hidden();
    let gat = params.gat_attn.as_ref().expect("validated");
    let gat_var = if train { tape.param(gat.clone()) } else { tape.constant(gat.clone()) };

    let x = one_hot_features(g, params.palette())?;
    let xv = tape.constant(x);
    let h = tape.matmul(xv, theta)?; // N x d: row i = Theta^T x_i

    // Split the 2d attention vector into the self and neighbor halves.
    let a1 = tape.gather_rows(gat_var, (0..d).collect())?;
    let a2 = tape.gather_rows(gat_var, (d..2 * d).collect())?;
    let s1 = tape.matmul(h, a1)?; // N x 1
    let s2 = tape.matmul(h, a2)?; // N x 1

    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut hood: Vec<usize> = g.neighbors(i).to_vec();
        hood.push(i);
        hood.sort_unstable();
        let m = hood.len();
        let s1_i = tape.gather_rows(s1, vec![i])?;
        let ones = tape.constant(Tensor::from_vec(m, 1, vec![1.0; m]));
        let s1_b = tape.scale_var(ones, s1_i)?;
        let s2_j = tape.gather_rows(s2, hood.clone())?;
        let raw = tape.add(s1_b, s2_j)?;
        let scores = tape.leaky_relu(raw, GAT_LEAKY_SLOPE);
        let alpha = tape.softmax_beta(scores, 1.0)?;
        let alpha_t = tape.transpose(alpha);
        let h_j = tape.gather_rows(h, hood)?;
        let v_i = tape.matmul(alpha_t, h_j)?; // 1 x d
        rows.push(v_i);
    }
    let v = tape.concat_rows(&rows)?;
    let reps = match params.flags.nonlinearity {
        Nonlinearity::Sigmoid => tape.sigmoid(v),
        Nonlinearity::Identity => v,
    };
    Ok((reps, gat_var))
}

/// Pools node representations into a `d x 1` graph vector. For ATTN returns
/// the weight vector and the attention parameter handle as well.
fn pool(
    tape: &mut Tape,
    reps: VarId,
    params: &ModelParams,
    train: bool,
) -> Result<(VarId, Option<(VarId, VarId)>), ModelError> {
    Ok(match params.pooling {
        Pooling::Sum => (tape.row_sum(reps), None),
        Pooling::Avg => (tape.row_mean(reps), None),
        Pooling::Max => (tape.row_max(reps), None),
        Pooling::Attn => {
            let attn = if train { tape.param(params.attn.clone()) } else {
                tape.constant(params.attn.clone())
            };
            let scores = tape.matmul(reps, attn)?;
            let alpha = tape.softmax_beta(scores, params.beta)?;
            let alpha_t = tape.transpose(alpha);
            let pooled_row = tape.matmul(alpha_t, reps)?;
            let pooled = tape.transpose(pooled_row);
            (pooled, Some((alpha, attn)))
        }
    })
}

/// Class-1 probability for one graph.
pub fn predict(g: &Graph, params: &ModelParams) -> Result<f64, ModelError> {
    Ok(forward(g, params, GradMode::Inference, None)?.prob())
}

/// Smallest gap between the winning and runner-up row in any column of a
/// representation matrix. Max pooling is differentiable only where this is
/// positive; gradient checks skip near-tie inputs.
pub fn row_max_margin(reps: &Tensor) -> f64 {
    let (n, d) = reps.shape();
    if n < 2 {
        return f64::INFINITY;
    }
    let mut margin = f64::INFINITY;
    for j in 0..d {
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for i in 0..n {
            let x = reps.get(i, j);
            if x > best {
                second = best;
                best = x;
            } else if x > second {
                second = x;
            }
        }
        margin = margin.min(best - second);
    }
    margin
}

/// Post-convolution node representations (values only).
pub fn node_representations(g: &Graph, params: &ModelParams) -> Result<Tensor, ModelError> {
    Ok(forward(g, params, GradMode::Inference, None)?.reps_values().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_grad;
    use crate::graph::{grid_graph, Graph};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path3_obg() -> Graph {
        // O=4, B=5, G=6 path with palette size 7.
        Graph::new(vec![4, 5, 6], &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn theory_mode_center_rep_sums_closed_neighborhood() {
        let g = path3_obg();
        let params = ModelParams::new_theory(Pooling::Attn, 7, 1.0).unwrap();
        let reps = node_representations(&g, &params).unwrap();
        // Center node aggregates its own color plus both endpoints.
        let mut expected = vec![0.0; 7];
        expected[4] = 1.0;
        expected[5] = 1.0;
        expected[6] = 1.0;
        assert_eq!(reps.row(1), &expected[..]);
        // Endpoint aggregates itself plus the center.
        let mut end = vec![0.0; 7];
        end[4] = 1.0;
        end[5] = 1.0;
        assert_eq!(reps.row(0), &end[..]);
    }

    #[test]
    fn theory_mode_isolated_node_keeps_its_one_hot() {
        let g = Graph::new(vec![2], &[]).unwrap();
        let params = ModelParams::new_theory(Pooling::Sum, 4, 1.0).unwrap();
        let reps = node_representations(&g, &params).unwrap();
        assert_eq!(reps.row(0), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn theory_open_neighborhood_drops_self_term() {
        let g = path3_obg();
        let mut params = ModelParams::new_theory(Pooling::Sum, 7, 1.0).unwrap();
        params.flags.theory_open_neighborhood = true;
        let reps = node_representations(&g, &params).unwrap();
        let mut expected = vec![0.0; 7];
        expected[4] = 1.0;
        expected[6] = 1.0;
        assert_eq!(reps.row(1), &expected[..]); // center sees only endpoints
    }

    #[test]
    fn normalized_2x2_grid_rows_equal_theta_row() {
        // All four nodes share color 0; with self-loops every degree is 3 and
        // every A-hat entry on the closed neighborhood is 1/3, so each row of
        // A-hat X sums to 1 and the hidden rows all equal theta's row 0.
        let g = grid_graph(2, 2, &[0], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params =
            ModelParams::new_training(Conv::Gcn, Pooling::Avg, 3, 5, 1.0, &mut rng).unwrap();
        params.flags.nonlinearity = Nonlinearity::Identity;
        let a_eff = effective_adjacency(&g, &params.flags);
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j || g.has_edge(i, j) { 1.0 / 3.0 } else { 0.0 };
                assert!((a_eff.get(i, j) - expected).abs() < 1e-12);
            }
        }
        let reps = node_representations(&g, &params).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                assert!((reps.get(i, j) - params.theta.get(0, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_with_zero_vector_equals_average_bitwise() {
        let g = grid_graph(3, 3, &[0, 1, 2], 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut attn_params =
            ModelParams::new_training(Conv::Gcn, Pooling::Attn, 3, 4, 1.0, &mut rng).unwrap();
        attn_params.attn = Tensor::zeros(4, 1);
        let avg_params = ModelParams { pooling: Pooling::Avg, ..attn_params.clone() };
        let pa = forward(&g, &attn_params, GradMode::Inference, None).unwrap();
        let pb = forward(&g, &avg_params, GradMode::Inference, None).unwrap();
        assert_eq!(pa.pooled_values(), pb.pooled_values());
        assert_eq!(pa.prob(), pb.prob());
    }

    #[test]
    fn attention_at_huge_temperature_approaches_average() {
        let g = grid_graph(3, 4, &[0, 1, 2, 3], 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base =
            ModelParams::new_training(Conv::Gcn, Pooling::Attn, 4, 6, 1e6, &mut rng).unwrap();
        let avg = ModelParams { pooling: Pooling::Avg, ..base.clone() };
        let pa = forward(&g, &base, GradMode::Inference, None).unwrap();
        let pb = forward(&g, &avg, GradMode::Inference, None).unwrap();
        assert!(pa.pooled_values().max_abs_diff(pb.pooled_values()) < 1e-5);
    }

    #[test]
    fn attention_flattens_monotonically_along_beta_grid() {
        let g = grid_graph(3, 4, &[0, 1, 2, 3], 19).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut prev_linf = f64::INFINITY;
        for beta in [1.0, 4.0, 10.0, 300.0, 1e6] {
            let params =
                ModelParams::new_training(Conv::Gcn, Pooling::Attn, 4, 6, beta, &mut rng.clone())
                    .unwrap();
            let pass = forward(&g, &params, GradMode::Inference, None).unwrap();
            let alpha = pass.alpha_values().unwrap();
            let n = alpha.rows() as f64;
            let linf = alpha
                .data()
                .iter()
                .map(|&a| (a - 1.0 / n).abs())
                .fold(0.0, f64::max);
            let sum: f64 = alpha.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(alpha.data().iter().all(|&a| a >= 0.0));
            assert!(linf <= prev_linf + 1e-15, "beta={beta}: {linf} > {prev_linf}");
            prev_linf = linf;
        }
    }

    #[test]
    fn single_node_pooling_returns_the_node() {
        let g = Graph::new(vec![1], &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for pooling in [Pooling::Sum, Pooling::Avg, Pooling::Max, Pooling::Attn] {
            let params =
                ModelParams::new_training(Conv::Gcn, pooling, 3, 4, 1.0, &mut rng.clone())
                    .unwrap();
            let pass = forward(&g, &params, GradMode::Inference, None).unwrap();
            let reps = pass.reps_values().clone();
            for j in 0..4 {
                assert!((pass.pooled_values().data()[j] - reps.get(0, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_classifier_predicts_half() {
        let g = grid_graph(2, 3, &[0, 1], 23).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for pooling in [Pooling::Sum, Pooling::Avg, Pooling::Max, Pooling::Attn] {
            let mut params =
                ModelParams::new_training(Conv::Gcn, pooling, 2, 4, 1.0, &mut rng).unwrap();
            params.classifier = Tensor::zeros(4, 1);
            assert_eq!(predict(&g, &params).unwrap(), 0.5);
        }
    }

    #[test]
    fn theory_mode_aligned_classifier_saturates() {
        let g = path3_obg();
        let mut params = ModelParams::new_theory(Pooling::Attn, 7, 1.0).unwrap();
        let mut w = vec![0.0; 7];
        w[4] = 50.0;
        w[5] = 50.0;
        w[6] = 50.0;
        params.classifier = Tensor::vector(w);
        let p = predict(&g, &params).unwrap();
        assert!(p > 0.999, "p = {p}");
    }

    #[test]
    fn no_classifier_variant_uses_pooled_scalar() {
        let g = grid_graph(2, 2, &[0, 1], 29).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params =
            ModelParams::new_training_no_classifier(Conv::Gcn, Pooling::Avg, 2, 1.0, &mut rng)
                .unwrap();
        assert_eq!(params.hidden(), 1);
        let pass = forward(&g, &params, GradMode::Inference, None).unwrap();
        assert_eq!(pass.logit_value(), pass.pooled_values().as_scalar());
    }

    #[test]
    fn gat_with_zero_attention_is_uniform_neighborhood_mean() {
        let g = grid_graph(2, 3, &[0, 1, 2], 31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params =
            ModelParams::new_training(Conv::Gat, Pooling::Sum, 3, 4, 1.0, &mut rng).unwrap();
        params.gat_attn = Some(Tensor::zeros(8, 1));
        params.flags.nonlinearity = Nonlinearity::Identity;
        let reps = node_representations(&g, &params).unwrap();
        // Expected: mean over closed neighborhood of theta^T x_j.
        for i in 0..g.num_nodes() {
            let mut hood: Vec<usize> = g.neighbors(i).to_vec();
            hood.push(i);
            for j in 0..4 {
                let mean: f64 = hood
                    .iter()
                    .map(|&u| params.theta.get(g.color(u), j))
                    .sum::<f64>()
                    / hood.len() as f64;
                assert!((reps.get(i, j) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gat_isolated_node_is_its_own_projection() {
        let g = Graph::new(vec![1, 0], &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params =
            ModelParams::new_training(Conv::Gat, Pooling::Sum, 2, 3, 1.0, &mut rng).unwrap();
        let reps = node_representations(&g, &params).unwrap();
        for j in 0..3 {
            let expected = sigmoid(params.theta.get(1, j));
            assert!((reps.get(0, j) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gat_gradients_match_finite_differences() {
        let g = grid_graph(2, 3, &[0, 1, 2], 37).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params =
            ModelParams::new_training(Conv::Gat, Pooling::Attn, 3, 3, 1.0, &mut rng).unwrap();
        let y = 1.0;

        let pass = forward(&g, &params, GradMode::Training, None).unwrap();
        let mut tape = pass.tape;
        let lse = tape.log1p_exp(pass.logit);
        let neg = tape.scale(pass.logit, -y);
        let loss = tape.add(lse, neg).unwrap();
        tape.backward(loss).unwrap();
        let g_theta = tape.grad_or_zeros(pass.theta);
        let g_gat = tape.grad_or_zeros(pass.gat_attn.unwrap());
        let g_w = tape.grad_or_zeros(pass.classifier.unwrap());
        let g_attn = tape.grad_or_zeros(pass.attn.unwrap());

        let graph = g.clone();
        let base = params.clone();
        let f = move |p: &[Tensor]| {
            let cand = ModelParams {
                theta: p[0].clone(),
                gat_attn: Some(p[1].clone()),
                classifier: p[2].clone(),
                attn: p[3].clone(),
                ..base.clone()
            };
            let pass = forward(&graph, &cand, GradMode::Inference, None).unwrap();
            let z = pass.logit_value();
            crate::autodiff::log1p_exp(z) - y * z
        };
        let fd = finite_diff_grad(
            &f,
            &[
                params.theta.clone(),
                params.gat_attn.clone().unwrap(),
                params.classifier.clone(),
                params.attn.clone(),
            ],
            1e-5,
        );
        assert!(g_theta.max_abs_diff(&fd[0]) < 1e-7);
        assert!(g_gat.max_abs_diff(&fd[1]) < 1e-7);
        assert!(g_w.max_abs_diff(&fd[2]) < 1e-7);
        assert!(g_attn.max_abs_diff(&fd[3]) < 1e-7);
    }

    #[test]
    fn prediction_is_permutation_invariant() {
        let g = grid_graph(3, 3, &[0, 1, 2, 3], 41).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..9).collect();
            use rand::seq::SliceRandom;
            p.shuffle(&mut rng);
            p
        };
        let h = g.relabeled(&perm);
        for conv in [Conv::Gcn, Conv::Gat] {
            for pooling in [Pooling::Sum, Pooling::Avg, Pooling::Max, Pooling::Attn] {
                let params =
                    ModelParams::new_training(conv, pooling, 4, 5, 1.0, &mut rng.clone())
                        .unwrap();
                let pg = predict(&g, &params).unwrap();
                let ph = predict(&h, &params).unwrap();
                assert!(
                    (pg - ph).abs() < 1e-12,
                    "{conv}/{pooling}: {pg} vs {ph}"
                );
            }
        }
    }

    #[test]
    fn cached_aggregate_matches_direct_forward() {
        let g = grid_graph(3, 3, &[0, 1], 43).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let params =
            ModelParams::new_training(Conv::Gcn, Pooling::Attn, 2, 4, 1.0, &mut rng).unwrap();
        let x = one_hot_features(&g, 2).unwrap();
        let a_eff = effective_adjacency(&g, &params.flags);
        let ax = a_eff.matmul_values(&x);
        let direct = forward(&g, &params, GradMode::Inference, None).unwrap();
        let cached = forward(&g, &params, GradMode::Inference, Some(&ax)).unwrap();
        assert_eq!(direct.prob(), cached.prob());
    }

    #[test]
    fn color_out_of_range_is_rejected() {
        let g = Graph::new(vec![5], &[]).unwrap();
        let params = ModelParams::new_theory(Pooling::Sum, 3, 1.0).unwrap();
        assert!(matches!(
            predict(&g, &params),
            Err(ModelError::ColorOutOfRange { color: 5, .. })
        ));
    }
}
