//! Construction of the target direction carried by the planted pattern and
//! monitors for the alignment quantities the gradient-flow analysis predicts
//! during attention-pooling training.

use crate::autodiff::{softmax_beta_values, Tensor};
use crate::dataset::PartitionedDataset;
use crate::graph::{Graph, Pattern};
use crate::model::{ModelParams, Pooling};
use crate::train::{StepInfo, TrainMonitor};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("probe graph carries no anchor metadata")]
    MissingAnchor,
    #[error("alignment monitoring requires theory mode with attention pooling")]
    WrongModel,
    #[error("dataset has no graphs to probe")]
    EmptyDataset,
}

/// Node aggregates in theory mode: row `i` counts the colors over the closed
/// (or open) neighborhood of node `i`. Exact small-integer values.
pub fn aggregate_color_counts(g: &Graph, palette: usize, include_self: bool) -> Tensor {
    let n = g.num_nodes();
    let mut v = Tensor::zeros(n, palette);
    for i in 0..n {
        if include_self {
            let c = g.color(i);
            v.set(i, c, v.get(i, c) + 1.0);
        }
        for &j in g.neighbors(i) {
            let c = g.color(j);
            v.set(i, c, v.get(i, c) + 1.0);
        }
    }
    v
}

/// The direction the trained parameters align with: the sum of the pattern
/// nodes' one-hot colors, i.e. the indicator of the pattern's color set.
pub fn v_star(p: &Pattern, palette: usize) -> Tensor {
    let mut v = Tensor::zeros(palette, 1);
    for &c in p.colors() {
        v.data_mut()[c] = 1.0;
    }
    v
}

/// Exact integer check that the anchor's aggregated representation has
/// positive overlap with the pattern direction, for every positive graph.
pub fn check_anchor_alignment(ds: &PartitionedDataset) -> Result<bool, TheoryError> {
    for g in &ds.d1 {
        let anchor = g.anchor().ok_or(TheoryError::MissingAnchor)?[0];
        let mut overlap: u64 = 0;
        let closed = g.neighbors(anchor).iter().copied().chain(std::iter::once(anchor));
        for node in closed {
            if ds.pattern.colors().contains(&g.color(node)) {
                overlap += 1;
            }
        }
        if overlap == 0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Dataset-level bounds on aggregated-representation dot products:
/// `theta` over distinct node pairs, `theta_d` over self pairs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TheoryBounds {
    pub theta: f64,
    pub theta_d: f64,
}

/// Scans every graph in theory-mode representation space. `theta_d >= theta`
/// always holds (Cauchy-Schwarz over a family with a shared maximum norm).
pub fn measure_bounds(ds: &PartitionedDataset) -> Result<TheoryBounds, TheoryError> {
    if ds.is_empty() {
        return Err(TheoryError::EmptyDataset);
    }
    let k = ds.palette_size;
    let mut theta: i64 = 0;
    let mut theta_d: i64 = 0;
    for (_, g) in ds.iter_tagged() {
        let v = aggregate_color_counts(g, k, true);
        let n = g.num_nodes();
        for i in 0..n {
            let vi = v.row(i);
            let self_dot: i64 = vi.iter().map(|&x| (x * x) as i64).sum();
            theta_d = theta_d.max(self_dot);
            for j in (i + 1)..n {
                let cross: i64 = vi.iter().zip(v.row(j)).map(|(&a, &b)| (a * b) as i64).sum();
                theta = theta.max(cross);
            }
        }
    }
    debug_assert!(theta_d >= theta);
    Ok(TheoryBounds { theta: theta as f64, theta_d: theta_d as f64 })
}

/// One sampled step of the alignment quantities on a probe positive graph.
#[derive(Debug, Clone, Serialize)]
pub struct AlignmentRecord {
    pub step: usize,
    /// `<w, v*>` (also the psi_s of the analysis).
    pub dot_w_vstar: f64,
    pub dot_a_vstar: f64,
    pub psi_s: f64,
    /// Max of `<v_i, w>` over non-anchor probe nodes.
    pub psi_max: f64,
    /// `psi_s / psi_max` when `psi_max > 0`, NaN otherwise.
    pub q: f64,
    /// Attention weight of the anchor node on the probe graph.
    pub alpha_s: f64,
    /// `<v*, delta w>` of the last applied update.
    pub delta_w_vstar: f64,
    /// Fraction of probe nodes i with `<w, v*> > <w, v_i>` and
    /// `<a, v*> > <a, v_i>`.
    pub lemma5_fraction: f64,
    #[serde(skip)]
    pub train_acc: f64,
    /// Attention weight of the worst-case comparison node on the D1 probe.
    #[serde(skip)]
    pub alpha_j: f64,
    /// Max attention weight over the D0 probe's nodes.
    #[serde(skip)]
    pub beta_j: f64,
}

pub const ALIGNMENT_CSV_HEADER: &str =
    "step,dot_w_vstar,dot_a_vstar,psi_s,psi_max,q,alpha_s,delta_w_vstar,lemma5_fraction";

impl AlignmentRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.dot_w_vstar,
            self.dot_a_vstar,
            self.psi_s,
            self.psi_max,
            self.q,
            self.alpha_s,
            self.delta_w_vstar,
            self.lemma5_fraction
        )
    }
}

fn dot_cols(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Computes one [`AlignmentRecord`] from the current parameters.
///
/// The probe graphs are read in theory-mode representation space; `delta_w`
/// is the last applied classifier update.
pub fn alignment_hook(
    model: &ModelParams,
    vstar: &Tensor,
    probe_d1: &Graph,
    probe_d0: &Graph,
    step: usize,
    delta_w: &Tensor,
    train_acc: f64,
) -> Result<AlignmentRecord, TheoryError> {
    if !model.flags.theory_mode || model.pooling != Pooling::Attn {
        return Err(TheoryError::WrongModel);
    }
    let anchor = probe_d1.anchor().ok_or(TheoryError::MissingAnchor)?[0];
    let k = model.palette();
    let include_self = !model.flags.theory_open_neighborhood;
    let v = aggregate_color_counts(probe_d1, k, include_self);
    let w = model.classifier.data();
    let a = model.attn.data();
    let vs = vstar.data();

    let dot_w_vstar = dot_cols(w, vs);
    let dot_a_vstar = dot_cols(a, vs);

    let n = probe_d1.num_nodes();
    let mut psi_max = f64::NEG_INFINITY;
    let mut arg_psi = 0usize;
    for i in 0..n {
        if i == anchor {
            continue;
        }
        let psi = dot_cols(v.row(i), w);
        if psi > psi_max {
            psi_max = psi;
            arg_psi = i;
        }
    }
    let q = if psi_max > 0.0 { dot_w_vstar / psi_max } else { f64::NAN };

    let scores: Vec<f64> = (0..n).map(|i| dot_cols(v.row(i), a)).collect();
    let alpha = softmax_beta_values(&scores, model.beta);
    let alpha_s = alpha[anchor];
    let alpha_j = alpha[arg_psi];

    let v0 = aggregate_color_counts(probe_d0, k, include_self);
    let scores0: Vec<f64> = (0..probe_d0.num_nodes()).map(|i| dot_cols(v0.row(i), a)).collect();
    let beta_j = softmax_beta_values(&scores0, model.beta)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);

    let satisfied = (0..n)
        .filter(|&i| {
            dot_w_vstar > dot_cols(v.row(i), w) && dot_a_vstar > dot_cols(v.row(i), a)
        })
        .count();

    Ok(AlignmentRecord {
        step,
        dot_w_vstar,
        dot_a_vstar,
        psi_s: dot_w_vstar,
        psi_max,
        q,
        alpha_s,
        delta_w_vstar: dot_cols(delta_w.data(), vs),
        lemma5_fraction: satisfied as f64 / n as f64,
        train_acc,
        alpha_j,
        beta_j,
    })
}

/// Training monitor that collects an [`AlignmentRecord`] per observed step.
pub struct AlignmentMonitor {
    vstar: Tensor,
    probe_d1: Graph,
    probe_d0: Graph,
    pub records: Vec<AlignmentRecord>,
}

impl AlignmentMonitor {
    /// Probes are the first graph of D1 and of D0, in dataset order.
    pub fn new(ds: &PartitionedDataset, palette: usize) -> Result<Self, TheoryError> {
        let probe_d1 = ds.d1.first().ok_or(TheoryError::EmptyDataset)?.clone();
        let probe_d0 = ds.d0.first().ok_or(TheoryError::EmptyDataset)?.clone();
        if probe_d1.anchor().is_none() {
            return Err(TheoryError::MissingAnchor);
        }
        Ok(AlignmentMonitor {
            vstar: v_star(&ds.pattern, palette),
            probe_d1,
            probe_d0,
            records: Vec::new(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(ALIGNMENT_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn vstar(&self) -> &Tensor {
        &self.vstar
    }
}

impl TrainMonitor for AlignmentMonitor {
    fn observe(&mut self, info: &StepInfo<'_>) {
        let record = alignment_hook(
            info.model,
            &self.vstar,
            &self.probe_d1,
            &self.probe_d0,
            info.step,
            info.delta_classifier,
            info.train_acc,
        )
        .expect("monitor attached to a theory-mode attention run");
        self.records.push(record);
    }
}

/// Run-level digest of an alignment trace.
#[derive(Debug, Clone, Serialize)]
pub struct PreservationSummary {
    /// Fractions are over steps >= 1; `defined` is false when the trace has
    /// no such steps.
    pub defined: bool,
    /// Fraction of pre-convergence steps (train accuracy < 1) with
    /// `<v*, delta w> > 0`.
    pub frac_delta_w_positive: f64,
    /// Fraction of steps where every probe node satisfies both alignment
    /// inequalities.
    pub frac_lemma5_satisfied: f64,
    /// First step at which `q` exceeds the separation threshold
    /// `(beta_j - alpha_j) / (alpha_s (1 - alpha_s) + alpha_j alpha_s) + 1`.
    pub first_step_q_above_threshold: Option<usize>,
    /// Final-step signs predicted by the alignment theorem.
    pub final_dot_a_vstar_positive: bool,
    pub final_dot_w_vstar_positive: bool,
}

pub fn preservation_report(records: &[AlignmentRecord]) -> PreservationSummary {
    let steps: Vec<&AlignmentRecord> = records.iter().filter(|r| r.step >= 1).collect();
    let defined = !steps.is_empty();

    let pre_convergence: Vec<&&AlignmentRecord> =
        steps.iter().filter(|r| r.train_acc < 1.0).collect();
    let frac_delta_w_positive = if pre_convergence.is_empty() {
        0.0
    } else {
        pre_convergence.iter().filter(|r| r.delta_w_vstar > 0.0).count() as f64
            / pre_convergence.len() as f64
    };
    let frac_lemma5_satisfied = if steps.is_empty() {
        0.0
    } else {
        steps.iter().filter(|r| r.lemma5_fraction >= 1.0).count() as f64 / steps.len() as f64
    };

    let first_step_q_above_threshold = steps
        .iter()
        .find(|r| {
            if !r.q.is_finite() {
                return false;
            }
            let denom = r.alpha_s * (1.0 - r.alpha_s) + r.alpha_j * r.alpha_s;
            if denom <= 0.0 {
                return false;
            }
            r.q > (r.beta_j - r.alpha_j) / denom + 1.0
        })
        .map(|r| r.step);

    let last = records.last();
    PreservationSummary {
        defined,
        frac_delta_w_positive,
        frac_lemma5_satisfied,
        first_step_q_above_threshold,
        final_dot_a_vstar_positive: last.map(|r| r.dot_a_vstar > 0.0).unwrap_or(false),
        final_dot_w_vstar_positive: last.map(|r| r.dot_w_vstar > 0.0).unwrap_or(false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_grid_partition, SynthSpec};
    use crate::graph::Pattern;
    use crate::train::{train, Batch, TrainConfig};

    fn dataset(per: usize, seed: u64) -> PartitionedDataset {
        let spec = SynthSpec::grid_chain(5, 5, 4, 3, per, seed).unwrap();
        synth_grid_partition(&spec).unwrap()
    }

    #[test]
    fn vstar_is_the_pattern_color_indicator() {
        let p = Pattern::chain(vec![4, 5, 6]).unwrap();
        let v = v_star(&p, 7);
        assert_eq!(v.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn anchor_alignment_holds_on_every_positive_graph() {
        let ds = dataset(25, 3);
        assert!(check_anchor_alignment(&ds).unwrap());
        let k = ds.palette_size;
        let vs = v_star(&ds.pattern, k);
        for g in &ds.d1 {
            let anchor = g.anchor().unwrap()[0];
            let v = aggregate_color_counts(g, k, true);
            let overlap = dot_cols(v.row(anchor), vs.data());
            // The planted closed neighborhood carries all three colors.
            assert!(overlap >= 3.0);
        }
    }

    #[test]
    fn no_dperp_node_sees_all_pattern_colors() {
        let ds = dataset(25, 5);
        let k = ds.palette_size;
        for g in &ds.dperp {
            let v = aggregate_color_counts(g, k, true);
            for i in 0..g.num_nodes() {
                let all_present = ds
                    .pattern
                    .colors()
                    .iter()
                    .all(|&c| v.get(i, c) > 0.0);
                assert!(!all_present, "node {i} aggregates the whole pattern");
            }
        }
    }

    #[test]
    fn bounds_on_isolated_distinct_nodes() {
        let graphs: Vec<Graph> = (0..3)
            .map(|c| {
                Graph::new(vec![c], &[]).unwrap().with_label(None).unwrap()
            })
            .collect();
        let ds = PartitionedDataset {
            d1: vec![],
            d0: vec![],
            dperp: graphs,
            pattern: Pattern::chain(vec![0, 1, 2]).unwrap(),
            palette_size: 3,
        };
        // Single-node graphs have no cross pairs; theta stays at its zero
        // floor and theta_d is the isolated self count.
        let b = measure_bounds(&ds).unwrap();
        assert_eq!(b.theta, 0.0);
        assert_eq!(b.theta_d, 1.0);
    }

    #[test]
    fn bounds_on_grid_dataset_respect_degree_cap() {
        let spec = SynthSpec::grid_chain(12, 12, 4, 3, 8, 7).unwrap();
        let ds = synth_grid_partition(&spec).unwrap();
        let b = measure_bounds(&ds).unwrap();
        // Max closed-neighborhood size on the 4-lattice is 5, so no dot
        // product can exceed 25.
        assert!(b.theta_d <= 25.0);
        assert!(b.theta_d >= b.theta);
    }

    #[test]
    fn alignment_at_zero_init() {
        let ds = dataset(9, 11);
        let model = ModelParams::new_theory(Pooling::Attn, ds.palette_size, 1.0).unwrap();
        let vs = v_star(&ds.pattern, ds.palette_size);
        let zero = Tensor::zeros(ds.palette_size, 1);
        let rec =
            alignment_hook(&model, &vs, &ds.d1[0], &ds.d0[0], 0, &zero, 0.5).unwrap();
        assert_eq!(rec.dot_w_vstar, 0.0);
        assert_eq!(rec.dot_a_vstar, 0.0);
        assert_eq!(rec.psi_s, 0.0);
        assert_eq!(rec.psi_max, 0.0);
        assert!(rec.q.is_nan());
        let n = ds.d1[0].num_nodes() as f64;
        assert_eq!(rec.alpha_s, 1.0 / n);
        assert_eq!(rec.delta_w_vstar, 0.0);
        assert_eq!(rec.lemma5_fraction, 0.0);
    }

    #[test]
    fn one_step_moves_classifier_toward_vstar() {
        let ds = dataset(16, 13);
        let graphs = ds.training_graphs();
        let model = ModelParams::new_theory(Pooling::Attn, ds.palette_size, 1.0).unwrap();
        let mut monitor = AlignmentMonitor::new(&ds, ds.palette_size).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 1,
            batch: Batch::Full,
            log_every: 1,
            shuffle: false,
            ..Default::default()
        };
        let mut mons: Vec<&mut dyn TrainMonitor> = vec![&mut monitor];
        train(&model, &graphs, &cfg, &mut mons).unwrap();
        let after_step = monitor.records.iter().find(|r| r.step == 1).unwrap();
        assert!(after_step.delta_w_vstar > 0.0);
        assert!(after_step.dot_w_vstar > 0.0);
    }

    #[test]
    fn preservation_summary_on_synthetic_traces() {
        let mk = |step: usize, delta: f64, acc: f64| AlignmentRecord {
            step,
            dot_w_vstar: 1.0,
            dot_a_vstar: 1.0,
            psi_s: 1.0,
            psi_max: 0.5,
            q: 2.0,
            alpha_s: 0.5,
            delta_w_vstar: delta,
            lemma5_fraction: 1.0,
            train_acc: acc,
            alpha_j: 0.1,
            beta_j: 0.1,
        };
        // Injected negative step drops the fraction below one.
        let trace = vec![mk(0, 0.0, 0.5), mk(1, 1.0, 0.6), mk(2, -1.0, 0.7), mk(3, 1.0, 1.0)];
        let summary = preservation_report(&trace);
        assert!(summary.defined);
        assert!((summary.frac_delta_w_positive - 0.5).abs() < 1e-12);
        assert_eq!(summary.frac_lemma5_satisfied, 1.0);
        assert!(summary.final_dot_a_vstar_positive);
        assert_eq!(summary.first_step_q_above_threshold, Some(1));

        // Init-only trace: fractions undefined.
        let only_init = vec![mk(0, 0.0, 0.5)];
        let summary = preservation_report(&only_init);
        assert!(!summary.defined);
        assert_eq!(summary.frac_delta_w_positive, 0.0);
    }

    /// Directions orthogonal to v* within the pattern-color span: for each,
    /// some negative graph must keep every node aggregate on the
    /// non-positive side.
    #[test]
    fn orthogonal_directions_are_dominated_in_some_negative_graph() {
        let ds = dataset(30, 17);
        let k = ds.palette_size;
        let pc = ds.pattern.colors();
        let mut directions = Vec::new();
        for i in 0..pc.len() {
            for j in 0..pc.len() {
                if i != j {
                    let mut u = vec![0.0; k];
                    u[pc[i]] = 1.0;
                    u[pc[j]] = -1.0;
                    directions.push(u);
                }
            }
        }
        let vs = v_star(&ds.pattern, k);
        for u in directions {
            assert_eq!(dot_cols(&u, vs.data()), 0.0);
            let found = ds.d0.iter().any(|g| {
                let v = aggregate_color_counts(g, k, true);
                (0..g.num_nodes()).all(|i| dot_cols(v.row(i), &u) <= 0.0)
            });
            assert!(found, "no negative graph dominates direction {u:?}");
        }
    }
}
