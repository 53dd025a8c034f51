//! End-to-end experiment drivers: the label-bias probe on held-out ambiguous
//! graphs, size generalization, the softmax temperature sweep, and the
//! classifier-pruning ablation. Every experiment is a pure function of
//! (datasets, config, seeds) and emits a deterministic [`Report`].

use crate::dataset::PartitionedDataset;
use crate::graph::Graph;
use crate::model::{forward, GradMode, Conv, ModelParams, Pooling};
use crate::report::{Cell, Report, ReportError};
use crate::train::{train, Batch, Optimizer, TrainConfig, TrainError};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("experiment needs a non-empty training set")]
    EmptyTraining,
}

/// Shared experiment knobs. The training budget matches the uniform baseline
/// setup: 100 epochs at learning rate 0.001 with Adam, single-sample
/// batches, hidden width 16, three seeds with majority aggregation. The
/// grids carry a thin discriminative margin, so the step count (epochs
/// times dataset size) is what buys training accuracy.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch: Batch,
    pub optimizer: Optimizer,
    pub hidden: usize,
    pub seeds: Vec<u64>,
    /// Rows whose final train accuracy falls below this are flagged and
    /// excluded from majority aggregation.
    pub min_train_acc: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            epochs: 100,
            learning_rate: 0.001,
            batch: Batch::Mini(1),
            optimizer: Optimizer::Adam,
            hidden: 16,
            seeds: vec![1, 2, 3],
            min_train_acc: 0.97,
        }
    }
}

impl ExperimentConfig {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch: self.batch,
            optimizer: self.optimizer,
            seed,
            shuffle: true,
            log_every: 0, // only the final step is logged
        }
    }
}

#[derive(Debug, Clone)]
struct CellOutcome {
    params: ModelParams,
    train_loss: f64,
    train_acc: f64,
    flagged: bool,
}

fn train_cell(
    graphs: &[&Graph],
    palette: usize,
    conv: Conv,
    pooling: Pooling,
    beta: f64,
    use_classifier: bool,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<CellOutcome, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = if use_classifier {
        ModelParams::new_training(conv, pooling, palette, cfg.hidden, beta, &mut rng)?
    } else {
        ModelParams::new_training_no_classifier(conv, pooling, palette, beta, &mut rng)?
    };
    let (params, trace) = train(&init, graphs, &cfg.train_config(seed), &mut [])?;
    let last = trace.entries.last().expect("training logs the final step");
    Ok(CellOutcome {
        params,
        train_loss: last.loss,
        train_acc: last.train_acc,
        flagged: last.train_acc < cfg.min_train_acc,
    })
}

/// Counts of predicted labels over a probe set at threshold 0.5.
fn probe_counts(params: &ModelParams, probe: &[Graph]) -> Result<(usize, usize), ExperimentError> {
    let preds: Result<Vec<bool>, crate::model::ModelError> = probe
        .par_iter()
        .map(|g| Ok(forward(g, params, GradMode::Inference, None)?.prob() >= 0.5))
        .collect();
    let preds = preds?;
    let ones = preds.iter().filter(|&&p| p).count();
    Ok((ones, preds.len() - ones))
}

fn labeled_accuracy(params: &ModelParams, graphs: &[&Graph]) -> Result<f64, ExperimentError> {
    let correct: Result<Vec<bool>, crate::model::ModelError> = graphs
        .par_iter()
        .map(|g| {
            let p = forward(g, params, GradMode::Inference, None)?.prob();
            let predicted = u8::from(p >= 0.5);
            Ok(Some(predicted) == g.label())
        })
        .collect();
    let correct = correct?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / graphs.len().max(1) as f64)
}

fn majority_label(ones: usize, zeros: usize) -> i64 {
    i64::from(ones > zeros)
}

/// Trains every (model, pooling) combination on the labeled classes, then
/// counts the labels assigned to the unlabeled probe partition.
///
/// One row per (model, pooling, seed) plus a `majority` row per combination:
/// counts summed over unflagged seeds, majority label the mode of the
/// per-seed majorities.
pub fn run_bias_probe(
    ds: &PartitionedDataset,
    combos: &[(Conv, Pooling)],
    betas: Option<&[f64]>,
    cfg: &ExperimentConfig,
) -> Result<Report, ExperimentError> {
    let graphs = ds.training_graphs();
    if graphs.is_empty() {
        return Err(ExperimentError::EmptyTraining);
    }
    let default_betas = vec![1.0; combos.len()];
    let betas = betas.map(|b| b.to_vec()).unwrap_or(default_betas);

    let cells: Vec<(usize, u64)> = (0..combos.len())
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let outcomes: Result<Vec<((usize, u64), (CellOutcome, (usize, usize)))>, ExperimentError> =
        cells
            .par_iter()
            .map(|&(ci, seed)| {
                let (conv, pooling) = combos[ci];
                let out = train_cell(
                    &graphs,
                    ds.palette_size,
                    conv,
                    pooling,
                    betas[ci],
                    true,
                    cfg,
                    seed,
                )?;
                let counts = probe_counts(&out.params, &ds.dperp)?;
                Ok(((ci, seed), (out, counts)))
            })
            .collect();
    let outcomes = outcomes?;

    let mut report = Report::new(
        "bias_probe",
        &["model", "pooling", "seed", "train_acc", "dperp_yhat1", "dperp_yhat0", "majority", "flagged"],
    );
    for (ci, (conv, pooling)) in combos.iter().enumerate() {
        let mut sum1 = 0usize;
        let mut sum0 = 0usize;
        let mut votes: Vec<i64> = Vec::new();
        for ((cell, seed), (out, (n1, n0))) in outcomes.iter().filter(|((c, _), _)| *c == ci) {
            debug_assert_eq!(*cell, ci);
            report.push_row(vec![
                conv.to_string().into(),
                pooling.to_string().into(),
                Cell::Int(*seed as i64),
                out.train_acc.into(),
                (*n1).into(),
                (*n0).into(),
                Cell::Int(majority_label(*n1, *n0)),
                out.flagged.into(),
            ])?;
            if !out.flagged {
                sum1 += n1;
                sum0 += n0;
                votes.push(majority_label(*n1, *n0));
            }
        }
        let all_flagged = votes.is_empty();
        let agg = if all_flagged {
            0
        } else {
            let ones = votes.iter().filter(|&&v| v == 1).count();
            i64::from(ones * 2 > votes.len())
        };
        report.push_row(vec![
            conv.to_string().into(),
            pooling.to_string().into(),
            "majority".into(),
            Cell::Float(f64::NAN),
            sum1.into(),
            sum0.into(),
            Cell::Int(agg),
            all_flagged.into(),
        ])?;
    }
    Ok(report)
}

/// Trains on one grid size and evaluates accuracy on held-out labeled sets of
/// the same and of a larger size.
pub fn run_generalization(
    train_ds: &PartitionedDataset,
    test_same: &PartitionedDataset,
    test_larger: &PartitionedDataset,
    combos: &[(Conv, Pooling)],
    cfg: &ExperimentConfig,
) -> Result<Report, ExperimentError> {
    let graphs = train_ds.training_graphs();
    if graphs.is_empty() {
        return Err(ExperimentError::EmptyTraining);
    }
    let same = test_same.training_graphs();
    let larger = test_larger.training_graphs();

    let cells: Vec<(usize, u64)> = (0..combos.len())
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let outcomes: Result<Vec<(CellOutcome, f64, f64)>, ExperimentError> = cells
        .par_iter()
        .map(|&(ci, seed)| {
            let (conv, pooling) = combos[ci];
            let out =
                train_cell(&graphs, train_ds.palette_size, conv, pooling, 1.0, true, cfg, seed)?;
            let acc_same = labeled_accuracy(&out.params, &same)?;
            let acc_larger = labeled_accuracy(&out.params, &larger)?;
            Ok((out, acc_same, acc_larger))
        })
        .collect();
    let outcomes = outcomes?;

    let mut report = Report::new(
        "generalization",
        &["model", "pooling", "seed", "train_loss", "train_acc", "test_acc_same", "test_acc_larger"],
    );
    for ((ci, seed), (out, acc_same, acc_larger)) in cells.iter().zip(&outcomes) {
        let (conv, pooling) = combos[*ci];
        report.push_row(vec![
            conv.to_string().into(),
            pooling.to_string().into(),
            Cell::Int(*seed as i64),
            out.train_loss.into(),
            out.train_acc.into(),
            (*acc_same).into(),
            (*acc_larger).into(),
        ])?;
    }
    Ok(report)
}

/// Trains the attention model at each temperature and counts the labels it
/// assigns to the probe partition. Identical training budget per row.
pub fn run_beta_sweep(
    ds: &PartitionedDataset,
    betas: &[f64],
    cfg: &ExperimentConfig,
) -> Result<Report, ExperimentError> {
    let graphs = ds.training_graphs();
    if graphs.is_empty() {
        return Err(ExperimentError::EmptyTraining);
    }
    let cells: Vec<(usize, u64)> = (0..betas.len())
        .flat_map(|b| cfg.seeds.iter().map(move |&s| (b, s)))
        .collect();
    let outcomes: Result<Vec<(CellOutcome, (usize, usize))>, ExperimentError> = cells
        .par_iter()
        .map(|&(bi, seed)| {
            let out = train_cell(
                &graphs,
                ds.palette_size,
                Conv::Gcn,
                Pooling::Attn,
                betas[bi],
                true,
                cfg,
                seed,
            )?;
            let counts = probe_counts(&out.params, &ds.dperp)?;
            Ok((out, counts))
        })
        .collect();
    let outcomes = outcomes?;

    let mut report = Report::new(
        "beta_sweep",
        &["beta", "seed", "train_acc", "dperp_yhat0", "dperp_yhat1", "majority", "flagged"],
    );
    for (bi, beta) in betas.iter().enumerate() {
        let mut votes: Vec<i64> = Vec::new();
        let mut sum1 = 0usize;
        let mut sum0 = 0usize;
        for ((cell, seed), (out, (n1, n0))) in cells.iter().zip(&outcomes).filter(|((c, _), _)| *c == bi) {
            debug_assert_eq!(*cell, bi);
            report.push_row(vec![
                (*beta).into(),
                Cell::Int(*seed as i64),
                out.train_acc.into(),
                (*n0).into(),
                (*n1).into(),
                Cell::Int(majority_label(*n1, *n0)),
                out.flagged.into(),
            ])?;
            if !out.flagged {
                votes.push(majority_label(*n1, *n0));
                sum1 += n1;
                sum0 += n0;
            }
        }
        let all_flagged = votes.is_empty();
        let agg = if all_flagged {
            0
        } else {
            i64::from(votes.iter().filter(|&&v| v == 1).count() * 2 > votes.len())
        };
        report.push_row(vec![
            (*beta).into(),
            "majority".into(),
            Cell::Float(f64::NAN),
            sum0.into(),
            sum1.into(),
            Cell::Int(agg),
            all_flagged.into(),
        ])?;
    }
    Ok(report)
}

/// Output of the classifier-pruning ablation: per-cell rows plus a per-pooling
/// agreement summary.
pub struct AblationOutcome {
    pub rows: Report,
    pub agreement: Report,
}

/// Pairs each pooling kind with and without the final linear classifier and
/// compares the majority label each variant assigns to the probe partition.
pub fn run_nolinear_ablation(
    ds: &PartitionedDataset,
    pools: &[Pooling],
    cfg: &ExperimentConfig,
) -> Result<AblationOutcome, ExperimentError> {
    let graphs = ds.training_graphs();
    if graphs.is_empty() {
        return Err(ExperimentError::EmptyTraining);
    }
    let variants = [true, false];
    let cells: Vec<(usize, bool, u64)> = (0..pools.len())
        .flat_map(|p| {
            variants
                .iter()
                .flat_map(move |&v| cfg.seeds.iter().map(move |&s| (p, v, s)))
        })
        .collect();
    let outcomes: Result<Vec<(CellOutcome, (usize, usize))>, ExperimentError> = cells
        .par_iter()
        .map(|&(pi, with_classifier, seed)| {
            let out = train_cell(
                &graphs,
                ds.palette_size,
                Conv::Gcn,
                pools[pi],
                1.0,
                with_classifier,
                cfg,
                seed,
            )?;
            let counts = probe_counts(&out.params, &ds.dperp)?;
            Ok((out, counts))
        })
        .collect();
    let outcomes = outcomes?;

    let mut rows = Report::new(
        "ablation_rows",
        &["pooling", "variant", "seed", "train_acc", "dperp_yhat0", "dperp_yhat1", "majority", "flagged"],
    );
    let mut agreement = Report::new(
        "ablation_agreement",
        &["pooling", "majority_with", "majority_without", "agree"],
    );
    for (pi, pooling) in pools.iter().enumerate() {
        let mut per_variant_majority = [0i64; 2];
        for (vi, &with_classifier) in variants.iter().enumerate() {
            let mut votes: Vec<i64> = Vec::new();
            for ((_, _, seed), (out, (n1, n0))) in cells
                .iter()
                .zip(&outcomes)
                .filter(|((c, v, _), _)| *c == pi && *v == with_classifier)
            {
                rows.push_row(vec![
                    pooling.to_string().into(),
                    if with_classifier { "with" } else { "without" }.into(),
                    Cell::Int(*seed as i64),
                    out.train_acc.into(),
                    (*n0).into(),
                    (*n1).into(),
                    Cell::Int(majority_label(*n1, *n0)),
                    out.flagged.into(),
                ])?;
                votes.push(majority_label(*n1, *n0));
            }
            per_variant_majority[vi] =
                i64::from(votes.iter().filter(|&&v| v == 1).count() * 2 > votes.len());
        }
        agreement.push_row(vec![
            pooling.to_string().into(),
            Cell::Int(per_variant_majority[0]),
            Cell::Int(per_variant_majority[1]),
            (per_variant_majority[0] == per_variant_majority[1]).into(),
        ])?;
    }
    Ok(AblationOutcome { rows, agreement })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_grid_partition, SynthSpec};

    fn tiny() -> PartitionedDataset {
        let spec = SynthSpec::grid_chain(4, 4, 4, 3, 8, 5).unwrap();
        synth_grid_partition(&spec).unwrap()
    }

    fn smoke_cfg() -> ExperimentConfig {
        ExperimentConfig {
            epochs: 3,
            seeds: vec![1, 2],
            ..Default::default()
        }
    }

    #[test]
    fn probe_counts_sum_to_probe_size() {
        let ds = tiny();
        let cfg = smoke_cfg();
        let report =
            run_bias_probe(&ds, &[(Conv::Gcn, Pooling::Avg)], None, &cfg).unwrap();
        // Two seed rows plus a majority row.
        assert_eq!(report.rows.len(), 3);
        for (i, _) in report.find_rows(|r| matches!(&r[2], Cell::Int(_))) {
            let n1 = match report.cell(i, "dperp_yhat1") {
                Some(Cell::Int(v)) => *v as usize,
                _ => panic!(),
            };
            let n0 = match report.cell(i, "dperp_yhat0") {
                Some(Cell::Int(v)) => *v as usize,
                _ => panic!(),
            };
            assert_eq!(n1 + n0, ds.dperp.len());
        }
    }

    #[test]
    fn undertrained_rows_are_flagged_and_excluded() {
        let ds = tiny();
        let cfg = smoke_cfg(); // 3 epochs cannot reach 97%
        let report = run_bias_probe(&ds, &[(Conv::Gcn, Pooling::Sum)], None, &cfg).unwrap();
        let majority_row = report.rows.last().unwrap();
        assert_eq!(majority_row[7], Cell::Bool(true), "aggregate must be flagged");
    }

    #[test]
    fn reports_are_deterministic_across_reruns() {
        let ds = tiny();
        let cfg = smoke_cfg();
        let a = run_beta_sweep(&ds, &[1.0, 4.0], &cfg).unwrap();
        let b = run_beta_sweep(&ds, &[1.0, 4.0], &cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn generalization_report_shape() {
        let ds = tiny();
        let spec2 = SynthSpec::grid_chain(4, 4, 4, 3, 6, 99).unwrap();
        let test_same = synth_grid_partition(&spec2).unwrap();
        let spec3 = SynthSpec::grid_chain(5, 5, 4, 3, 6, 100).unwrap();
        let test_larger = synth_grid_partition(&spec3).unwrap();
        let cfg = smoke_cfg();
        let report = run_generalization(
            &ds,
            &test_same,
            &test_larger,
            &[(Conv::Gcn, Pooling::Max)],
            &cfg,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 2);
        for i in 0..2 {
            for col in ["test_acc_same", "test_acc_larger"] {
                match report.cell(i, col) {
                    Some(Cell::Float(v)) => assert!((0.0..=1.0).contains(v)),
                    other => panic!("{col}: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn ablation_produces_paired_rows_and_agreement() {
        let ds = tiny();
        let cfg = ExperimentConfig { epochs: 2, seeds: vec![1], ..Default::default() };
        let out = run_nolinear_ablation(&ds, &[Pooling::Avg, Pooling::Attn], &cfg).unwrap();
        assert_eq!(out.rows.rows.len(), 4); // 2 pools x 2 variants x 1 seed
        assert_eq!(out.agreement.rows.len(), 2);
        for i in 0..2 {
            match out.agreement.cell(i, "agree") {
                Some(Cell::Bool(_)) => {}
                other => panic!("agree column: {other:?}"),
            }
        }
    }
}
