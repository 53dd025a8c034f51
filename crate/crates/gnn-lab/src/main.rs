//! Command-line front end: dataset synthesis, training, the experiment
//! suite, subgraph search, and gradient checking.
//!
//! Exit codes: 0 success, 1 validation failure, 2 I/O error.

use clap::{Parser, Subcommand};
use gnn_lab::dataset::{
    self, densify_host_colors, load_dataset, plant_into_host, read_jsonl, save_dataset,
    synth_grid_partition, PlantMode, SynthError, SynthSpec,
};
use gnn_lab::experiments::{
    run_beta_sweep, run_bias_probe, run_generalization, run_nolinear_ablation, ExperimentConfig,
    ExperimentError,
};
use gnn_lab::graph::Pattern;
use gnn_lab::model::{Conv, ModelError, ModelParams, Pooling};
use gnn_lab::oracle::{search_with_coverage, OracleError};
use gnn_lab::report::{Report, ReportError, ReportFormat};
use gnn_lab::theory::{
    check_anchor_alignment, measure_bounds, preservation_report, AlignmentMonitor, TheoryError,
};
use gnn_lab::train::{
    grad_check, random_gradcheck_graphs, save_checkpoint, train, Batch, Optimizer, TrainConfig,
    TrainError, TrainMonitor,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gnn-lab", version, about = "Grid-graph pooling-bias laboratory")]
struct Cli {
    /// Plain-text key=value config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for datasets, reports, and checkpoints.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format: csv or json.
    #[arg(long, global = true)]
    format: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a partitioned grid-graph dataset.
    GenGrid {
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long)]
        bg_colors: Option<usize>,
        #[arg(long)]
        pattern_len: Option<usize>,
        #[arg(long)]
        per_partition: Option<usize>,
    },
    /// Plant the pattern into host graphs loaded from a JSONL file.
    PlantHost {
        #[arg(long)]
        hosts: PathBuf,
        #[arg(long)]
        mode: String,
        #[arg(long)]
        pattern_len: Option<usize>,
    },
    /// Re-verify a dataset directory against the partition predicates.
    Verify {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one model on a dataset's labeled classes.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        conv: Option<String>,
        #[arg(long)]
        pooling: Option<String>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<String>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        no_classifier: bool,
        #[arg(long)]
        theory: bool,
    },
    /// Label-bias probe: train on D1/D0, count labels assigned to D-perp.
    Probe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: Option<String>,
        #[arg(long)]
        pools: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<String>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Size generalization: train on one dataset, test on two held-out ones.
    Generalize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test_same: PathBuf,
        #[arg(long)]
        test_larger: PathBuf,
        #[arg(long)]
        models: Option<String>,
        #[arg(long)]
        pools: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<String>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Softmax temperature sweep for attention pooling.
    SweepBeta {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        betas: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<String>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Classifier-pruning ablation per pooling kind.
    AblateLinear {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pools: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<String>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Exhaustive discriminative-subgraph search.
    Search {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Verify tape gradients against finite differences on random graphs.
    GradCheck {
        #[arg(long)]
        graphs: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Theory-mode attention run with the alignment monitor attached.
    TraceAlignment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Convert a stored JSON report to another format.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) => m,
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Train(TrainError::Io { .. }) => CliError::Io(e.to_string()),
            ExperimentError::Report(ReportError::Io { .. }) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// key=value settings with CLI-over-config-over-default precedence.
struct Settings {
    map: HashMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let body = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            for (lineno, line) in body.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(CliError::Validation(format!(
                        "{}:{}: expected key=value, got {line:?}",
                        path.display(),
                        lineno + 1
                    )));
                };
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Settings { map })
    }

    fn get<T: std::str::FromStr>(
        &self,
        key: &str,
        cli: Option<T>,
        default: T,
    ) -> Result<T, CliError> {
        if let Some(v) = cli {
            return Ok(v);
        }
        match self.map.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                CliError::Validation(format!("config key {key}: cannot parse {raw:?}"))
            }),
        }
    }

    fn get_string(&self, key: &str, cli: Option<String>, default: &str) -> String {
        cli.or_else(|| self.map.get(key).cloned()).unwrap_or_else(|| default.to_string())
    }
}

fn parse_pooling(s: &str) -> Result<Pooling, CliError> {
    match s {
        "max" => Ok(Pooling::Max),
        "avg" => Ok(Pooling::Avg),
        "sum" => Ok(Pooling::Sum),
        "attn" => Ok(Pooling::Attn),
        other => Err(CliError::Validation(format!("unknown pooling {other:?}"))),
    }
}

fn parse_conv(s: &str) -> Result<Conv, CliError> {
    match s {
        "gcn" => Ok(Conv::Gcn),
        "gat" => Ok(Conv::Gat),
        other => Err(CliError::Validation(format!("unknown model {other:?}"))),
    }
}

fn parse_optimizer(s: &str) -> Result<Optimizer, CliError> {
    match s {
        "sgd" => Ok(Optimizer::Sgd),
        "adam" => Ok(Optimizer::Adam),
        other => Err(CliError::Validation(format!("unknown optimizer {other:?}"))),
    }
}

fn parse_batch(s: &str) -> Result<Batch, CliError> {
    if s == "full" {
        Ok(Batch::Full)
    } else {
        s.parse::<usize>()
            .map(Batch::Mini)
            .map_err(|_| CliError::Validation(format!("batch must be 'full' or a size, got {s:?}")))
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|_| CliError::Validation(format!("bad {what} entry {tok:?}")))
        })
        .collect()
}

fn report_format(settings: &Settings, cli: &Option<String>) -> Result<ReportFormat, CliError> {
    settings
        .get_string("format", cli.clone(), "csv")
        .parse::<ReportFormat>()
        .map_err(CliError::from)
}

fn experiment_config(
    settings: &Settings,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch: Option<String>,
    hidden: Option<usize>,
    seeds: Option<String>,
) -> Result<ExperimentConfig, CliError> {
    let default = ExperimentConfig::default();
    let batch_str = settings.get_string("batch", batch, "1");
    let seeds_str = settings.get_string("seeds", seeds, "1,2,3");
    Ok(ExperimentConfig {
        epochs: settings.get("epochs", epochs, default.epochs)?,
        learning_rate: settings.get("lr", lr, default.learning_rate)?,
        batch: parse_batch(&batch_str)?,
        optimizer: parse_optimizer(&settings.get_string("optimizer", None, "adam"))?,
        hidden: settings.get("hidden", hidden, default.hidden)?,
        seeds: parse_list(&seeds_str, "seed")?,
        min_train_acc: settings.get("min_train_acc", None, default.min_train_acc)?,
    })
}

fn model_pool_matrix(
    settings: &Settings,
    models: Option<String>,
    pools: Option<String>,
) -> Result<Vec<(Conv, Pooling)>, CliError> {
    let models = settings.get_string("models", models, "gcn");
    let pools = settings.get_string("pools", pools, "max,avg,attn");
    let convs: Vec<Conv> =
        models.split(',').map(|m| parse_conv(m.trim())).collect::<Result<_, _>>()?;
    let pools: Vec<Pooling> =
        pools.split(',').map(|p| parse_pooling(p.trim())).collect::<Result<_, _>>()?;
    Ok(convs.iter().flat_map(|&c| pools.iter().map(move |&p| (c, p))).collect())
}

fn write_text(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| io_error(path, e))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = Settings::load(cli.config.as_deref())?;
    let seed = settings.get("seed", cli.seed, 0)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let format = report_format(&settings, &cli.format)?;

    match cli.cmd {
        Cmd::GenGrid { rows, cols, bg_colors, pattern_len, per_partition } => {
            let rows = settings.get("rows", rows, 12)?;
            let cols = settings.get("cols", cols, 12)?;
            let bg = settings.get("bg_colors", bg_colors, 4)?;
            let len = settings.get("pattern_len", pattern_len, 3)?;
            let per = settings.get("per_partition", per_partition, rows * cols)?;
            let spec = SynthSpec::grid_chain(rows, cols, bg, len, per, seed)?;
            let ds = synth_grid_partition(&spec)?;
            save_dataset(&ds, &out, Some(&spec))?;
            let report = dataset::verify_partition(&ds);
            println!(
                "wrote {} (d1={}, d0={}, dperp={}, palette={}, verified={})",
                out.display(),
                report.counts.0,
                report.counts.1,
                report.counts.2,
                report.palette_size,
                report.ok()
            );
            Ok(())
        }
        Cmd::PlantHost { hosts, mode, pattern_len } => {
            let mode = match mode.as_str() {
                "full" => PlantMode::Full,
                "partial" => PlantMode::Partial,
                "scattered" => PlantMode::Scattered,
                other => {
                    return Err(CliError::Validation(format!("unknown plant mode {other:?}")))
                }
            };
            let len = settings.get("pattern_len", pattern_len, 3)?;
            let raw_hosts = read_jsonl(&hosts)?;
            if raw_hosts.is_empty() {
                return Err(CliError::Validation(format!("no hosts in {}", hosts.display())));
            }
            let (hosts, distinct) = densify_host_colors(&raw_hosts);
            let pattern = Pattern::chain((distinct..distinct + len).collect())
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ds = plant_into_host(&hosts, &pattern, mode, &mut rng)?;
            save_dataset(&ds, &out, None)?;
            println!("planted {mode:?} into {} hosts -> {}", hosts.len(), out.display());
            Ok(())
        }
        Cmd::Verify { data } => {
            let ds = load_dataset(&data)?;
            let report = dataset::verify_partition(&ds);
            let mut table = Report::new(
                "verify",
                &["partition", "count", "mismatches", "label_issues", "parity_ok"],
            );
            use gnn_lab::graph::Partition as P;
            let mism = |p: P| report.mismatches.iter().filter(|m| m.partition == p).count();
            let labl = |p: P| report.label_issues.iter().filter(|l| l.partition == p).count();
            for (name, count, p) in [
                ("d1", report.counts.0, P::D1),
                ("d0", report.counts.1, P::D0),
                ("dperp", report.counts.2, P::DPerp),
            ] {
                table.push_row(vec![
                    name.into(),
                    count.into(),
                    mism(p).into(),
                    labl(p).into(),
                    report.label_parity_ok.into(),
                ])?;
            }
            if cli.out.is_some() {
                let path = table.write(&out, format)?;
                println!("wrote {}", path.display());
            }
            println!(
                "dataset ok={} (mismatches={}, label_issues={}, parity_ok={})",
                report.ok(),
                report.mismatches.len(),
                report.label_issues.len(),
                report.label_parity_ok
            );
            if report.ok() {
                Ok(())
            } else {
                Err(CliError::Validation("dataset verification failed".into()))
            }
        }
        Cmd::Train {
            data,
            conv,
            pooling,
            beta,
            epochs,
            lr,
            batch,
            hidden,
            no_classifier,
            theory,
        } => {
            let ds = load_dataset(&data)?;
            let graphs = ds.training_graphs();
            let conv = parse_conv(&settings.get_string("conv", conv, "gcn"))?;
            let pooling = parse_pooling(&settings.get_string("pooling", pooling, "attn"))?;
            let beta = settings.get("beta", beta, 1.0)?;
            let batch = parse_batch(&settings.get_string("batch", batch, "1"))?;
            let cfg = TrainConfig {
                learning_rate: settings.get("lr", lr, 0.001)?,
                epochs: settings.get("epochs", epochs, 100)?,
                batch,
                optimizer: parse_optimizer(
                    &settings.get_string("optimizer", None, if theory { "sgd" } else { "adam" }),
                )?,
                seed,
                shuffle: true,
                log_every: settings.get("log_every", None, 0)?,
            };
            let init = if theory {
                ModelParams::new_theory(pooling, ds.palette_size, beta)?
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let hidden = settings.get("hidden", hidden, 16)?;
                if no_classifier {
                    ModelParams::new_training_no_classifier(
                        conv,
                        pooling,
                        ds.palette_size,
                        beta,
                        &mut rng,
                    )?
                } else {
                    ModelParams::new_training(
                        conv,
                        pooling,
                        ds.palette_size,
                        hidden,
                        beta,
                        &mut rng,
                    )?
                }
            };
            let (params, trace) = train(&init, &graphs, &cfg, &mut [])?;
            for w in &trace.warnings {
                eprintln!("warning: {w}");
            }
            write_text(&out.join("train_log.csv"), &trace.to_csv())?;
            save_checkpoint(&params, &out.join("model.json"))?;
            let last = trace.entries.last().expect("final step logged");
            println!(
                "trained {conv}+{pooling}: loss={:.4} acc={:.4} -> {}",
                last.loss,
                last.train_acc,
                out.display()
            );
            Ok(())
        }
        Cmd::Probe { data, models, pools, epochs, lr, batch, hidden, seeds } => {
            let ds = load_dataset(&data)?;
            let cfg = experiment_config(&settings, epochs, lr, batch, hidden, seeds)?;
            let matrix = model_pool_matrix(&settings, models, pools)?;
            let report = run_bias_probe(&ds, &matrix, None, &cfg)?;
            let path = report.write(&out, format)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Cmd::Generalize {
            data,
            test_same,
            test_larger,
            models,
            pools,
            epochs,
            lr,
            batch,
            hidden,
            seeds,
        } => {
            let train_ds = load_dataset(&data)?;
            let same = load_dataset(&test_same)?;
            let larger = load_dataset(&test_larger)?;
            let cfg = experiment_config(&settings, epochs, lr, batch, hidden, seeds)?;
            let matrix = model_pool_matrix(&settings, models, pools)?;
            let report = run_generalization(&train_ds, &same, &larger, &matrix, &cfg)?;
            let path = report.write(&out, format)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Cmd::SweepBeta { data, betas, epochs, lr, batch, hidden, seeds } => {
            let ds = load_dataset(&data)?;
            let cfg = experiment_config(&settings, epochs, lr, batch, hidden, seeds)?;
            let betas_str = settings.get_string("betas", betas, "1,4,10,300");
            let betas: Vec<f64> = parse_list(&betas_str, "beta")?;
            if betas.iter().any(|&b| b <= 0.0) {
                return Err(CliError::Validation("temperatures must be positive".into()));
            }
            let report = run_beta_sweep(&ds, &betas, &cfg)?;
            let path = report.write(&out, format)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Cmd::AblateLinear { data, pools, epochs, lr, batch, hidden, seeds } => {
            let ds = load_dataset(&data)?;
            let cfg = experiment_config(&settings, epochs, lr, batch, hidden, seeds)?;
            let pools_str = settings.get_string("pools", pools, "max,avg,attn");
            let pools: Vec<Pooling> = pools_str
                .split(',')
                .map(|p| parse_pooling(p.trim()))
                .collect::<Result<_, _>>()?;
            let outcome = run_nolinear_ablation(&ds, &pools, &cfg)?;
            let rows_path = outcome.rows.write(&out, format)?;
            let agree_path = outcome.agreement.write(&out, format)?;
            println!("wrote {} and {}", rows_path.display(), agree_path.display());
            Ok(())
        }
        Cmd::Search { data, k } => {
            let ds = load_dataset(&data)?;
            let k = settings.get("k", k, ds.pattern.size())?;
            let result = search_with_coverage(&ds.d1, &ds.d0, k)?;
            let body = serde_json::to_string_pretty(&result)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            write_text(&out.join("search.json"), &body)?;
            println!(
                "{} discriminative subgraph(s) at k={k}; contains planted pattern: {}",
                result.hits.len(),
                result.contains_pattern(&ds.pattern)
            );
            Ok(())
        }
        Cmd::GradCheck { graphs, tol } => {
            let count = settings.get("graphs", graphs, 20)?;
            let tol = settings.get("tol", tol, 1e-4)?;
            let fixtures = random_gradcheck_graphs(count, 16, 7, seed);
            let refs: Vec<(&gnn_lab::graph::Graph, f64)> =
                fixtures.iter().map(|(g, y)| (g, *y)).collect();
            let mut table = Report::new(
                "grad_check",
                &["model", "pooling", "beta", "group", "max_rel_err", "pass"],
            );
            let mut all_pass = true;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
            for conv in [Conv::Gcn, Conv::Gat] {
                for (pooling, beta) in [
                    (Pooling::Sum, 1.0),
                    (Pooling::Avg, 1.0),
                    (Pooling::Max, 1.0),
                    (Pooling::Attn, 0.5),
                    (Pooling::Attn, 1.0),
                    (Pooling::Attn, 4.0),
                ] {
                    let params = ModelParams::new_training(conv, pooling, 7, 5, beta, &mut rng)?;
                    let report = grad_check(&params, &refs, tol)?;
                    all_pass &= report.pass();
                    for group in &report.groups {
                        table.push_row(vec![
                            conv.to_string().into(),
                            pooling.to_string().into(),
                            beta.into(),
                            group.name.clone().into(),
                            group.max_rel_err.into(),
                            group.pass.into(),
                        ])?;
                    }
                }
            }
            let path = table.write(&out, format)?;
            println!("wrote {} (all pass: {all_pass})", path.display());
            if all_pass {
                Ok(())
            } else {
                Err(CliError::Validation("gradient check failed".into()))
            }
        }
        Cmd::TraceAlignment { data, epochs, lr, beta } => {
            let ds = load_dataset(&data)?;
            let beta = settings.get("beta", beta, 1.0)?;
            let model = ModelParams::new_theory(Pooling::Attn, ds.palette_size, beta)?;
            let cfg = TrainConfig {
                learning_rate: settings.get("lr", lr, 0.05)?,
                epochs: settings.get("epochs", epochs, 1500)?,
                batch: Batch::Full,
                optimizer: Optimizer::Sgd,
                seed,
                shuffle: false,
                log_every: 1,
            };
            let graphs = ds.training_graphs();
            let mut monitor = AlignmentMonitor::new(&ds, ds.palette_size)?;
            let mut monitors: Vec<&mut dyn TrainMonitor> = vec![&mut monitor];
            let (_, trace) = train(&model, &graphs, &cfg, &mut monitors)?;
            let bounds = measure_bounds(&ds)?;
            let lemma_ok = check_anchor_alignment(&ds)?;
            let summary = preservation_report(&monitor.records);
            write_text(&out.join("alignment.csv"), &monitor.to_csv())?;
            write_text(&out.join("train_log.csv"), &trace.to_csv())?;
            let summary_body = serde_json::json!({
                "preservation": summary,
                "bounds": bounds,
                "anchor_alignment_all_d1": lemma_ok,
                "final_train_acc": trace.final_accuracy(),
            });
            write_text(
                &out.join("preservation.json"),
                &serde_json::to_string_pretty(&summary_body)
                    .map_err(|e| CliError::Validation(e.to_string()))?,
            )?;
            println!(
                "alignment trace: {} records, final acc {:?} -> {}",
                monitor.records.len(),
                trace.final_accuracy(),
                out.display()
            );
            Ok(())
        }
        Cmd::Report { input } => {
            let body = std::fs::read_to_string(&input).map_err(|e| io_error(&input, e))?;
            let report = Report::from_json(&body)?;
            let path = report.write(&out, format)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}
