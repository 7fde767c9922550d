//! Drives a full training run from a [`RunConfig`] and writes its artifacts.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, TaskKind};
use super::dataset::{load_dataset, DatasetBundle};
use super::synth::{generate_synthetic, sample_non_edges};
use super::{fmt_float, write_atomic};
use crate::engine::{LinkTask, NodeTask, Task, TrainOutcome, Trainer, TrainingHistory};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Purpose, RngStream};
use crate::oracle::{full_participation_forward, heatmap_diff, Heatmap};
use crate::sampler::{estimate_rip, RipEstimate};
use crate::tasks::{
    accuracy, cosine_scores, hits_at_k, micro_f1, mrr_from_ranks, rank_of, ClassifierHead, LinkLossConfig,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.json";
pub const MODEL_FILE: &str = "model.json";
pub const EVAL_FILE: &str = "eval.json";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const RIPCHECK_FILE: &str = "ripcheck.json";
pub const METRICS_HEADER: &str = "epoch,total_loss,recon_loss,gnn_loss,train_metric,valid_metric";

// Child-stream indices of the run's data stream.
const TRAIN_NEGATIVES_STREAM: u64 = 17;
const HEATMAP_STREAM: u64 = 29;
const RIP_STREAM: u64 = 31;

/// Wall-clock breakdown. Host-to-device transfer does not exist on the CPU
/// and is always reported as zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub sampling_seconds: f64,
    pub training_seconds: f64,
    pub eval_seconds: f64,
    pub mem2gpu_seconds: f64,
    pub sampling_invocations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub metric_name: String,
    pub value: f64,
    /// Secondary metric: micro-F1 for classification, MRR for links.
    pub secondary_name: String,
    pub secondary_value: f64,
    pub epochs_run: usize,
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InconsistentDimensions("ragged matrix in model snapshot".into()));
    }
    Ok(Matrix::from_row_iterator(
        rows.len(),
        cols,
        rows.iter().flatten().copied(),
    ))
}

/// Trained parameters plus the config that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub config: RunConfig,
    pub layers: Vec<Vec<Vec<f64>>>,
    pub basis: Vec<Vec<f64>>,
    pub code: Vec<Vec<f64>>,
    pub head_weights: Option<Vec<Vec<f64>>>,
    pub head_bias: Option<Vec<f64>>,
    pub anchors: Vec<usize>,
}

impl ModelSnapshot {
    pub fn capture(config: &RunConfig, out: &TrainOutcome) -> Self {
        Self {
            config: config.clone(),
            layers: out.params.layers.iter().map(to_rows).collect(),
            basis: to_rows(&out.basis.u),
            code: to_rows(&out.code.h),
            head_weights: out.head.as_ref().map(|h| to_rows(&h.weights)),
            head_bias: out.head.as_ref().map(|h| h.bias.iter().copied().collect()),
            anchors: out.operator.anchors.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn embeddings(&self) -> Result<Matrix> {
        let u = from_rows(&self.basis)?;
        let h = from_rows(&self.code)?;
        if u.ncols() != h.nrows() {
            return Err(Error::InconsistentDimensions("basis and code disagree".into()));
        }
        Ok(u * h)
    }

    pub fn head(&self) -> Result<Option<ClassifierHead>> {
        match (&self.head_weights, &self.head_bias) {
            (Some(w), Some(b)) => Ok(Some(ClassifierHead {
                weights: from_rows(w)?,
                bias: Matrix::from_row_slice(1, b.len(), b),
            })),
            _ => Ok(None),
        }
    }
}

pub fn load_bundle(config: &RunConfig) -> Result<DatasetBundle> {
    match (&config.dataset, &config.synthetic) {
        (Some(dir), _) => load_dataset(dir),
        (None, Some(spec)) => generate_synthetic(spec, config.seed),
        (None, None) => Err(Error::InvalidParams(
            "config needs a `dataset` directory or a `synthetic` spec".into(),
        )),
    }
}

/// Builds the training task. Link training negatives are uniformly sampled
/// non-edges, as many as training positives, fixed by the run seed.
pub fn build_task(config: &RunConfig, bundle: &DatasetBundle) -> Result<Task> {
    match config.task {
        TaskKind::NodeClass => {
            let labels = bundle
                .labels
                .clone()
                .ok_or_else(|| Error::InvalidParams("node classification needs labels.csv".into()))?;
            Ok(Task::Node(NodeTask {
                num_classes: bundle.num_classes().unwrap_or(0),
                labels,
                train: bundle.splits.train.clone(),
                valid: bundle.splits.valid.clone(),
            }))
        }
        TaskKind::LinkPred => {
            let links = bundle
                .links
                .as_ref()
                .ok_or_else(|| Error::InvalidParams("link prediction needs links.json".into()))?;
            let canon = |&(u, v): &(usize, usize)| (u.min(v), u.max(v));
            let forbidden: HashSet<(usize, usize)> = links
                .pos_train
                .iter()
                .chain(&links.pos_valid)
                .chain(&links.pos_test)
                .chain(&links.neg_valid)
                .chain(&links.neg_test)
                .chain(bundle.graph.edges())
                .map(canon)
                .collect();
            let mut rng = RngStream::new(config.seed, Purpose::Data).derive(TRAIN_NEGATIVES_STREAM);
            let negatives = sample_non_edges(bundle.num_nodes(), &forbidden, links.pos_train.len(), &mut rng)?;
            Ok(Task::Link(LinkTask {
                loss: LinkLossConfig {
                    gamma: config.gamma,
                    positive: links.pos_train.clone(),
                    negative: negatives,
                },
                valid_pos: links.pos_valid.clone(),
                valid_neg: links.neg_valid.clone(),
                k: config.hits_k,
            }))
        }
    }
}

/// Test-split evaluation from reconstructed embeddings `H = UĤ`.
pub fn evaluate_test(
    config: &RunConfig,
    bundle: &DatasetBundle,
    embeddings: &Matrix,
    head: Option<&ClassifierHead>,
    epochs_run: usize,
) -> Result<TestReport> {
    match config.task {
        TaskKind::NodeClass => {
            let head = head.ok_or_else(|| Error::InvalidParams("model has no classifier head".into()))?;
            let labels = bundle
                .labels
                .as_ref()
                .ok_or_else(|| Error::InvalidParams("node classification needs labels".into()))?;
            let test = &bundle.splits.test;
            let pred = head.predict(&embeddings.select_rows(test))?;
            let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            Ok(TestReport {
                metric_name: "accuracy".into(),
                value: accuracy(&pred, &truth)?,
                secondary_name: "micro_f1".into(),
                secondary_value: micro_f1(&pred, &truth)?,
                epochs_run,
            })
        }
        TaskKind::LinkPred => {
            let links = bundle
                .links
                .as_ref()
                .ok_or_else(|| Error::InvalidParams("link prediction needs links.json".into()))?;
            let pos = cosine_scores(embeddings, &links.pos_test)?;
            let neg = cosine_scores(embeddings, &links.neg_test)?;
            let ranks: Vec<usize> = pos.iter().map(|&s| rank_of(s, &neg)).collect();
            Ok(TestReport {
                metric_name: format!("hits@{}", config.hits_k),
                value: hits_at_k(&pos, &neg, config.hits_k)?,
                secondary_name: "mrr".into(),
                secondary_value: mrr_from_ranks(&ranks)?,
                epochs_run,
            })
        }
    }
}

pub fn metrics_csv(history: &TrainingHistory) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in &history.records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            fmt_float(r.total_loss),
            fmt_float(r.recon_loss),
            fmt_float(r.gnn_loss),
            fmt_float(r.train_metric),
            fmt_float(r.valid_metric)
        ));
    }
    out
}

pub fn heatmap_csv(maps: &[(usize, Heatmap)]) -> String {
    let mut out = String::from("M,node,dim,abs_diff\n");
    for (m, map) in maps {
        for (a, &node) in map.nodes.iter().enumerate() {
            for (b, &dim) in map.dims.iter().enumerate() {
                out.push_str(&format!("{m},{node},{dim},{}\n", fmt_float(map.grid[a][b])));
            }
        }
    }
    out
}

/// `|H_ref − UĤ|` on training nodes, where `H_ref` is the node-domain
/// forward with the trained weights.
pub fn run_heatmap(config: &RunConfig, bundle: &DatasetBundle, out: &TrainOutcome) -> Result<Heatmap> {
    let h_ref = full_participation_forward(
        &out.a_hat,
        &out.params,
        &bundle.features,
        config.activation,
        &out.operator.phi,
    )?;
    let mut rng = RngStream::new(config.seed, Purpose::Data).derive(HEATMAP_STREAM);
    heatmap_diff(&h_ref, &out.embeddings(), &bundle.splits.train, &mut rng)
}

pub fn run_ripcheck(config: &RunConfig, out: &TrainOutcome) -> Result<RipEstimate> {
    let mut rng = RngStream::new(config.seed, Purpose::Data).derive(RIP_STREAM);
    estimate_rip(
        &out.operator.phi,
        &out.basis.u,
        config.rip_k,
        config.rip_trials,
        &mut rng,
    )
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub test: TestReport,
    pub timing: TimingReport,
    pub outcome: TrainOutcome,
    pub heatmap: Option<Heatmap>,
    pub ripcheck: Option<RipEstimate>,
}

/// Trains, evaluates and writes `metrics.csv`, `timing.json`, `model.json`,
/// `eval.json` and, on request, `heatmap.csv` and `ripcheck.json`.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let bundle = load_bundle(config)?;
    let task = build_task(config, &bundle)?;
    let mut trainer = Trainer::new(config.hyperparams(), config.sampler(), config.seed)?;
    let outcome = trainer.train(&bundle.graph, &bundle.features, &task)?;
    debug_assert_eq!(trainer.sampling_invocations(), 1);

    let started = Instant::now();
    let test = evaluate_test(
        config,
        &bundle,
        &outcome.embeddings(),
        outcome.head.as_ref(),
        outcome.history.records.len(),
    )?;
    let eval_seconds = started.elapsed().as_secs_f64();
    let timing = TimingReport {
        sampling_seconds: outcome.timing.sampling_seconds,
        training_seconds: outcome.timing.training_seconds,
        eval_seconds,
        mem2gpu_seconds: 0.0,
        sampling_invocations: trainer.sampling_invocations(),
    };

    let dir = &config.output_dir;
    write_atomic(&dir.join(METRICS_FILE), metrics_csv(&outcome.history).as_bytes())?;
    write_atomic(&dir.join(TIMING_FILE), &serde_json::to_vec_pretty(&timing)?)?;
    write_atomic(&dir.join(EVAL_FILE), &serde_json::to_vec_pretty(&test)?)?;
    write_atomic(
        &dir.join(MODEL_FILE),
        &serde_json::to_vec(&ModelSnapshot::capture(config, &outcome))?,
    )?;

    let heatmap = if config.heatmap {
        let map = run_heatmap(config, &bundle, &outcome)?;
        write_atomic(
            &dir.join(HEATMAP_FILE),
            heatmap_csv(&[(config.m, map.clone())]).as_bytes(),
        )?;
        Some(map)
    } else {
        None
    };
    let ripcheck = if config.ripcheck {
        let est = run_ripcheck(config, &outcome)?;
        write_atomic(&dir.join(RIPCHECK_FILE), &serde_json::to_vec_pretty(&est)?)?;
        Some(est)
    } else {
        None
    };
    log::info!("{} on test split: {:.4}", test.metric_name, test.value);
    Ok(RunSummary {
        test,
        timing,
        outcome,
        heatmap,
        ripcheck,
    })
}

/// Re-evaluates a saved model on its dataset's test split.
pub fn evaluate_snapshot(snapshot: &ModelSnapshot) -> Result<TestReport> {
    let bundle = load_bundle(&snapshot.config)?;
    let head = snapshot.head()?;
    evaluate_test(&snapshot.config, &bundle, &snapshot.embeddings()?, head.as_ref(), 0)
}

/// Trains once per `M` and collects the heatmap of each run on a shared
/// node and dimension sample.
pub fn heatmap_sweep(config: &RunConfig, ms: &[usize]) -> Result<Vec<(usize, Heatmap)>> {
    config.validate()?;
    let bundle = load_bundle(config)?;
    let task = build_task(config, &bundle)?;
    let mut maps = Vec::with_capacity(ms.len());
    for &m in ms {
        let cfg = RunConfig { m, ..config.clone() };
        let mut trainer = Trainer::new(cfg.hyperparams(), cfg.sampler(), cfg.seed)?;
        let outcome = trainer.train(&bundle.graph, &bundle.features, &task)?;
        maps.push((m, run_heatmap(&cfg, &bundle, &outcome)?));
    }
    Ok(maps)
}
