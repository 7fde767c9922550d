//! Task heads, task losses and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gaussian_matrix, Matrix, RngStream};

pub const DEFAULT_MARGIN: f64 = 0.5;
const MIN_EMBEDDING_NORM: f64 = 1e-12;

/// Linear `d → C` classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub weights: Matrix,
    /// `1 × C`.
    pub bias: Matrix,
}

impl ClassifierHead {
    pub fn init(d: usize, classes: usize, rng: &mut RngStream) -> Self {
        Self {
            weights: gaussian_matrix(d, classes, 2.0 / (d + classes) as f64, rng),
            bias: Matrix::zeros(1, classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.ncols()
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.weights.nrows() {
            return Err(Error::shape(
                "classifier head",
                (x.nrows(), self.weights.nrows()),
                x.shape(),
            ));
        }
        let mut out = x * &self.weights;
        for mut row in out.row_iter_mut() {
            row += &self.bias;
        }
        Ok(out)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.nrows())
        .map(|i| {
            let mut best = 0;
            for c in 1..m.ncols() {
                if m[(i, c)] > m[(i, best)] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn log_softmax_row(logits: &Matrix, i: usize) -> Vec<f64> {
    let row = logits.row(i);
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

#[derive(Debug, Clone)]
pub struct ClassificationLoss {
    pub loss: f64,
    pub grad_z: Matrix,
    pub grad_weights: Matrix,
    pub grad_bias: Matrix,
    /// Measurement rows that carried a label.
    pub rows: Vec<usize>,
}

/// Mean softmax cross-entropy over measurement rows whose anchor is a
/// training node; each such row takes its anchor's label.
pub fn classification_loss(
    z: &Matrix,
    head: &ClassifierHead,
    anchors: &[usize],
    labels: &[usize],
    train_mask: &[bool],
) -> Result<ClassificationLoss> {
    if anchors.len() != z.nrows() {
        return Err(Error::InvalidParams(format!(
            "{} anchors for {} measurement rows",
            anchors.len(),
            z.nrows()
        )));
    }
    let rows: Vec<usize> = (0..z.nrows())
        .filter(|&r| train_mask.get(anchors[r]).copied().unwrap_or(false))
        .collect();
    let targets: Vec<usize> = rows.iter().map(|&r| labels[anchors[r]]).collect();
    cross_entropy(z, head, &rows, &targets).map(|(loss, grad_z, grad_weights, grad_bias)| ClassificationLoss {
        loss,
        grad_z,
        grad_weights,
        grad_bias,
        rows,
    })
}

/// Mean cross-entropy of `head(x)` over `rows` with targets `targets`.
/// Returns `(loss, ∂/∂x, ∂/∂W, ∂/∂b)`.
pub fn cross_entropy(
    x: &Matrix,
    head: &ClassifierHead,
    rows: &[usize],
    targets: &[usize],
) -> Result<(f64, Matrix, Matrix, Matrix)> {
    if rows.is_empty() {
        return Err(Error::NoLabeledMeasurements);
    }
    let c = head.num_classes();
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::InvalidParams(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let logits = head.logits(x)?;
    let scale = 1.0 / rows.len() as f64;
    let mut loss = 0.0;
    let mut grad_logits = Matrix::zeros(x.nrows(), c);
    for (&r, &y) in rows.iter().zip(targets) {
        let logp = log_softmax_row(&logits, r);
        loss -= logp[y] * scale;
        for k in 0..c {
            let p = logp[k].exp();
            grad_logits[(r, k)] += scale * (p - if k == y { 1.0 } else { 0.0 });
        }
    }
    let grad_x = &grad_logits * head.weights.transpose();
    let grad_w = x.transpose() * &grad_logits;
    let mut grad_b = Matrix::zeros(1, c);
    for r in rows {
        for k in 0..c {
            grad_b[(0, k)] += grad_logits[(*r, k)];
        }
    }
    Ok((loss, grad_x, grad_w, grad_b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkLossConfig {
    pub gamma: f64,
    pub positive: Vec<(usize, usize)>,
    pub negative: Vec<(usize, usize)>,
}

impl LinkLossConfig {
    pub fn new(positive: Vec<(usize, usize)>, negative: Vec<(usize, usize)>) -> Self {
        Self {
            gamma: DEFAULT_MARGIN,
            positive,
            negative,
        }
    }
}

struct Cosine {
    value: f64,
    /// ∂cos/∂h_i and ∂cos/∂h_j.
    grad_i: Vec<f64>,
    grad_j: Vec<f64>,
}

fn cosine_with_grad(h: &Matrix, i: usize, j: usize) -> Result<Cosine> {
    let a = h.row(i);
    let b = h.row(j);
    let na = a.norm();
    let nb = b.norm();
    if na < MIN_EMBEDDING_NORM {
        return Err(Error::ZeroNormEmbedding(i));
    }
    if nb < MIN_EMBEDDING_NORM {
        return Err(Error::ZeroNormEmbedding(j));
    }
    let dot = a.dot(&b);
    let value = dot / (na * nb);
    let grad_i = (0..h.ncols())
        .map(|c| b[c] / (na * nb) - value * a[c] / (na * na))
        .collect();
    let grad_j = (0..h.ncols())
        .map(|c| a[c] / (na * nb) - value * b[c] / (nb * nb))
        .collect();
    Ok(Cosine { value, grad_i, grad_j })
}

/// Cosine similarity of each node pair.
pub fn cosine_scores(h: &Matrix, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|&(i, j)| cosine_with_grad(h, i, j).map(|c| c.value))
        .collect()
}

/// Mean `1 − cos` over positive pairs plus mean hinge
/// `max(0, γ − (1 − cos))` over negative pairs, with the gradient in `H`.
pub fn link_loss(h: &Matrix, cfg: &LinkLossConfig) -> Result<(f64, Matrix)> {
    if !(cfg.gamma >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "margin {} must be nonnegative",
            cfg.gamma
        )));
    }
    let n = h.nrows();
    for &(i, j) in cfg.positive.iter().chain(&cfg.negative) {
        for node in [i, j] {
            if node >= n {
                return Err(Error::NodeOutOfRange { node, num_nodes: n });
            }
        }
    }
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, h.ncols());
    let mut accumulate = |i: usize, j: usize, cos: &Cosine, coef: f64| {
        for c in 0..h.ncols() {
            grad[(i, c)] += coef * cos.grad_i[c];
            grad[(j, c)] += coef * cos.grad_j[c];
        }
    };
    if !cfg.positive.is_empty() {
        let scale = 1.0 / cfg.positive.len() as f64;
        for &(i, j) in &cfg.positive {
            let cos = cosine_with_grad(h, i, j)?;
            loss += scale * (1.0 - cos.value);
            accumulate(i, j, &cos, -scale);
        }
    }
    if !cfg.negative.is_empty() {
        let scale = 1.0 / cfg.negative.len() as f64;
        for &(i, j) in &cfg.negative {
            let cos = cosine_with_grad(h, i, j)?;
            let hinge = cfg.gamma - (1.0 - cos.value);
            if hinge > 0.0 {
                loss += scale * hinge;
                accumulate(i, j, &cos, scale);
            }
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Accuracy,
    MicroF1,
    HitsAtK,
    Mrr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric_name: MetricName,
    pub value: f64,
    pub split: Split,
}

/// What a metric is computed from.
#[derive(Debug, Clone, Copy)]
pub enum EvalInput<'a> {
    /// Predicted and true class per evaluated node.
    Classes { predicted: &'a [usize], truth: &'a [usize] },
    /// Scores of positive pairs against a shared pool of negative scores.
    LinkScores {
        positive: &'a [f64],
        negative: &'a [f64],
        k: usize,
    },
    /// One `(true score, candidate negative scores)` entry per query.
    Queries { queries: &'a [(f64, Vec<f64>)] },
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return Err(Error::EmptySplit);
    }
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / predicted.len() as f64)
}

/// Micro-averaged F1 over all classes, pooling true positives, false
/// positives and false negatives.
pub fn micro_f1(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return Err(Error::EmptySplit);
    }
    let classes = predicted.iter().chain(truth).copied().max().unwrap_or(0) + 1;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for c in 0..classes {
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
    }
    let denom = 2 * tp + fp + fneg;
    Ok(if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}

/// Fraction of positives scoring strictly above the `k`-th highest negative.
/// With fewer than `k` negatives every positive counts as a hit.
pub fn hits_at_k(positive: &[f64], negative: &[f64], k: usize) -> Result<f64> {
    if positive.is_empty() || k == 0 {
        return Err(Error::EmptySplit);
    }
    if negative.len() < k {
        return Ok(1.0);
    }
    let mut neg = negative.to_vec();
    neg.sort_by(|a, b| b.total_cmp(a));
    let threshold = neg[k - 1];
    let hits = positive.iter().filter(|&&p| p > threshold).count();
    Ok(hits as f64 / positive.len() as f64)
}

/// Rank of the true candidate: one plus the number of negatives scoring at
/// least as high.
pub fn rank_of(true_score: f64, negatives: &[f64]) -> usize {
    1 + negatives.iter().filter(|&&s| s >= true_score).count()
}

pub fn mrr_from_ranks(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::EmptySplit);
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

pub fn evaluate(input: EvalInput<'_>, split: Split, metric_name: MetricName) -> Result<EvalReport> {
    let value = match (metric_name, input) {
        (MetricName::Accuracy, EvalInput::Classes { predicted, truth }) => accuracy(predicted, truth)?,
        (MetricName::MicroF1, EvalInput::Classes { predicted, truth }) => micro_f1(predicted, truth)?,
        (MetricName::HitsAtK, EvalInput::LinkScores { positive, negative, k }) => hits_at_k(positive, negative, k)?,
        (MetricName::Mrr, EvalInput::Queries { queries }) => {
            let ranks: Vec<usize> = queries.iter().map(|(s, negs)| rank_of(*s, negs)).collect();
            mrr_from_ranks(&ranks)?
        }
        (name, _) => {
            return Err(Error::InvalidParams(format!(
                "metric {name:?} does not accept this input"
            )))
        }
    };
    Ok(EvalReport {
        metric_name,
        value,
        split,
    })
}
