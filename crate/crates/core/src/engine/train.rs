//! The epoch loop: sample once, then forward, losses, gradients, updates.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::*;
use crate::graph::{normalized_laplacian, Graph};
use crate::numerics::{sym_eigendecompose, Purpose};
use crate::sampler::{SamplerConfig, SamplingOperator};
use crate::tasks::{
    accuracy, classification_loss, cosine_scores, hits_at_k, link_loss, ClassifierHead, LinkLossConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct NodeTask {
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkTask {
    pub loss: LinkLossConfig,
    pub valid_pos: Vec<(usize, usize)>,
    pub valid_neg: Vec<(usize, usize)>,
    /// Cut-off of the Hits@K metric reported per epoch.
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Node(NodeTask),
    Link(LinkTask),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub recon_loss: f64,
    pub gnn_loss: f64,
    pub train_metric: f64,
    pub valid_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    /// `‖UᵀU − I‖_F` after each epoch's projection.
    pub basis_residuals: Vec<f64>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingTiming {
    pub sampling_seconds: f64,
    pub training_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub basis: Basis,
    pub code: SparseCode,
    pub head: Option<ClassifierHead>,
    pub operator: SamplingOperator,
    pub a_hat: PropagationMatrix,
    pub history: TrainingHistory,
    pub timing: TrainingTiming,
    pub sampling_invocations: usize,
}

impl TrainOutcome {
    /// Reconstructed node embeddings `H = UĤ`.
    pub fn embeddings(&self) -> Matrix {
        &self.basis.u * &self.code.h
    }

    /// Head predictions on rows of `UĤ`.
    pub fn predict_nodes(&self, nodes: &[usize]) -> Result<Vec<usize>> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::InvalidParams("model was not trained for node classification".into()))?;
        let h = self.embeddings();
        head.predict(&h.select_rows(nodes))
    }

    pub fn link_scores(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        cosine_scores(&self.embeddings(), pairs)
    }
}

pub struct Trainer {
    hyper: Hyperparams,
    sampler: SamplerConfig,
    seed: u64,
    sampling_invocations: usize,
}

impl Trainer {
    pub fn new(hyper: Hyperparams, sampler: SamplerConfig, seed: u64) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            hyper,
            sampler,
            seed,
            sampling_invocations: 0,
        })
    }

    /// Number of sampling-operator constructions performed so far.
    pub fn sampling_invocations(&self) -> usize {
        self.sampling_invocations
    }

    fn sample(&mut self, g: &Graph, a_hat: &PropagationMatrix) -> Result<SamplingOperator> {
        self.sampling_invocations += 1;
        let eig = sym_eigendecompose(&a_hat.to_dense())?;
        SamplingOperator::construct_with_eigen(g, &eig, &self.sampler, self.seed)
    }

    pub fn train(&mut self, g: &Graph, x: &Matrix, task: &Task) -> Result<TrainOutcome> {
        let n = g.num_nodes();
        let m = self.sampler.m;
        if x.nrows() != n {
            return Err(Error::shape("features", (n, x.ncols()), x.shape()));
        }
        if m == 0 || m > n {
            return Err(Error::InvalidParams(format!("need 1 <= M <= N, got M={m}, N={n}")));
        }
        validate_task(task, n)?;
        let hyper = self.hyper.clone();
        let d = x.ncols();

        let started = Instant::now();
        let a_hat = normalized_laplacian(g);
        let invocations_before = self.sampling_invocations;
        let operator = self.sample(g, &a_hat)?;
        let prop = Propagation::new(&operator.phi, &a_hat)?;
        let sampling_seconds = started.elapsed().as_secs_f64();
        log::info!(
            "sampled Φ: M={} rank={} nnz={} in {:.3}s",
            operator.m(),
            operator.rank,
            operator.phi.nnz(),
            sampling_seconds
        );

        let started = Instant::now();
        let mut init = RngStream::new(self.seed, Purpose::Init);
        let mut params = ModelParams::init(n, m, hyper.layers, &mut init);
        let mut code = SparseCode::init(n, d, &mut init);
        let mut basis = Basis::identity(n);
        let mut head = match task {
            Task::Node(t) => Some(ClassifierHead::init(d, t.num_classes, &mut init)),
            Task::Link(_) => None,
        };
        let mut shapes: Vec<(usize, usize)> = params.layers.iter().map(|w| w.shape()).collect();
        if let Some(h) = &head {
            shapes.push(h.weights.shape());
            shapes.push(h.bias.shape());
        }
        let mut stepper = ParamStepper::new(hyper.optimizer, &shapes);

        // With U = I at initialization, X̂ = UᵀX = X.
        let x_hat = x.clone();
        let fixed_t0 = match hyper.measurement {
            MeasurementMode::Simplified => Some(initial_measurements(&prop.phi, x)?),
            MeasurementMode::Literal => None,
        };
        let anchor_rows = match task {
            Task::Node(t) => {
                let mut mask = vec![false; n];
                for &i in &t.train {
                    mask[i] = true;
                }
                Some(mask)
            }
            Task::Link(_) => None,
        };

        let mut history = TrainingHistory::default();
        let mut prev_total: Option<f64> = None;
        let mut flat_epochs = 0;
        for epoch in 0..hyper.epochs {
            let t0 = match &fixed_t0 {
                Some(t) => t.clone(),
                None => literal_initial_measurements(&prop.phi, &basis.u, &x_hat)?,
            };
            let trace = forward(&prop.phi_a, &params, &t0, hyper.activation)?;
            let e = residual(&trace.z, &prop.phi, &basis.u, &code.h)?;
            let recon = recon_loss_from_residual(&e, &code.h, hyper.lambda);
            let h_full = &basis.u * &code.h;

            let mut task_grad_z = None;
            let mut task_grad_h = None;
            let mut head_grads = None;
            let (gnn, train_metric, valid_metric) = match task {
                Task::Node(t) => {
                    let head_ref = head.as_ref().expect("node task has a head");
                    let out = classification_loss(
                        &trace.z,
                        head_ref,
                        &operator.anchors,
                        &t.labels,
                        anchor_rows.as_ref().unwrap(),
                    )?;
                    let train_acc = split_accuracy(head_ref, &h_full, &t.labels, &t.train)?;
                    let valid_acc = split_accuracy(head_ref, &h_full, &t.labels, &t.valid)?;
                    task_grad_z = Some(out.grad_z);
                    head_grads = Some((out.grad_weights, out.grad_bias));
                    (out.loss, train_acc, valid_acc)
                }
                Task::Link(t) => {
                    let (loss, dh) = link_loss(&h_full, &t.loss)?;
                    let train_hits = split_hits(&h_full, &t.loss.positive, &t.loss.negative, t.k)?;
                    let valid_hits = split_hits(&h_full, &t.valid_pos, &t.valid_neg, t.k)?;
                    task_grad_h = Some(dh);
                    (loss, train_hits, valid_hits)
                }
            };
            let total = total_loss(recon, gnn, hyper.alpha, hyper.beta);
            if !total.is_finite() {
                return Err(Error::NonFinite("loss diverged; reduce the learning rate"));
            }
            history.records.push(EpochRecord {
                epoch,
                total_loss: total,
                recon_loss: recon,
                gnn_loss: gnn,
                train_metric,
                valid_metric,
            });

            let gt = grad_theta(
                &trace,
                &prop.phi_a,
                &params,
                &e,
                task_grad_z.as_ref(),
                hyper.alpha,
                hyper.beta,
                hyper.activation,
            )?;
            let mut d_u = grad_u(&prop.phi, &e, &code.h, hyper.alpha)?;
            let mut d_h = grad_h(&prop.phi, &basis.u, &e, &code.h, hyper.alpha, hyper.lambda)?;
            if let Some(dh_full) = &task_grad_h {
                d_u += dh_full * code.h.transpose() * hyper.beta;
                d_h += basis.u.transpose() * dh_full * hyper.beta;
            }
            if hyper.measurement == MeasurementMode::Literal {
                d_u += prop.phi.tr_mul_dense(&gt.d_t0)? * x_hat.transpose();
            }
            let grads = GradientSet {
                d_w: gt.d_w,
                d_u,
                d_h,
                messages: gt.messages,
            };
            if let (Some(h), Some((gw, gb))) = (head.as_mut(), head_grads) {
                let slot = params.num_layers();
                stepper.step(slot, &mut h.weights, &(gw * hyper.beta), hyper.lr_theta);
                stepper.step(slot + 1, &mut h.bias, &(gb * hyper.beta), hyper.lr_theta);
            }
            apply_updates(&mut params, &mut basis, &mut code, &grads, &hyper, &mut stepper)?;
            let resid = basis.orthonormality_residual();
            if resid > BASIS_RESIDUAL_LIMIT {
                return Err(Error::NotOrthonormal(resid));
            }
            history.basis_residuals.push(resid);

            if let Some(prev) = prev_total {
                let rel = (prev - total) / prev.abs().max(f64::MIN_POSITIVE);
                if rel < hyper.plateau_tol {
                    flat_epochs += 1;
                } else {
                    flat_epochs = 0;
                }
                if flat_epochs >= hyper.patience {
                    log::info!("plateau reached after {} epochs", epoch + 1);
                    history.stopped_early = true;
                    break;
                }
            }
            prev_total = Some(total);
            if epoch % 50 == 0 {
                log::debug!("epoch {epoch}: total {total:.6e} recon {recon:.6e} gnn {gnn:.6e}");
            }
        }
        let training_seconds = started.elapsed().as_secs_f64();

        Ok(TrainOutcome {
            params,
            basis,
            code,
            head,
            operator,
            a_hat,
            history,
            timing: TrainingTiming {
                sampling_seconds,
                training_seconds,
            },
            sampling_invocations: self.sampling_invocations - invocations_before,
        })
    }
}

fn validate_task(task: &Task, n: usize) -> Result<()> {
    let check = |node: usize| {
        if node >= n {
            Err(Error::NodeOutOfRange { node, num_nodes: n })
        } else {
            Ok(())
        }
    };
    match task {
        Task::Node(t) => {
            if t.labels.len() != n {
                return Err(Error::InconsistentDimensions(format!(
                    "{} labels for {n} nodes",
                    t.labels.len()
                )));
            }
            if let Some(&bad) = t.labels.iter().find(|&&l| l >= t.num_classes) {
                return Err(Error::InvalidParams(format!(
                    "label {bad} >= class count {}",
                    t.num_classes
                )));
            }
            t.train.iter().chain(&t.valid).try_for_each(|&i| check(i))
        }
        Task::Link(t) => t
            .loss
            .positive
            .iter()
            .chain(&t.loss.negative)
            .chain(&t.valid_pos)
            .chain(&t.valid_neg)
            .try_for_each(|&(a, b)| check(a).and(check(b))),
    }
}

fn split_accuracy(head: &ClassifierHead, h: &Matrix, labels: &[usize], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Ok(f64::NAN);
    }
    let pred = head.predict(&h.select_rows(nodes))?;
    let truth: Vec<usize> = nodes.iter().map(|&i| labels[i]).collect();
    accuracy(&pred, &truth)
}

fn split_hits(h: &Matrix, pos: &[(usize, usize)], neg: &[(usize, usize)], k: usize) -> Result<f64> {
    if pos.is_empty() {
        return Ok(f64::NAN);
    }
    match (cosine_scores(h, pos), cosine_scores(h, neg)) {
        (Ok(p), Ok(q)) => hits_at_k(&p, &q, k),
        // A zero embedding row has no direction to rank by.
        (Err(Error::ZeroNormEmbedding(_)), _) | (_, Err(Error::ZeroNormEmbedding(_))) => Ok(0.0),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}
