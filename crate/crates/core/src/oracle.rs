//! Reference computations: a conventional dense GCN, the no-sampling
//! forward, the reconstruct-every-layer pipeline, the error-bound check and
//! the embedding-difference heatmap.

use serde::{Deserialize, Serialize};

use crate::engine::{Activation, ModelParams, Optimizer, ParamStepper};
use crate::error::{Error, Result};
use crate::graph::{renormalized_adjacency, Graph, PropagationMatrix};
use crate::numerics::{frobenius, gaussian_matrix, Matrix, Purpose, RngStream};
use crate::recovery::{ista_recover, RecoveryProblem};
use crate::sparse::SparseMatrix;
use crate::tasks::{cosine_scores, cross_entropy, link_loss, ClassifierHead, LinkLossConfig};

pub const HEATMAP_SIDE: usize = 10;

/// `H⁽ˡ⁾ = σ(ÂH⁽ˡ⁻¹⁾W⁽ˡ⁾)`, `H⁽⁰⁾ = X`.
pub fn dense_gcn_forward(a: &SparseMatrix, x: &Matrix, weights: &[Matrix], act: Activation) -> Result<Matrix> {
    if a.nrows() != x.nrows() || a.ncols() != x.nrows() {
        return Err(Error::shape("dense GCN propagation", (x.nrows(), x.nrows()), a.shape()));
    }
    let mut h = x.clone();
    for w in weights {
        if w.nrows() != h.ncols() {
            return Err(Error::shape("dense GCN weight", (h.ncols(), w.ncols()), w.shape()));
        }
        h = act.apply(&(a.mul_dense(&h)? * w));
    }
    Ok(h)
}

/// Node-domain counterpart of the measurement-domain forward:
/// `H⁽ˡ⁾ = σ(ÂW⁽ˡ⁾ΦH⁽ˡ⁻¹⁾)`, `H⁽⁰⁾ = X`.
///
/// With `M = N` and `Φ = I` this is the measurement recursion itself. For
/// `M < N` the `N × M` weights need an `N → M` map on their right, and `Φ` is
/// the one under which `ΦH⁽ᴸ⁾ = Z` whenever `σ` commutes with `Φ`.
pub fn full_participation_forward(
    a_hat: &PropagationMatrix,
    params: &ModelParams,
    x: &Matrix,
    act: Activation,
    phi: &SparseMatrix,
) -> Result<Matrix> {
    let n = a_hat.dim();
    if x.nrows() != n || phi.ncols() != n {
        return Err(Error::shape("full-participation input", (n, x.ncols()), x.shape()));
    }
    let mut h = x.clone();
    for w in &params.layers {
        if w.shape() != (n, phi.nrows()) {
            return Err(Error::shape("layer weight", (n, phi.nrows()), w.shape()));
        }
        let mixed = w * phi.mul_dense(&h)?;
        h = act.apply(&a_hat.matrix().mul_dense(&mixed)?);
    }
    Ok(h)
}

/// Samples, recovers and reconstructs before every dense layer:
/// `H⁽ˡ⁾ = σ(Â · U·Rec(ΦH⁽ˡ⁻¹⁾) · W⁽ˡ⁾)`.
pub fn naive_cs_forward(
    a_hat: &SparseMatrix,
    x: &Matrix,
    weights: &[Matrix],
    phi: &SparseMatrix,
    u_fixed: &Matrix,
    lambda: f64,
    act: Activation,
) -> Result<Matrix> {
    let a_op = phi.mul_dense(u_fixed)?;
    let mut h = x.clone();
    for w in weights {
        let t = phi.mul_dense(&h)?;
        let mut problem = RecoveryProblem::new(&t, &a_op, lambda);
        problem.max_iters = 20_000;
        problem.tol = 1e-13;
        let rec = ista_recover(&problem)?;
        let h_rec = u_fixed * rec.h;
        if w.nrows() != h_rec.ncols() {
            return Err(Error::shape("dense GCN weight", (h_rec.ncols(), w.ncols()), w.shape()));
        }
        h = act.apply(&(a_hat.mul_dense(&h_rec)? * w));
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundReport {
    pub measured_error: f64,
    pub residual_norm: f64,
    pub delta_hat: f64,
    pub lipschitz: f64,
    pub layers: usize,
    pub bound: f64,
    pub holds: bool,
    pub c_rec: f64,
}

/// `(L_σ / (1 − δ))^L · ‖E‖_F`.
pub fn error_bound(residual_norm: f64, delta_hat: f64, lipschitz: f64, layers: usize) -> f64 {
    (lipschitz / (1.0 - delta_hat)).powi(layers as i32) * residual_norm
}

/// Compares `‖H̃ − H_ref‖_F` against `(L_σ/(1−δ̂))^L ‖Z − ΦUĤ‖_F`.
#[allow(clippy::too_many_arguments)]
pub fn check_error_bound(
    h_ref: &Matrix,
    h_tilde: &Matrix,
    z: &Matrix,
    phi: &SparseMatrix,
    u: &Matrix,
    h_code: &Matrix,
    delta_hat: f64,
    lipschitz: f64,
    layers: usize,
) -> Result<ErrorBoundReport> {
    if !(0.0..1.0).contains(&delta_hat) {
        return Err(Error::DeltaOutOfRange(delta_hat));
    }
    if h_ref.shape() != h_tilde.shape() {
        return Err(Error::shape("embedding comparison", h_ref.shape(), h_tilde.shape()));
    }
    let e = crate::engine::residual(z, phi, u, h_code)?;
    let measured_error = frobenius(&(h_tilde - h_ref));
    let residual_norm = frobenius(&e);
    let bound = error_bound(residual_norm, delta_hat, lipschitz, layers);
    Ok(ErrorBoundReport {
        measured_error,
        residual_norm,
        delta_hat,
        lipschitz,
        layers,
        bound,
        holds: measured_error <= bound,
        c_rec: 2.0 * delta_hat / (1.0 - delta_hat),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub nodes: Vec<usize>,
    pub dims: Vec<usize>,
    /// `grid[a][b] = |H_ref[nodes[a]][dims[b]] − H_recon[nodes[a]][dims[b]]|`.
    pub grid: Vec<Vec<f64>>,
}

impl Heatmap {
    pub fn mean(&self) -> f64 {
        let count = (self.nodes.len() * self.dims.len()) as f64;
        self.grid.iter().flatten().sum::<f64>() / count
    }
}

fn sample_distinct(pool: &[usize], k: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut pool = pool.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let idx = rng.below(pool.len());
        out.push(pool.swap_remove(idx));
    }
    out
}

/// Absolute differences on 10 random nodes from `node_pool` and 10 random
/// embedding dimensions.
pub fn heatmap_diff(h_ref: &Matrix, h_recon: &Matrix, node_pool: &[usize], rng: &mut RngStream) -> Result<Heatmap> {
    if h_ref.shape() != h_recon.shape() {
        return Err(Error::shape("heatmap inputs", h_ref.shape(), h_recon.shape()));
    }
    let (n, d) = h_ref.shape();
    if n < HEATMAP_SIDE || node_pool.len() < HEATMAP_SIDE {
        return Err(Error::InsufficientNodes {
            what: "heatmap nodes",
            needed: HEATMAP_SIDE,
            found: node_pool.len().min(n),
        });
    }
    if d < HEATMAP_SIDE {
        return Err(Error::InsufficientNodes {
            what: "heatmap dimensions",
            needed: HEATMAP_SIDE,
            found: d,
        });
    }
    if let Some(&bad) = node_pool.iter().find(|&&i| i >= n) {
        return Err(Error::NodeOutOfRange {
            node: bad,
            num_nodes: n,
        });
    }
    let nodes = sample_distinct(node_pool, HEATMAP_SIDE, rng);
    let all_dims: Vec<usize> = (0..d).collect();
    let dims = sample_distinct(&all_dims, HEATMAP_SIDE, rng);
    let grid = nodes
        .iter()
        .map(|&i| dims.iter().map(|&j| (h_ref[(i, j)] - h_recon[(i, j)]).abs()).collect())
        .collect();
    Ok(Heatmap { nodes, dims, grid })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseGcnConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DenseGcnConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            epochs: 200,
            lr: 0.01,
            seed: 0,
        }
    }
}

/// Two-layer GCN on the renormalized adjacency `D̃^{-1/2}(A+I)D̃^{-1/2}`,
/// trained full-batch with hand-written backpropagation.
#[derive(Debug, Clone)]
pub struct DenseGcn {
    pub propagation: SparseMatrix,
    pub w1: Matrix,
    pub w2: Matrix,
    /// `1 × C` for classification, empty for link prediction.
    pub bias: Matrix,
    pub loss_history: Vec<f64>,
}

struct DenseTrace {
    ax: Matrix,
    s1: Matrix,
    p2: Matrix,
}

impl DenseGcn {
    fn trace(&self, ax: &Matrix) -> Result<DenseTrace> {
        let s1 = ax * &self.w1;
        let h1 = s1.map(|v| v.max(0.0));
        let p2 = self.propagation.mul_dense(&h1)?;
        Ok(DenseTrace { ax: ax.clone(), s1, p2 })
    }

    /// Gradient of `W1` given `∂L/∂P2`.
    fn backprop_w1(&self, trace: &DenseTrace, d_p2: &Matrix) -> Result<Matrix> {
        // The renormalized adjacency is symmetric.
        let d_h1 = self.propagation.mul_dense(d_p2)?;
        let d_s1 = d_h1.zip_map(&trace.s1, |g, s| if s > 0.0 { g } else { 0.0 });
        Ok(trace.ax.transpose() * d_s1)
    }

    /// Loss and `(∇W1, ∇W2, ∇b)` of mean cross-entropy on `rows`.
    fn node_objective(&self, ax: &Matrix, rows: &[usize], targets: &[usize]) -> Result<(f64, Matrix, Matrix, Matrix)> {
        let trace = self.trace(ax)?;
        let (loss, d_p2, d_w2, d_b) = cross_entropy(&trace.p2, &self.head(), rows, targets)?;
        Ok((loss, self.backprop_w1(&trace, &d_p2)?, d_w2, d_b))
    }

    /// Loss and `(∇W1, ∇W2)` of the cosine link loss on the outputs.
    fn link_objective(&self, ax: &Matrix, link: &LinkLossConfig) -> Result<(f64, Matrix, Matrix)> {
        let trace = self.trace(ax)?;
        let out = &trace.p2 * &self.w2;
        let (loss, d_out) = link_loss(&out, link)?;
        let d_w2 = trace.p2.transpose() * &d_out;
        let d_p2 = &d_out * self.w2.transpose();
        Ok((loss, self.backprop_w1(&trace, &d_p2)?, d_w2))
    }

    fn head(&self) -> ClassifierHead {
        ClassifierHead {
            weights: self.w2.clone(),
            bias: self.bias.clone(),
        }
    }

    fn init(g: &Graph, d: usize, out: usize, cfg: &DenseGcnConfig, with_bias: bool) -> Self {
        let mut rng = RngStream::new(cfg.seed, Purpose::Init);
        Self {
            propagation: renormalized_adjacency(g),
            w1: gaussian_matrix(d, cfg.hidden, 2.0 / (d + cfg.hidden) as f64, &mut rng),
            w2: gaussian_matrix(cfg.hidden, out, 2.0 / (cfg.hidden + out) as f64, &mut rng),
            bias: Matrix::zeros(if with_bias { 1 } else { 0 }, out),
            loss_history: Vec::new(),
        }
    }

    pub fn train_node_classifier(
        g: &Graph,
        x: &Matrix,
        labels: &[usize],
        num_classes: usize,
        train: &[usize],
        cfg: &DenseGcnConfig,
    ) -> Result<Self> {
        if x.nrows() != g.num_nodes() || labels.len() != g.num_nodes() {
            return Err(Error::InconsistentDimensions(
                "features and labels must cover every node".into(),
            ));
        }
        let mut model = Self::init(g, x.ncols(), num_classes, cfg, true);
        let ax = model.propagation.mul_dense(x)?;
        let targets: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let mut stepper = ParamStepper::new(
            Optimizer::Adam,
            &[model.w1.shape(), model.w2.shape(), model.bias.shape()],
        );
        for _ in 0..cfg.epochs {
            let (loss, d_w1, d_w2, d_b) = model.node_objective(&ax, train, &targets)?;
            stepper.step(0, &mut model.w1, &d_w1, cfg.lr);
            stepper.step(1, &mut model.w2, &d_w2, cfg.lr);
            stepper.step(2, &mut model.bias, &d_b, cfg.lr);
            model.loss_history.push(loss);
        }
        Ok(model)
    }

    pub fn train_link_model(g: &Graph, x: &Matrix, link: &LinkLossConfig, cfg: &DenseGcnConfig) -> Result<Self> {
        if x.nrows() != g.num_nodes() {
            return Err(Error::InconsistentDimensions("features must cover every node".into()));
        }
        let mut model = Self::init(g, x.ncols(), cfg.hidden, cfg, false);
        let ax = model.propagation.mul_dense(x)?;
        let mut stepper = ParamStepper::new(Optimizer::Adam, &[model.w1.shape(), model.w2.shape()]);
        for _ in 0..cfg.epochs {
            let (loss, d_w1, d_w2) = model.link_objective(&ax, link)?;
            stepper.step(0, &mut model.w1, &d_w1, cfg.lr);
            stepper.step(1, &mut model.w2, &d_w2, cfg.lr);
            model.loss_history.push(loss);
        }
        Ok(model)
    }

    /// Output of the last layer: logits for classification, embeddings for
    /// link prediction.
    pub fn outputs(&self, x: &Matrix) -> Result<Matrix> {
        let ax = self.propagation.mul_dense(x)?;
        let trace = self.trace(&ax)?;
        if self.bias.nrows() == 1 {
            self.head().logits(&trace.p2)
        } else {
            Ok(&trace.p2 * &self.w2)
        }
    }

    pub fn predict(&self, x: &Matrix, nodes: &[usize]) -> Result<Vec<usize>> {
        let logits = self.outputs(x)?;
        Ok(crate::tasks::argmax_rows(&logits.select_rows(nodes)))
    }

    pub fn link_scores(&self, x: &Matrix, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        cosine_scores(&self.outputs(x)?, pairs)
    }
}
