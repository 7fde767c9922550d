//! Measurement-domain GNN: forward pass, joint loss, hand-derived gradients
//! and parameter updates.
//!
//! Every layer works on `M × d` measurements:
//! `S⁽ˡ⁾ = (ΦÂ) W⁽ˡ⁾ T⁽ˡ⁻¹⁾`, `T⁽ˡ⁾ = σ(S⁽ˡ⁾)`, `Z = T⁽ᴸ⁾`, with each
//! `W⁽ˡ⁾` of shape `N × M` so that `(ΦÂ)W⁽ˡ⁾` is an `M × M` operator. The
//! node embeddings are recovered as `H = UĤ` from the sparse code `Ĥ`.

pub mod gradcheck;
mod train;

pub use gradcheck::{gradient_check, GradCheckReport, GradCheckShape};
pub use train::{EpochRecord, LinkTask, NodeTask, Task, TrainOutcome, Trainer, TrainingHistory, TrainingTiming};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::PropagationMatrix;
use crate::numerics::{
    all_finite, frobenius, gaussian_matrix, orthonormality_residual, polar_project, Matrix, RngStream,
};
use crate::recovery::row_group_norm;
use crate::sparse::SparseMatrix;

/// Rows of `Ĥ` below this norm take a zero subgradient.
const ZERO_ROW_NORM: f64 = 1e-300;
/// Orthonormality a projected basis must satisfy.
pub const BASIS_RESIDUAL_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: &Matrix) -> Matrix {
        match self {
            Activation::Relu => x.map(|v| v.max(0.0)),
            Activation::Identity => x.clone(),
        }
    }

    /// Elementwise derivative; relu takes `σ'(0) = 0`.
    pub fn derivative(self, x: &Matrix) -> Matrix {
        match self {
            Activation::Relu => x.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            Activation::Identity => x.map(|_| 1.0),
        }
    }

    pub fn lipschitz(self) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Plain,
    #[default]
    Adam,
}

/// How the layer-0 measurements are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMode {
    /// `T⁽⁰⁾ = ΦX`, which equals `ΦUX̂` for `X̂ = UᵀX` and any orthonormal `U`.
    #[default]
    Simplified,
    /// `T⁽⁰⁾ = ΦUX̂` with `X̂` a fixed input; the task gradient then also
    /// reaches `U` through `T⁽⁰⁾`.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub lr_theta: f64,
    pub lr_u: f64,
    pub lr_h: f64,
    pub epochs: usize,
    pub layers: usize,
    pub activation: Activation,
    pub optimizer: Optimizer,
    pub measurement: MeasurementMode,
    /// Consecutive epochs of relative improvement below `plateau_tol` that
    /// end training early.
    pub patience: usize,
    pub plateau_tol: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            lambda: 1e-3,
            lr_theta: 0.01,
            lr_u: 0.01,
            lr_h: 0.01,
            epochs: 200,
            layers: 2,
            activation: Activation::Relu,
            optimizer: Optimizer::Adam,
            measurement: MeasurementMode::Simplified,
            patience: 20,
            plateau_tol: 1e-6,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "{name} must be a finite nonnegative number, got {v}"
                )));
            }
        }
        for (name, v) in [("lr_theta", self.lr_theta), ("lr_u", self.lr_u), ("lr_h", self.lr_h)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.layers == 0 {
            return Err(Error::InvalidParams("at least one layer is required".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParams("epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Θ: one `N × M` weight per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Matrix>,
}

impl ModelParams {
    /// `W⁽ˡ⁾ ~ N(0, 2 / (N + M))`.
    pub fn init(n: usize, m: usize, layers: usize, rng: &mut RngStream) -> Self {
        let var = 2.0 / (n + m) as f64;
        Self {
            layers: (0..layers).map(|_| gaussian_matrix(n, m, var, rng)).collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub u: Matrix,
}

impl Basis {
    pub fn identity(n: usize) -> Self {
        Self {
            u: Matrix::identity(n, n),
        }
    }

    pub fn orthonormality_residual(&self) -> f64 {
        orthonormality_residual(&self.u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub h: Matrix,
    /// Target row count; diagnostic only.
    pub nominal_sparsity: Option<usize>,
}

impl SparseCode {
    /// `Ĥ ~ N(0, 1e-4)`.
    pub fn init(n: usize, d: usize, rng: &mut RngStream) -> Self {
        Self {
            h: gaussian_matrix(n, d, 1e-4, rng),
            nominal_sparsity: None,
        }
    }
}

/// `Φ` together with the dense `M × N` product `ΦÂ` every layer reuses.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub phi: SparseMatrix,
    pub phi_a: Matrix,
}

impl Propagation {
    pub fn new(phi: &SparseMatrix, a_hat: &PropagationMatrix) -> Result<Self> {
        if phi.ncols() != a_hat.dim() {
            return Err(Error::shape("ΦÂ", (phi.nrows(), a_hat.dim()), phi.shape()));
        }
        Ok(Self {
            phi: phi.clone(),
            phi_a: phi.mul_dense(&a_hat.to_dense())?,
        })
    }

    pub fn m(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n(&self) -> usize {
        self.phi.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `T⁽⁰⁾ … T⁽ᴸ⁻¹⁾`.
    pub inputs: Vec<Matrix>,
    /// `S⁽¹⁾ … S⁽ᴸ⁾`.
    pub pre_activations: Vec<Matrix>,
    pub z: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGradient {
    pub d_w: Vec<Matrix>,
    /// `g⁽¹⁾ … g⁽ᴸ⁾`.
    pub messages: Vec<Matrix>,
    /// `∂L/∂T⁽⁰⁾`.
    pub d_t0: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d_w: Vec<Matrix>,
    pub d_u: Matrix,
    pub d_h: Matrix,
    pub messages: Vec<Matrix>,
}

/// `T⁽⁰⁾ = ΦX`.
pub fn initial_measurements(phi: &SparseMatrix, x: &Matrix) -> Result<Matrix> {
    phi.mul_dense(x)
}

/// `T⁽⁰⁾ = ΦUX̂`, used by [`MeasurementMode::Literal`].
pub fn literal_initial_measurements(phi: &SparseMatrix, u: &Matrix, x_hat: &Matrix) -> Result<Matrix> {
    if u.ncols() != x_hat.nrows() {
        return Err(Error::shape("UX̂", (u.ncols(), x_hat.ncols()), x_hat.shape()));
    }
    phi.mul_dense(&(u * x_hat))
}

pub fn forward(phi_a: &Matrix, params: &ModelParams, t0: &Matrix, act: Activation) -> Result<ForwardTrace> {
    let (m, n) = phi_a.shape();
    if t0.nrows() != m {
        return Err(Error::shape("forward input", (m, t0.ncols()), t0.shape()));
    }
    if params.layers.is_empty() {
        return Err(Error::InvalidParams("at least one layer is required".into()));
    }
    let mut inputs = vec![t0.clone()];
    let mut pre_activations = Vec::with_capacity(params.num_layers());
    for w in &params.layers {
        if w.shape() != (n, m) {
            return Err(Error::shape("layer weight", (n, m), w.shape()));
        }
        let s = (phi_a * w) * inputs.last().unwrap();
        if !all_finite(&s) {
            return Err(Error::NonFinite("pre-activation overflowed; reduce the learning rate"));
        }
        inputs.push(act.apply(&s));
        pre_activations.push(s);
    }
    let z = inputs.pop().unwrap();
    Ok(ForwardTrace {
        inputs,
        pre_activations,
        z,
    })
}

/// `E = Z − ΦUĤ`.
pub fn residual(z: &Matrix, phi: &SparseMatrix, u: &Matrix, h: &Matrix) -> Result<Matrix> {
    if u.ncols() != h.nrows() || u.nrows() != phi.ncols() {
        return Err(Error::shape("UĤ", (phi.ncols(), h.ncols()), (u.nrows(), h.ncols())));
    }
    let phi_uh = phi.mul_dense(&(u * h))?;
    if phi_uh.shape() != z.shape() {
        return Err(Error::shape("reconstruction residual", phi_uh.shape(), z.shape()));
    }
    Ok(z - phi_uh)
}

/// `½‖Z − ΦUĤ‖²_F + λ‖Ĥ‖_{2,1}`.
pub fn recon_loss(z: &Matrix, phi: &SparseMatrix, u: &Matrix, h: &Matrix, lambda: f64) -> Result<f64> {
    let e = residual(z, phi, u, h)?;
    Ok(recon_loss_from_residual(&e, h, lambda))
}

pub fn recon_loss_from_residual(e: &Matrix, h: &Matrix, lambda: f64) -> f64 {
    let f = frobenius(e);
    0.5 * f * f + lambda * row_group_norm(h)
}

pub fn total_loss(recon: f64, gnn: f64, alpha: f64, beta: f64) -> f64 {
    alpha * recon + beta * gnn
}

/// Backpropagates `∂L/∂Z = αE + β·task_grad_z` through the layers:
/// `g⁽ᴸ⁾ = ∂L/∂Z ⊙ σ'(S⁽ᴸ⁾)`, `g⁽ˡ⁻¹⁾ = (ΦÂW⁽ˡ⁾)ᵀg⁽ˡ⁾ ⊙ σ'(S⁽ˡ⁻¹⁾)`,
/// `∇W⁽ˡ⁾ = (ΦÂ)ᵀ g⁽ˡ⁾ T⁽ˡ⁻¹⁾ᵀ`.
pub fn grad_theta(
    trace: &ForwardTrace,
    phi_a: &Matrix,
    params: &ModelParams,
    e: &Matrix,
    task_grad_z: Option<&Matrix>,
    alpha: f64,
    beta: f64,
    act: Activation,
) -> Result<ThetaGradient> {
    if e.shape() != trace.z.shape() {
        return Err(Error::shape("residual", trace.z.shape(), e.shape()));
    }
    let mut dz = e * alpha;
    if let Some(t) = task_grad_z {
        if t.shape() != trace.z.shape() {
            return Err(Error::shape("task gradient", trace.z.shape(), t.shape()));
        }
        dz += t * beta;
    }
    let layers = params.num_layers();
    let mut d_w = vec![Matrix::zeros(0, 0); layers];
    let mut messages = vec![Matrix::zeros(0, 0); layers];
    let mut upstream = dz;
    let phi_a_t = phi_a.transpose();
    for l in (0..layers).rev() {
        let g = upstream.component_mul(&act.derivative(&trace.pre_activations[l]));
        d_w[l] = (&phi_a_t * &g) * trace.inputs[l].transpose();
        upstream = (phi_a * &params.layers[l]).transpose() * &g;
        messages[l] = g;
    }
    Ok(ThetaGradient {
        d_w,
        messages,
        d_t0: upstream,
    })
}

/// Reconstruction part of `∇U`: `−αΦᵀEĤᵀ`.
pub fn grad_u(phi: &SparseMatrix, e: &Matrix, h: &Matrix, alpha: f64) -> Result<Matrix> {
    Ok(phi.tr_mul_dense(e)? * h.transpose() * -alpha)
}

/// `α(−UᵀΦᵀE + λG)` with `G` the row-normalized `Ĥ` (zero on zero rows).
pub fn grad_h(phi: &SparseMatrix, u: &Matrix, e: &Matrix, h: &Matrix, alpha: f64, lambda: f64) -> Result<Matrix> {
    let data = u.transpose() * phi.tr_mul_dense(e)?;
    let mut g = data * -1.0;
    if lambda > 0.0 {
        for i in 0..h.nrows() {
            let norm = h.row(i).norm();
            if norm > ZERO_ROW_NORM {
                for j in 0..h.ncols() {
                    g[(i, j)] += lambda * h[(i, j)] / norm;
                }
            }
        }
    }
    Ok(g * alpha)
}

/// First and second moment state for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Matrix,
    v: Matrix,
    t: i32,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(shape: (usize, usize)) -> Self {
        Self {
            m: Matrix::zeros(shape.0, shape.1),
            v: Matrix::zeros(shape.0, shape.1),
            t: 0,
        }
    }

    pub fn step(&mut self, param: &mut Matrix, grad: &Matrix, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for ((p, g), (m, v)) in param
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Optimizer state for Θ (and any extra tensors sharing its learning rate).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStepper {
    kind: Optimizer,
    states: Vec<AdamState>,
}

impl ParamStepper {
    pub fn new(kind: Optimizer, shapes: &[(usize, usize)]) -> Self {
        Self {
            kind,
            states: shapes.iter().map(|&s| AdamState::new(s)).collect(),
        }
    }

    pub fn step(&mut self, slot: usize, param: &mut Matrix, grad: &Matrix, lr: f64) {
        match self.kind {
            Optimizer::Plain => *param -= grad * lr,
            Optimizer::Adam => self.states[slot].step(param, grad, lr),
        }
    }
}

/// `Θ ← step(Θ, ∇Θ)`, `U ← polar(U − η_U∇U)`, `Ĥ ← Ĥ − η_Ĥ∇Ĥ`.
pub fn apply_updates(
    params: &mut ModelParams,
    basis: &mut Basis,
    code: &mut SparseCode,
    grads: &GradientSet,
    hyper: &Hyperparams,
    stepper: &mut ParamStepper,
) -> Result<()> {
    if grads.d_w.len() != params.num_layers() {
        return Err(Error::InvalidParams("one weight gradient per layer is required".into()));
    }
    for (l, (w, dw)) in params.layers.iter_mut().zip(&grads.d_w).enumerate() {
        if w.shape() != dw.shape() {
            return Err(Error::shape("weight gradient", w.shape(), dw.shape()));
        }
        stepper.step(l, w, dw, hyper.lr_theta);
    }
    if grads.d_u.shape() != basis.u.shape() {
        return Err(Error::shape("basis gradient", basis.u.shape(), grads.d_u.shape()));
    }
    if grads.d_h.shape() != code.h.shape() {
        return Err(Error::shape("code gradient", code.h.shape(), grads.d_h.shape()));
    }
    basis.u = polar_project(&(&basis.u - &grads.d_u * hyper.lr_u))?;
    code.h -= &grads.d_h * hyper.lr_h;
    if !all_finite(&code.h) || params.layers.iter().any(|w| !all_finite(w)) {
        return Err(Error::NonFinite("parameters diverged; reduce the learning rate"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalized_laplacian, Graph};
    use crate::numerics::{max_abs_diff, random_orthonormal, Purpose};
    use crate::tasks::{classification_loss, ClassifierHead};

    struct Instance {
        prop: Propagation,
        params: ModelParams,
        u: Matrix,
        h: Matrix,
        t0: Matrix,
        head: ClassifierHead,
        anchors: Vec<usize>,
        labels: Vec<usize>,
        mask: Vec<bool>,
    }

    fn instance(seed: u64, n: usize, m: usize, d: usize, layers: usize) -> Instance {
        let mut rng = RngStream::new(seed, Purpose::Data);
        let mut edges = Vec::new();
        for u in 0..n {
            edges.push((u, (u + 1) % n));
            edges.push((u, rng.below(n)));
        }
        let g = Graph::build(&edges, n).unwrap();
        let a_hat = normalized_laplacian(&g);
        let phi = SparseMatrix::from_dense(&gaussian_matrix(m, n, 1.0, &mut rng));
        let prop = Propagation::new(&phi, &a_hat).unwrap();
        let params = ModelParams {
            layers: (0..layers).map(|_| gaussian_matrix(n, m, 1.0, &mut rng)).collect(),
        };
        let x = gaussian_matrix(n, d, 1.0, &mut rng);
        let t0 = initial_measurements(&prop.phi, &x).unwrap();
        let mut init = RngStream::new(seed, Purpose::Init);
        Instance {
            prop,
            params,
            u: random_orthonormal(n, &mut init),
            h: gaussian_matrix(n, d, 1.0, &mut init),
            t0,
            head: ClassifierHead::init(d, 3, &mut init),
            anchors: (0..m).map(|r| r % n).collect(),
            labels: (0..n).map(|i| i % 3).collect(),
            mask: (0..n).map(|i| i % 2 == 0).collect(),
        }
    }

    fn loss(inst: &Instance, params: &ModelParams, u: &Matrix, h: &Matrix, act: Activation, lambda: f64) -> f64 {
        let trace = forward(&inst.prop.phi_a, params, &inst.t0, act).unwrap();
        let recon = recon_loss(&trace.z, &inst.prop.phi, u, h, lambda).unwrap();
        let gnn = classification_loss(&trace.z, &inst.head, &inst.anchors, &inst.labels, &inst.mask)
            .unwrap()
            .loss;
        total_loss(recon, gnn, 0.7, 1.3)
    }

    fn central_difference(f: impl Fn(&Matrix) -> f64, x: &Matrix) -> Matrix {
        let h = 1e-5;
        let mut out = Matrix::zeros(x.nrows(), x.ncols());
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut p = x.clone();
                p[(i, j)] += h;
                let mut q = x.clone();
                q[(i, j)] -= h;
                out[(i, j)] = (f(&p) - f(&q)) / (2.0 * h);
            }
        }
        out
    }

    fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
        analytic
            .iter()
            .zip(numeric.iter())
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    fn all_gradients(inst: &Instance, act: Activation, lambda: f64) -> (Vec<Matrix>, Matrix, Matrix) {
        let trace = forward(&inst.prop.phi_a, &inst.params, &inst.t0, act).unwrap();
        let e = residual(&trace.z, &inst.prop.phi, &inst.u, &inst.h).unwrap();
        let task = classification_loss(&trace.z, &inst.head, &inst.anchors, &inst.labels, &inst.mask).unwrap();
        let gt = grad_theta(
            &trace,
            &inst.prop.phi_a,
            &inst.params,
            &e,
            Some(&task.grad_z),
            0.7,
            1.3,
            act,
        )
        .unwrap();
        let du = grad_u(&inst.prop.phi, &e, &inst.h, 0.7).unwrap();
        let dh = grad_h(&inst.prop.phi, &inst.u, &e, &inst.h, 0.7, lambda).unwrap();
        (gt.d_w, du, dh)
    }

    #[test]
    fn gradients_match_central_differences() {
        for act in [Activation::Identity, Activation::Relu] {
            let inst = instance(3, 12, 5, 3, 2);
            let scale = 0.3;
            let inst = Instance {
                params: ModelParams {
                    layers: inst.params.layers.iter().map(|w| w * scale).collect(),
                },
                ..inst
            };
            let (dw, du, dh) = all_gradients(&inst, act, 0.05);
            for (l, dw_l) in dw.iter().enumerate() {
                let fd = central_difference(
                    |w| {
                        let mut p = inst.params.clone();
                        p.layers[l] = w.clone();
                        loss(&inst, &p, &inst.u, &inst.h, act, 0.05)
                    },
                    &inst.params.layers[l],
                );
                assert!(relative_error(dw_l, &fd) < 1e-4, "{act:?} layer {l}");
            }
            let fd_u = central_difference(|u| loss(&inst, &inst.params, u, &inst.h, act, 0.05), &inst.u);
            assert!(relative_error(&du, &fd_u) < 1e-4);
            let fd_h = central_difference(|h| loss(&inst, &inst.params, &inst.u, h, act, 0.05), &inst.h);
            assert!(relative_error(&dh, &fd_h) < 1e-4);
        }
    }

    #[test]
    fn single_linear_layer_closed_form() {
        let inst = instance(9, 8, 4, 2, 1);
        let trace = forward(&inst.prop.phi_a, &inst.params, &inst.t0, Activation::Identity).unwrap();
        let e = residual(&trace.z, &inst.prop.phi, &inst.u, &inst.h).unwrap();
        let gt = grad_theta(
            &trace,
            &inst.prop.phi_a,
            &inst.params,
            &e,
            None,
            1.0,
            0.0,
            Activation::Identity,
        )
        .unwrap();
        // ∂/∂W ½‖PWT − R‖² = Pᵀ(PWT − R)Tᵀ with R = ΦUĤ.
        let p = &inst.prop.phi_a;
        let r = inst.prop.phi.mul_dense(&(&inst.u * &inst.h)).unwrap();
        let expect = p.transpose() * (p * &inst.params.layers[0] * &inst.t0 - r) * inst.t0.transpose();
        assert!(max_abs_diff(&gt.d_w[0], &expect) <= 1e-12 * expect.amax().max(1.0));
    }

    #[test]
    fn zero_residual_and_task_give_zero_gradients() {
        let inst = instance(4, 10, 4, 2, 2);
        let trace = forward(&inst.prop.phi_a, &inst.params, &inst.t0, Activation::Relu).unwrap();
        let e = Matrix::zeros(4, 2);
        let gt = grad_theta(
            &trace,
            &inst.prop.phi_a,
            &inst.params,
            &e,
            None,
            1.0,
            1.0,
            Activation::Relu,
        )
        .unwrap();
        assert!(gt.d_w.iter().all(|w| w.amax() == 0.0));
        assert_eq!(grad_u(&inst.prop.phi, &e, &inst.h, 1.0).unwrap().amax(), 0.0);
        assert_eq!(
            grad_h(&inst.prop.phi, &inst.u, &e, &inst.h, 1.0, 0.0).unwrap().amax(),
            0.0
        );
        let real_e = residual(&trace.z, &inst.prop.phi, &inst.u, &inst.h).unwrap();
        assert_eq!(
            grad_u(&inst.prop.phi, &real_e, &Matrix::zeros(10, 2), 1.0)
                .unwrap()
                .amax(),
            0.0
        );
    }

    #[test]
    fn zero_row_takes_only_data_term() {
        let inst = instance(6, 10, 4, 2, 1);
        let mut h = inst.h.clone();
        h.row_mut(3).fill(0.0);
        let e = gaussian_matrix(4, 2, 1.0, &mut RngStream::new(1, Purpose::Data));
        let with = grad_h(&inst.prop.phi, &inst.u, &e, &h, 1.0, 5.0).unwrap();
        let without = grad_h(&inst.prop.phi, &inst.u, &e, &h, 1.0, 0.0).unwrap();
        assert_eq!(with.row(3), without.row(3));
        assert!((with.row(0) - without.row(0)).norm() > 1.0);
    }

    #[test]
    fn recon_loss_examples() {
        let phi = SparseMatrix::identity(2);
        let u = Matrix::identity(2, 2);
        let h = Matrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 0.0]);
        let z = phi.mul_dense(&h).unwrap();
        assert_eq!(recon_loss(&z, &phi, &u, &h, 0.0).unwrap(), 0.0);
        assert_eq!(recon_loss(&z, &phi, &u, &h, 1.0).unwrap(), 5.0);
        assert_eq!(recon_loss(&z, &phi, &u, &Matrix::zeros(2, 2), 0.0).unwrap(), 12.5);
        assert_eq!(total_loss(2.0, 3.0, 1.0, 1.0), 5.0);
        assert_eq!(total_loss(2.0, 3.0, 1.0, 0.0), 2.0);
    }

    #[test]
    fn single_identity_layer_is_w_times_input() {
        let mut rng = RngStream::new(2, Purpose::Data);
        let w = gaussian_matrix(3, 3, 1.0, &mut rng);
        let t0 = gaussian_matrix(3, 2, 1.0, &mut rng);
        let params = ModelParams {
            layers: vec![w.clone()],
        };
        let trace = forward(&Matrix::identity(3, 3), &params, &t0, Activation::Identity).unwrap();
        assert!(max_abs_diff(&trace.z, &(w * t0)) < 1e-15);
    }

    #[test]
    fn relu_outputs_nonnegative() {
        let inst = instance(8, 12, 5, 3, 3);
        let trace = forward(&inst.prop.phi_a, &inst.params, &inst.t0, Activation::Relu).unwrap();
        assert!(trace.inputs[1..].iter().all(|t| t.iter().all(|v| *v >= 0.0)));
        assert!(trace.z.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn updates_keep_basis_orthonormal() {
        let inst = instance(11, 10, 4, 2, 2);
        let mut params = inst.params.clone();
        let mut basis = Basis { u: inst.u.clone() };
        let mut code = SparseCode {
            h: inst.h.clone(),
            nominal_sparsity: None,
        };
        let zero = GradientSet {
            d_w: vec![Matrix::zeros(10, 4); 2],
            d_u: Matrix::zeros(10, 10),
            d_h: Matrix::zeros(10, 2),
            messages: vec![],
        };
        let hyper = Hyperparams::default();
        let mut stepper = ParamStepper::new(Optimizer::Plain, &[(10, 4), (10, 4)]);
        apply_updates(&mut params, &mut basis, &mut code, &zero, &hyper, &mut stepper).unwrap();
        assert_eq!(params, inst.params);
        assert!(max_abs_diff(&basis.u, &inst.u) < 1e-12);

        let (dw, du, dh) = all_gradients(&inst, Activation::Relu, 1e-3);
        let grads = GradientSet {
            d_w: dw,
            d_u: du * 10.0,
            d_h: dh,
            messages: vec![],
        };
        let mut adam = ParamStepper::new(Optimizer::Adam, &[(10, 4), (10, 4)]);
        apply_updates(&mut params, &mut basis, &mut code, &grads, &hyper, &mut adam).unwrap();
        assert!(basis.orthonormality_residual() <= 1e-10);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut st = AdamState::new((1, 2));
        let mut p = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        st.step(&mut p, &Matrix::from_row_slice(1, 2, &[3.0, -0.5]), 0.1);
        assert!((p[(0, 0)] - 0.9).abs() < 1e-7);
        assert!((p[(0, 1)] - 1.1).abs() < 1e-7);
    }
}
