//! Central finite differences against the analytic gradients on small
//! random instances.

use serde::{Deserialize, Serialize};

use super::{
    forward, grad_h, grad_theta, grad_u, initial_measurements, recon_loss, residual, total_loss, Activation,
    ModelParams, Propagation,
};
use crate::error::Result;
use crate::graph::{normalized_laplacian, Graph};
use crate::numerics::{gaussian_matrix, random_orthonormal, Matrix, Purpose, RngStream};
use crate::sampler::{SamplerConfig, SamplingOperator};
use crate::tasks::{classification_loss, ClassifierHead};

pub const FD_STEP: f64 = 1e-5;
/// Relu instances whose pre-activations come closer than this to the kink
/// are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckShape {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub layers: usize,
    pub classes: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl Default for GradCheckShape {
    fn default() -> Self {
        Self {
            n: 12,
            m: 5,
            d: 3,
            layers: 2,
            classes: 3,
            alpha: 0.7,
            beta: 1.3,
            lambda: 0.05,
        }
    }
}

/// Worst block-relative errors `‖a − f‖_F / max(‖a‖_F, ‖f‖_F)` over all
/// instances, plus the worst single-entry relative error for reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub instances: usize,
    pub theta: f64,
    pub u: f64,
    pub h: f64,
    pub worst_entry: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.theta.max(self.u).max(self.h)
    }
}

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

fn build_instance(shape: &GradCheckShape, seed: u64, act: Activation) -> Result<Instance> {
    let n = shape.n;
    let mut attempt = 0u64;
    loop {
        let mut rng = RngStream::new(seed, Purpose::Data).derive(attempt);
        let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        for _ in 0..n {
            edges.push((rng.below(n), rng.below(n)));
        }
        let g = Graph::build(&edges, n)?;
        let a_hat = normalized_laplacian(&g);
        let op = SamplingOperator::construct(
            &g,
            &a_hat,
            &SamplerConfig::new(shape.m),
            seed.wrapping_add(attempt << 32),
        )?;
        let prop = Propagation::new(&op.phi, &a_hat)?;
        let params = ModelParams {
            layers: (0..shape.layers)
                .map(|_| gaussian_matrix(n, shape.m, 1.0, &mut rng))
                .collect(),
        };
        let x = gaussian_matrix(n, shape.d, 1.0, &mut rng);
        let t0 = initial_measurements(&prop.phi, &x)?;
        let trace = forward(&prop.phi_a, &params, &t0, act)?;
        let closest = trace
            .pre_activations
            .iter()
            .flat_map(|s| s.iter())
            .fold(f64::INFINITY, |a, v| a.min(v.abs()));
        attempt += 1;
        if act == Activation::Relu && closest < KINK_MARGIN {
            continue;
        }
        let mut init = RngStream::new(seed, Purpose::Init).derive(attempt);
        let labels: Vec<usize> = (0..n).map(|_| init.below(shape.classes)).collect();
        let mut mask: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        for &a in &op.anchors {
            mask[a] = true;
        }
        return Ok(Instance {
            anchors: op.anchors.clone(),
            prop,
            params,
            u: random_orthonormal(n, &mut init),
            h: gaussian_matrix(n, shape.d, 1.0, &mut init),
            t0,
            head: ClassifierHead::init(shape.d, shape.classes, &mut init),
            labels,
            mask,
        });
    }
}

fn loss(
    inst: &Instance,
    shape: &GradCheckShape,
    params: &ModelParams,
    u: &Matrix,
    h: &Matrix,
    act: Activation,
) -> Result<f64> {
    let trace = forward(&inst.prop.phi_a, params, &inst.t0, act)?;
    let recon = recon_loss(&trace.z, &inst.prop.phi, u, h, shape.lambda)?;
    let gnn = classification_loss(&trace.z, &inst.head, &inst.anchors, &inst.labels, &inst.mask)?.loss;
    Ok(total_loss(recon, gnn, shape.alpha, shape.beta))
}

/// Central differences of `f` at `x`, one entry at a time.
pub fn central_differences(f: impl Fn(&Matrix) -> Result<f64>, x: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(x.nrows(), x.ncols());
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let mut p = x.clone();
            p[(i, j)] += FD_STEP;
            let mut q = x.clone();
            q[(i, j)] -= FD_STEP;
            out[(i, j)] = (f(&p)? - f(&q)?) / (2.0 * FD_STEP);
        }
    }
    Ok(out)
}

pub fn block_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let scale = analytic.norm().max(numeric.norm());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).norm() / scale
    }
}

/// Entries smaller than 1e-8 in both are compared absolutely. Central
/// differences only resolve entries down to about `ε·|L|/h`, so this
/// figure is dominated by round-off on tiny entries.
pub fn max_entry_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Checks `∇Θ`, `∇U` and `∇Ĥ` of the joint loss (classification head as the
/// task term) on `instances` seeded random instances.
pub fn gradient_check(shape: &GradCheckShape, instances: usize, act: Activation, seed: u64) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        instances,
        theta: 0.0,
        u: 0.0,
        h: 0.0,
        worst_entry: 0.0,
    };
    for k in 0..instances as u64 {
        let inst = build_instance(shape, seed.wrapping_add(k), act)?;
        let trace = forward(&inst.prop.phi_a, &inst.params, &inst.t0, act)?;
        let e = residual(&trace.z, &inst.prop.phi, &inst.u, &inst.h)?;
        let task = classification_loss(&trace.z, &inst.head, &inst.anchors, &inst.labels, &inst.mask)?;
        let gt = grad_theta(
            &trace,
            &inst.prop.phi_a,
            &inst.params,
            &e,
            Some(&task.grad_z),
            shape.alpha,
            shape.beta,
            act,
        )?;
        let mut record = |slot: &mut f64, analytic: &Matrix, numeric: &Matrix| {
            *slot = slot.max(block_relative_error(analytic, numeric));
            report.worst_entry = report.worst_entry.max(max_entry_relative_error(analytic, numeric));
        };
        for (l, d_w) in gt.d_w.iter().enumerate() {
            let fd = central_differences(
                |w| {
                    let mut p = inst.params.clone();
                    p.layers[l] = w.clone();
                    loss(&inst, shape, &p, &inst.u, &inst.h, act)
                },
                &inst.params.layers[l],
            )?;
            record(&mut report.theta, d_w, &fd);
        }
        let du = grad_u(&inst.prop.phi, &e, &inst.h, shape.alpha)?;
        let fd = central_differences(|u| loss(&inst, shape, &inst.params, u, &inst.h, act), &inst.u)?;
        record(&mut report.u, &du, &fd);
        let dh = grad_h(&inst.prop.phi, &inst.u, &e, &inst.h, shape.alpha, shape.lambda)?;
        let fd = central_differences(|h| loss(&inst, shape, &inst.params, &inst.u, h, act), &inst.h)?;
        record(&mut report.h, &dh, &fd);
    }
    Ok(report)
}
