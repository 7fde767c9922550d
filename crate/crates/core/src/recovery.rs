//! Row-sparse recovery: the ℓ2,1 proximal operator, ISTA, a brute-force
//! support oracle and the map back to the node domain.

use nalgebra::SVD;

use crate::error::{Error, Result};
use crate::numerics::{frobenius, orthonormality_residual, Matrix};

pub const DEFAULT_MAX_ITERS: usize = 5000;
pub const DEFAULT_TOL: f64 = 1e-9;
/// Step is this fraction of `1 / σ_max(A)²`.
pub const STEP_SAFETY: f64 = 0.99;
/// Largest number of candidate supports [`exhaustive_recover`] will scan.
pub const EXHAUSTIVE_LIMIT: u128 = 100_000;
/// Orthonormality residual accepted by [`reconstruct_nodes`].
pub const BASIS_TOL: f64 = 1e-8;

fn row_norm(x: &Matrix, i: usize) -> f64 {
    x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `Σ_i ‖X_{i,:}‖_2`.
pub fn row_group_norm(x: &Matrix) -> f64 {
    (0..x.nrows()).map(|i| row_norm(x, i)).sum()
}

/// Proximal operator of `τ‖·‖_{2,1}`: each row shrinks toward zero by `τ`
/// in Euclidean norm.
pub fn row_soft_threshold(x: &Matrix, tau: f64) -> Matrix {
    debug_assert!(tau >= 0.0);
    let mut out = x.clone();
    if tau == 0.0 {
        return out;
    }
    for i in 0..x.nrows() {
        let norm = row_norm(x, i);
        let factor = if norm > tau { 1.0 - tau / norm } else { 0.0 };
        out.row_mut(i).scale_mut(factor);
    }
    out
}

/// Largest squared singular value of `a`, by power iteration on `AᵀA`.
pub fn spectral_norm_sq(a: &Matrix) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    // Slightly uneven start so no singular vector is exactly orthogonal to it.
    let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..1000 {
        let w = a.tr_mul(&(a * &v));
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - estimate).abs() <= 1e-12 * next {
            return next.max(norm);
        }
        estimate = next;
    }
    estimate
}

/// `min ½‖T − AĤ‖_F² + λ‖Ĥ‖_{2,1}`.
#[derive(Debug, Clone)]
pub struct RecoveryProblem<'a> {
    pub t: &'a Matrix,
    pub a_op: &'a Matrix,
    pub lambda: f64,
    pub step: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl<'a> RecoveryProblem<'a> {
    /// Defaults: step `0.99 / σ_max²`, 5000 iterations, relative tolerance 1e-9.
    pub fn new(t: &'a Matrix, a_op: &'a Matrix, lambda: f64) -> Self {
        let s2 = spectral_norm_sq(a_op);
        let step = if s2 > 0.0 { STEP_SAFETY / s2 } else { 1.0 };
        Self {
            t,
            a_op,
            lambda,
            step,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }

    pub fn objective(&self, h: &Matrix) -> f64 {
        let r = self.t - self.a_op * h;
        0.5 * frobenius(&r).powi(2) + self.lambda * row_group_norm(h)
    }

    fn validate(&self) -> Result<()> {
        let (m, n) = self.a_op.shape();
        if self.t.nrows() != m {
            return Err(Error::shape("ista_recover", (m, self.t.ncols()), self.t.shape()));
        }
        if n == 0 {
            return Err(Error::InvalidParams("operator has no columns".into()));
        }
        if !(self.lambda >= 0.0) || !(self.step > 0.0) || !(self.tol >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "need lambda >= 0, step > 0, tol >= 0 (got {}, {}, {})",
                self.lambda, self.step, self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub h: Matrix,
    pub objective_history: Vec<f64>,
    pub support: Vec<usize>,
    pub iterations_used: usize,
}

pub fn ista_recover(p: &RecoveryProblem<'_>) -> Result<RecoveryResult> {
    p.validate()?;
    let n = p.a_op.ncols();
    let d = p.t.ncols();
    let at_t = p.a_op.tr_mul(p.t);
    let gram = p.a_op.tr_mul(p.a_op);
    let mut h = Matrix::zeros(n, d);
    let mut prev = p.objective(&h);
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < p.max_iters {
        iterations += 1;
        let grad = &gram * &h - &at_t;
        h = row_soft_threshold(&(&h - grad * p.step), p.step * p.lambda);
        let obj = p.objective(&h);
        if !obj.is_finite() {
            return Err(Error::NonFinite("ista objective"));
        }
        history.push(obj);
        if obj > prev + 1e-12 * prev.abs().max(1.0) {
            return Err(Error::StepTooLarge {
                before: prev,
                after: obj,
            });
        }
        let change = (prev - obj).abs();
        prev = obj;
        if change == 0.0 || change <= p.tol * obj.abs() {
            break;
        }
    }
    let support = (0..n).filter(|&i| h.row(i).iter().any(|v| *v != 0.0)).collect();
    Ok(RecoveryResult {
        h,
        objective_history: history,
        support,
        iterations_used: iterations,
    })
}

/// Rows whose norm exceeds `rel_tol` times the largest row norm.
pub fn significant_rows(h: &Matrix, rel_tol: f64) -> Vec<usize> {
    let norms: Vec<f64> = (0..h.nrows()).map(|i| row_norm(h, i)).collect();
    let max = norms.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Vec::new();
    }
    (0..h.nrows()).filter(|&i| norms[i] > rel_tol * max).collect()
}

/// Least-squares refit of `T ≈ AĤ` with `Ĥ` restricted to `support`.
pub fn debias(t: &Matrix, a_op: &Matrix, support: &[usize]) -> Result<Matrix> {
    let (m, n) = a_op.shape();
    if t.nrows() != m {
        return Err(Error::shape("debias", (m, t.ncols()), t.shape()));
    }
    let mut h = Matrix::zeros(n, t.ncols());
    if support.is_empty() {
        return Ok(h);
    }
    let sub = a_op.select_columns(support);
    let coef = least_squares(&sub, t)?;
    for (r, &i) in support.iter().enumerate() {
        h.set_row(i, &coef.row(r));
    }
    Ok(h)
}

fn least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.nrows().max(a.ncols());
    let svd = SVD::try_new(a.clone(), true, true, f64::EPSILON, 100 * n + 1000)
        .ok_or(Error::DidNotConverge("least squares svd"))?;
    let eps = 1e-12 * svd.singular_values.max();
    svd.solve(b, eps)
        .map_err(|e| Error::InvalidParams(format!("least squares: {e}")))
}

/// ISTA followed by a least-squares refit on the rows it kept.
#[derive(Debug, Clone)]
pub struct DebiasedRecovery {
    pub ista: RecoveryResult,
    pub support: Vec<usize>,
    pub h: Matrix,
}

pub fn ista_recover_debiased(p: &RecoveryProblem<'_>, support_rel_tol: f64) -> Result<DebiasedRecovery> {
    let ista = ista_recover(p)?;
    let support = significant_rows(&ista.h, support_rel_tol);
    let h = debias(p.t, p.a_op, &support)?;
    Ok(DebiasedRecovery { ista, support, h })
}

#[derive(Debug, Clone)]
pub struct ExhaustiveResult {
    pub h: Matrix,
    pub support: Vec<usize>,
    pub residual: f64,
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Best `k`-row support by exhaustive least squares. Small instances only.
pub fn exhaustive_recover(t: &Matrix, a_op: &Matrix, k: usize) -> Result<ExhaustiveResult> {
    let (m, n) = a_op.shape();
    if t.nrows() != m {
        return Err(Error::shape("exhaustive_recover", (m, t.ncols()), t.shape()));
    }
    if k > n {
        return Err(Error::InvalidParams(format!("k={k} exceeds N={n}")));
    }
    let supports = binomial(n, k);
    if supports > EXHAUSTIVE_LIMIT {
        return Err(Error::TooLarge {
            supports,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let mut best: Option<ExhaustiveResult> = None;
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        let h = debias(t, a_op, &combo)?;
        let residual = frobenius(&(t - a_op * &h));
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(ExhaustiveResult {
                h,
                support: combo.clone(),
                residual,
            });
        }
        if !next_combination(&mut combo, n) {
            break;
        }
    }
    Ok(best.expect("at least one support"))
}

fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in (i + 1)..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// `H = UĤ`.
pub fn reconstruct_nodes(u: &Matrix, h: &Matrix) -> Result<Matrix> {
    if !u.is_square() || u.ncols() != h.nrows() {
        return Err(Error::shape("reconstruct_nodes", (h.nrows(), h.nrows()), u.shape()));
    }
    let residual = orthonormality_residual(u);
    if !(residual <= BASIS_TOL) {
        return Err(Error::NotOrthonormal(residual));
    }
    Ok(u * h)
}
