//! Dense linear algebra and seeded randomness shared by every other module.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. The symmetric eigensolver is
//! nalgebra's Householder tridiagonalization followed by implicit-shift QR,
//! and the polar factor is taken from its Golub-Kahan SVD, or from a
//! Newton–Schulz iteration when the input is already nearly orthogonal.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Relative tolerance for the symmetry precondition of [`sym_eigendecompose`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Polar projection refuses matrices whose condition number exceeds `1 / RANK_TOL`.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `j` is the unit eigenvector of `eigenvalues[j]`.
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    pub fn reconstruct(&self) -> Matrix {
        let q = &self.eigenvectors;
        let mut scaled = q.clone();
        for (j, lambda) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*lambda);
        }
        scaled * q.transpose()
    }
}

/// Full eigendecomposition of a dense symmetric matrix, eigenvalues ascending.
pub fn sym_eigendecompose(a: &Matrix) -> Result<EigenDecomposition> {
    if !a.is_square() {
        return Err(Error::shape("sym_eigendecompose", (a.nrows(), a.nrows()), a.shape()));
    }
    let n = a.nrows();
    let scale = a.amax().max(1.0);
    let asymmetry = max_asymmetry(a);
    if asymmetry > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry });
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 100 * n + 1000)
        .ok_or(Error::DidNotConverge("symmetric eigensolver"))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn max_asymmetry(a: &Matrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Nearest orthogonal matrix in Frobenius norm: `P Q^T` from `X = P S Q^T`.
pub fn polar_project(x: &Matrix) -> Result<Matrix> {
    if !x.is_square() {
        return Err(Error::shape("polar_project", (x.nrows(), x.nrows()), x.shape()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("polar_project input"));
    }
    if let Some(q) = newton_schulz_polar(x) {
        return Ok(q);
    }
    svd_polar(x)
}

fn svd_polar(x: &Matrix) -> Result<Matrix> {
    let n = x.nrows();
    let svd = SVD::try_new(x.clone(), true, true, f64::EPSILON, 100 * n + 1000).ok_or(Error::DidNotConverge("svd"))?;
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax == 0.0 || smin < RANK_TOL * smax {
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s >= RANK_TOL * smax && s > 0.0)
            .count();
        return Err(Error::RankDeficient { rank, expected: n });
    }
    let p = svd.u.expect("left singular vectors requested");
    let qt = svd.v_t.expect("right singular vectors requested");
    Ok(p * qt)
}

/// Inputs this close to orthogonal (`‖XᵀX − I‖_F`) take the Newton–Schulz
/// route; every singular value then lies in `[√0.1, √1.9]`, inside the
/// iteration's `(0, √3)` basin, and the residual shrinks monotonically.
const NEWTON_SCHULZ_RADIUS: f64 = 0.9;

/// Polar factor by `X ← X(3I − XᵀX)/2`, which converges quadratically to the
/// same `PQᵀ` as the SVD when all singular values lie in `(0, √3)`. Returns
/// `None` when the input is too far from orthogonal or convergence stalls.
fn newton_schulz_polar(x: &Matrix) -> Option<Matrix> {
    let n = x.nrows();
    let tol = 1e-14 * (n as f64).sqrt();
    let mut q = x.clone();
    let mut prev = f64::INFINITY;
    for _ in 0..30 {
        let mut g = q.transpose() * &q;
        for i in 0..n {
            g[(i, i)] -= 1.0;
        }
        let resid = frobenius(&g);
        if resid > NEWTON_SCHULZ_RADIUS {
            return None;
        }
        if resid <= tol {
            return Some(q);
        }
        if resid >= prev {
            // Stalled at round-off.
            return (resid < 1e-12).then_some(q);
        }
        prev = resid;
        // q(3I − qᵀq)/2 = q − q·g/2
        q -= (&q * g) * 0.5;
    }
    None
}

/// Singular values in descending order.
pub fn singular_values(x: &Matrix) -> Result<Vec<f64>> {
    let n = x.nrows().max(x.ncols());
    let svd =
        SVD::try_new(x.clone(), false, false, f64::EPSILON, 100 * n + 1000).ok_or(Error::DidNotConverge("svd"))?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Number of singular values above `rel_tol` times the largest.
pub fn numerical_rank(x: &Matrix, rel_tol: f64) -> Result<usize> {
    let s = singular_values(x)?;
    let Some(&smax) = s.first() else { return Ok(0) };
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v > rel_tol * smax).count())
}

pub fn frobenius(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖U^T U − I‖_F`.
pub fn orthonormality_residual(u: &Matrix) -> f64 {
    let mut g = u.transpose() * u;
    for i in 0..g.nrows().min(g.ncols()) {
        g[(i, i)] -= 1.0;
    }
    frobenius(&g)
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// What a random stream is used for. Each purpose draws from its own
/// ChaCha stream so, for example, structural sampling never shifts the
/// Gaussian fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Structure,
    Gaussian,
    Init,
    Data,
}

impl Purpose {
    fn stream_id(self) -> u64 {
        match self {
            Purpose::Structure => 1,
            Purpose::Gaussian => 2,
            Purpose::Init => 3,
            Purpose::Data => 4,
        }
    }
}

/// Seeded, purpose-labelled random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    purpose: Purpose,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(purpose.stream_id());
        Self { seed, purpose, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn purpose(&self) -> Purpose {
        self.purpose
    }

    /// A child stream with the same purpose and a seed mixed from `index`.
    pub fn derive(&self, index: u64) -> Self {
        let mixed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
            .rotate_left(17)
            ^ 0x94D0_49BB_1331_11EB;
        Self::new(mixed, self.purpose)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn uniform(&mut self) -> f64 {
        rand::Rng::random::<f64>(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        rand::Rng::random_range(&mut self.inner, 0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// One draw from `N(mean, variance)`. Always consumes exactly one standard
/// normal draw, so a zero-variance call still advances the stream.
pub fn gaussian(rng: &mut RngStream, mean: f64, variance: f64) -> Result<f64> {
    if !(variance >= 0.0) {
        return Err(Error::NegativeVariance(variance));
    }
    let z = rng.standard_normal();
    if variance == 0.0 {
        return Ok(mean);
    }
    Ok(mean + variance.sqrt() * z)
}

pub fn gaussian_matrix(rows: usize, cols: usize, variance: f64, rng: &mut RngStream) -> Matrix {
    let sd = variance.sqrt();
    // Fill row by row so the draw order matches the row-major reading order.
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = sd * rng.standard_normal();
        }
    }
    m
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// diagonal sign convention fixed).
pub fn random_orthonormal(n: usize, rng: &mut RngStream) -> Matrix {
    let g = gaussian_matrix(n, n, 1.0, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
