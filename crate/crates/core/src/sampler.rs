//! One-time construction of the sampling operator `Φ = Ŝ ⊗ Σ`.
//!
//! `Ŝ` is a binary `M × N` structure matrix: each row is seeded by an anchor
//! node drawn from a spectral distribution `P`, and each of the anchor's
//! neighbors joins the row with probability `1 / N(anchor)`. `Σ` carries
//! independent `N(0, 1 / g(j))` weights on the same support, where `g(j)` is
//! the number of rows that touch column `j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, PropagationMatrix};
use crate::numerics::{
    frobenius, gaussian, numerical_rank, sym_eigendecompose, EigenDecomposition, Matrix, Purpose, RngStream,
};
use crate::sparse::SparseMatrix;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_REL_TOL: f64 = 1e-10;
/// Σ redraws attempted after a rank-deficient draw before giving up.
pub const MAX_SIGMA_RETRIES: usize = 3;

/// How eigen-information becomes a per-node sampling weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// `P(i) = λ_i / Σ λ_j`, with the ascending eigenvalues bound to nodes
    /// in index order.
    Literal,
    /// `s_i = Σ_{k < K} u_{ik}^2` over the `K = M` lowest-frequency
    /// eigenvectors.
    #[default]
    Leverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSampling {
    /// Distinct anchors. Keeps `Φ` full row rank with probability one.
    #[default]
    WithoutReplacement,
    /// I.i.d. anchors. Two rows that share an anchor and include none of its
    /// neighbors are parallel, so `Φ` can lose rank.
    WithReplacement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeScoreProfile {
    pub mode: ScoreMode,
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Set when every score was zero and `P` fell back to uniform.
    pub degenerate: bool,
}

pub fn node_scores(a_hat: &PropagationMatrix, mode: ScoreMode, m: usize) -> Result<NodeScoreProfile> {
    let eig = sym_eigendecompose(&a_hat.to_dense())?;
    node_scores_from_eigen(&eig, mode, m)
}

/// Same as [`node_scores`] with a precomputed decomposition of `Â`.
pub fn node_scores_from_eigen(eig: &EigenDecomposition, mode: ScoreMode, m: usize) -> Result<NodeScoreProfile> {
    let n = eig.eigenvalues.len();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let scores: Vec<f64> = match mode {
        // Clamp round-off negatives on the zero eigenvalue.
        ScoreMode::Literal => eig.eigenvalues.iter().map(|l| l.max(0.0)).collect(),
        ScoreMode::Leverage => {
            if m == 0 || m > n {
                return Err(Error::InvalidParams(format!(
                    "leverage scores need 1 <= M <= N, got M={m}, N={n}"
                )));
            }
            let u = &eig.eigenvectors;
            (0..n).map(|i| (0..m).map(|k| u[(i, k)] * u[(i, k)]).sum()).collect()
        }
    };
    let total: f64 = scores.iter().sum();
    let (probabilities, degenerate) = if total > 0.0 {
        (scores.iter().map(|s| s / total).collect(), false)
    } else {
        log::warn!("all node scores are zero; falling back to uniform sampling");
        (vec![1.0 / n as f64; n], true)
    };
    Ok(NodeScoreProfile {
        mode,
        scores,
        probabilities,
        degenerate,
    })
}

/// Draws `Ŝ` and its anchors.
pub fn build_structure(
    g: &Graph,
    profile: &NodeScoreProfile,
    m: usize,
    anchors_mode: AnchorSampling,
    rng: &mut RngStream,
) -> Result<(SparseMatrix, Vec<usize>)> {
    let n = g.num_nodes();
    if m == 0 {
        return Err(Error::InvalidParams("M must be at least 1".into()));
    }
    if profile.probabilities.len() != n {
        return Err(Error::InvalidParams(format!(
            "profile has {} entries for a graph of {n} nodes",
            profile.probabilities.len()
        )));
    }
    let mut weights = profile.probabilities.clone();
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParams(
            "sampling probabilities must be finite and nonnegative".into(),
        ));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::ZeroProbabilityMass);
    }
    if anchors_mode == AnchorSampling::WithoutReplacement {
        let support = weights.iter().filter(|&&w| w > 0.0).count();
        if support < m {
            return Err(Error::InsufficientNodes {
                what: "nodes with positive sampling probability",
                needed: m,
                found: support,
            });
        }
    }

    let mut anchors = Vec::with_capacity(m);
    let mut rows = Vec::with_capacity(m);
    for _ in 0..m {
        let anchor = draw_weighted(&weights, rng).ok_or(Error::ZeroProbabilityMass)?;
        if anchors_mode == AnchorSampling::WithoutReplacement {
            weights[anchor] = 0.0;
        }
        let nbrs = g.neighbors(anchor);
        let keep = if nbrs.is_empty() { 0.0 } else { 1.0 / nbrs.len() as f64 };
        let mut row = vec![(anchor, 1.0)];
        for &j in nbrs {
            if rng.uniform() < keep {
                row.push((j, 1.0));
            }
        }
        anchors.push(anchor);
        rows.push(row);
    }
    Ok((SparseMatrix::from_rows(n, rows)?, anchors))
}

fn draw_weighted(weights: &[f64], rng: &mut RngStream) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let target = rng.uniform() * total;
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last_positive = Some(i);
        if target < acc {
            return Some(i);
        }
    }
    last_positive
}

/// `Σ` on the support of `Ŝ`, entry `(i, j)` drawn from `N(0, 1 / g(j))`.
pub fn build_gaussian(s_hat: &SparseMatrix, rng: &mut RngStream) -> SparseMatrix {
    let g = s_hat.column_counts();
    let mut values = Vec::with_capacity(s_hat.nnz());
    for i in 0..s_hat.nrows() {
        for &j in s_hat.row_indices(i) {
            let var = 1.0 / g[j] as f64;
            values.push(gaussian(rng, 0.0, var).expect("variance is positive"));
        }
    }
    s_hat.with_values(values)
}

/// Element-wise product; the result lives on the support of `Ŝ`.
pub fn assemble_phi(s_hat: &SparseMatrix, sigma: &SparseMatrix) -> Result<SparseMatrix> {
    if s_hat.shape() != sigma.shape() {
        return Err(Error::shape("assemble_phi", s_hat.shape(), sigma.shape()));
    }
    let rows = (0..s_hat.nrows())
        .map(|i| s_hat.row(i).map(|(j, s)| (j, s * sigma.get(i, j))).collect())
        .collect();
    SparseMatrix::from_rows(s_hat.ncols(), rows)
}

/// Numerical row rank of `Φ`. A deficient operator is reported as
/// [`Error::RankDeficient`] so the caller can decide whether to resample.
pub fn verify_full_rank(phi: &SparseMatrix) -> Result<usize> {
    let rank = numerical_rank(&phi.to_dense(), RANK_REL_TOL)?;
    if rank < phi.nrows() {
        return Err(Error::RankDeficient {
            rank,
            expected: phi.nrows(),
        });
    }
    Ok(rank)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RipEstimate {
    pub k: usize,
    pub trials: usize,
    pub delta_hat: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub satisfied: bool,
}

/// `‖Φ U Ĥ‖_F² / ‖Ĥ‖_F²`.
pub fn energy_ratio(phi_u: &Matrix, h: &Matrix) -> f64 {
    let num = frobenius(&(phi_u * h)).powi(2);
    let den = frobenius(h).powi(2);
    num / den
}

/// Monte Carlo estimate of the restricted isometry constant of `ΦU` over
/// `k`-row-sparse signals.
///
/// Each trial draws a uniformly random support of size `k` and a Gaussian
/// single-column signal on it. A row-sparse matrix's energy ratio is a
/// weighted mean of its columns' ratios, so single columns already reach
/// the extremes.
pub fn estimate_rip(
    phi: &SparseMatrix,
    u: &Matrix,
    k: usize,
    trials: usize,
    rng: &mut RngStream,
) -> Result<RipEstimate> {
    let n = phi.ncols();
    if u.shape() != (n, n) {
        return Err(Error::shape("estimate_rip", (n, n), u.shape()));
    }
    if k == 0 || k > n || trials == 0 {
        return Err(Error::InvalidParams(format!(
            "need 1 <= k <= N and trials >= 1, got k={k}, trials={trials}"
        )));
    }
    let phi_u = phi.mul_dense(u)?;
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = f64::NEG_INFINITY;
    let mut pool: Vec<usize> = (0..n).collect();
    for _ in 0..trials {
        let h = random_row_sparse(n, 1, k, &mut pool, rng);
        let r = energy_ratio(&phi_u, &h);
        min_ratio = min_ratio.min(r);
        max_ratio = max_ratio.max(r);
    }
    let delta_hat = (1.0 - min_ratio).max(max_ratio - 1.0).max(0.0);
    Ok(RipEstimate {
        k,
        trials,
        delta_hat,
        min_ratio,
        max_ratio,
        satisfied: delta_hat < 1.0,
    })
}

/// Unit-Frobenius `n × width` matrix with exactly `k` nonzero rows at a
/// uniformly random support. `pool` is scratch space holding a permutation
/// of `0..n`.
pub fn random_row_sparse(n: usize, width: usize, k: usize, pool: &mut [usize], rng: &mut RngStream) -> Matrix {
    for i in 0..k {
        let j = i + rng.below(n - i);
        pool.swap(i, j);
    }
    let mut h = Matrix::zeros(n, width);
    loop {
        for &row in &pool[..k] {
            for c in 0..width {
                h[(row, c)] = rng.standard_normal();
            }
        }
        // A whole row of exact zeros is a measure-zero event; redraw if hit.
        if pool[..k].iter().all(|&r| h.row(r).iter().any(|v| *v != 0.0)) {
            break;
        }
    }
    let norm = frobenius(&h);
    h / norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub m: usize,
    pub mode: ScoreMode,
    pub anchors: AnchorSampling,
}

impl SamplerConfig {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            mode: ScoreMode::default(),
            anchors: AnchorSampling::default(),
        }
    }
}

/// The finished, immutable sampling operator.
#[derive(Debug, Clone)]
pub struct SamplingOperator {
    pub s_hat: SparseMatrix,
    pub anchors: Vec<usize>,
    pub sigma: SparseMatrix,
    pub phi: SparseMatrix,
    pub column_counts: Vec<usize>,
    pub rank: usize,
    /// Σ redraws needed before `Φ` came out full rank.
    pub sigma_retries: usize,
}

impl SamplingOperator {
    pub fn m(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n(&self) -> usize {
        self.phi.ncols()
    }

    /// Builds the operator from scratch, eigendecomposing `Â`.
    pub fn construct(g: &Graph, a_hat: &PropagationMatrix, cfg: &SamplerConfig, seed: u64) -> Result<Self> {
        let eig = sym_eigendecompose(&a_hat.to_dense())?;
        Self::construct_with_eigen(g, &eig, cfg, seed)
    }

    pub fn construct_with_eigen(g: &Graph, eig: &EigenDecomposition, cfg: &SamplerConfig, seed: u64) -> Result<Self> {
        let profile = node_scores_from_eigen(eig, cfg.mode, cfg.m)?;
        Self::construct_with_profile(g, &profile, cfg, seed)
    }

    /// Draws `Ŝ` once, then `Σ` until `Φ` has full row rank, redrawing at
    /// most [`MAX_SIGMA_RETRIES`] times with successive seeds.
    pub fn construct_with_profile(
        g: &Graph,
        profile: &NodeScoreProfile,
        cfg: &SamplerConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut structure_rng = RngStream::new(seed, Purpose::Structure);
        let (s_hat, anchors) = build_structure(g, profile, cfg.m, cfg.anchors, &mut structure_rng)?;
        let column_counts = s_hat.column_counts();
        let mut last_err = None;
        for attempt in 0..=MAX_SIGMA_RETRIES {
            let mut gauss_rng = RngStream::new(seed.wrapping_add(attempt as u64), Purpose::Gaussian);
            let sigma = build_gaussian(&s_hat, &mut gauss_rng);
            let phi = assemble_phi(&s_hat, &sigma)?;
            match verify_full_rank(&phi) {
                Ok(rank) => {
                    return Ok(Self {
                        s_hat,
                        anchors,
                        sigma,
                        phi,
                        column_counts,
                        rank,
                        sigma_retries: attempt,
                    })
                }
                Err(e @ Error::RankDeficient { .. }) => {
                    log::warn!("sampling operator attempt {attempt}: {e}");
                    last_err = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }
}
