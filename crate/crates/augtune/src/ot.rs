//! Distribution-alignment losses between embedding sets.
//!
//! The main loss is the entropic-regularized transport cost between two
//! empirical measures (uniform weights over rows), computed with log-domain
//! Sinkhorn iterations that stay inside the differentiation graph, so
//! gradients flow through the unrolled fixed-point loop. An exact
//! small-instance solver serves as the independent oracle in tests, and a
//! point-wise mean-matching loss implements the ablation baseline.

use thiserror::Error;

use crate::tensor::{max_axis0_data, max_axis1_data, Graph, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum OtError {
    #[error("degenerate embedding: row norm below {0:e} (embeddings collapsed)")]
    DegenerateEmbedding(f64),
    #[error("non-finite transport cost")]
    NonFiniteCost,
    #[error("exact solver limited to {max} points per side, got {got}")]
    SizeCap { max: usize, got: usize },
    #[error("point sets must have equal size: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, OtError>;

/// An `n x d` matrix of embeddings living in a differentiation graph.
#[derive(Clone)]
pub struct EmbeddingSet {
    z: Var,
    normalized: bool,
}

impl EmbeddingSet {
    pub fn new(z: Var) -> Result<Self> {
        if z.shape().len() != 2 {
            return Err(OtError::Tensor(TensorError::InvalidShape(format!(
                "embedding set expects [n,d], got {:?}",
                z.shape()
            ))));
        }
        Ok(EmbeddingSet {
            z,
            normalized: false,
        })
    }

    pub fn from_rows(graph: &Graph, rows: &[Vec<f64>]) -> Result<Self> {
        let t = Tensor::from_rows(rows).map_err(OtError::Tensor)?;
        Self::new(graph.constant(t))
    }

    pub fn var(&self) -> &Var {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.z.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.z.shape()[1]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

pub const DEGENERATE_NORM: f64 = 1e-12;

/// Rescales every row to unit L2 norm (differentiable).
///
/// A row with norm below [`DEGENERATE_NORM`] signals embedding collapse —
/// the trivial alignment solution — and is surfaced as an error instead of
/// being silently normalized into noise.
pub fn normalize_embeddings(set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let z = &set.z;
    let d = set.dim();
    let sq = z.mul(z)?.sum_axis1()?;
    if sq.value().data().iter().any(|&s| s.sqrt() < DEGENERATE_NORM) {
        return Err(OtError::DegenerateEmbedding(DEGENERATE_NORM));
    }
    let norms = sq.sqrt();
    let out = z.div(&norms.bcast_col(d)?)?;
    Ok(EmbeddingSet {
        z: out,
        normalized: true,
    })
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct SinkhornConfig {
    /// Ground-cost exponent: `C_ij = ||a_i - b_j||^p`.
    pub p: f64,
    /// Entropic regularization strength.
    pub eps: f64,
    pub max_iter: usize,
    /// L1 tolerance on the coupling marginals; `0.0` disables early stopping
    /// so the iteration count is fixed (useful for gradient checks).
    pub marginal_tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            p: 2.0,
            eps: 0.05,
            max_iter: 200,
            marginal_tol: 1e-6,
        }
    }
}

/// Result of a Sinkhorn solve. `cost` and `plan` are graph nodes.
pub struct SinkhornOutput {
    pub cost: Var,
    pub plan: Var,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_error: f64,
}

/// Pairwise ground costs `C_ij = ||a_i - b_j||_2^p` as a graph node.
fn pairwise_cost(a: &Var, b: &Var, p: f64) -> Result<Var> {
    let n = a.shape()[0];
    let m = b.shape()[0];
    let aa = a.mul(a)?.sum_axis1()?.bcast_col(m)?;
    let bb = b.mul(b)?.sum_axis1()?.bcast_row(n)?;
    let ab = a.matmul(&b.transpose()?)?;
    // relu clamps the tiny negatives that cancellation can produce
    let sq = aa.add(&bb)?.sub(&ab.mul_scalar(2.0))?.relu();
    if (p - 2.0).abs() < 1e-15 {
        Ok(sq)
    } else {
        Ok(sq.powf(p / 2.0))
    }
}

/// Row-wise log-sum-exp with a detached max shift (shift-invariant, so the
/// gradient is unaffected by treating the max as constant).
fn lse_row(m: &Var) -> Result<Var> {
    let cols = m.shape()[1];
    let mx = m.graph().constant(max_axis1_data(&m.value()));
    let shifted = m.sub(&mx.bcast_col(cols)?)?;
    Ok(shifted.exp().sum_axis1()?.ln().add(&mx)?)
}

fn lse_col(m: &Var) -> Result<Var> {
    let rows = m.shape()[0];
    let mx = m.graph().constant(max_axis0_data(&m.value()));
    let shifted = m.sub(&mx.bcast_row(rows)?)?;
    Ok(shifted.exp().sum_axis0()?.ln().add(&mx)?)
}

/// L1 deviation of the current coupling's marginals from uniform, computed
/// on detached values (does not grow the graph).
fn marginal_error(f: &Tensor, g: &Tensor, c: &Tensor, eps: f64) -> f64 {
    let n = f.numel();
    let m = g.numel();
    let scale = 1.0 / (n as f64 * m as f64);
    let mut row = vec![0.0; n];
    let mut col = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            let p = ((f.data()[i] + g.data()[j] - c.data()[i * m + j]) / eps).exp() * scale;
            row[i] += p;
            col[j] += p;
        }
    }
    let mut err = 0.0;
    for r in &row {
        err += (r - 1.0 / n as f64).abs();
    }
    for csum in &col {
        err += (csum - 1.0 / m as f64).abs();
    }
    err
}

/// Entropic transport cost between two embedding sets under uniform weights.
///
/// Runs log-domain Sinkhorn updates as graph operations and returns the
/// transport cost `<P, C>` after convergence. If the marginals have not met
/// `marginal_tol` within `max_iter` iterations the best iterate is returned
/// with `converged == false`.
pub fn sinkhorn_distance(
    a: &EmbeddingSet,
    b: &EmbeddingSet,
    cfg: &SinkhornConfig,
) -> Result<SinkhornOutput> {
    if a.dim() != b.dim() {
        return Err(OtError::DimMismatch(a.dim(), b.dim()));
    }
    let graph = a.var().graph().clone();
    let n = a.n();
    let m = b.n();
    let eps = cfg.eps;
    let c = pairwise_cost(a.var(), b.var(), cfg.p)?;
    let ln_n = (n as f64).ln();
    let ln_m = (m as f64).ln();

    let mut f = graph.constant(Tensor::zeros(&[n]));
    let mut g = graph.constant(Tensor::zeros(&[m]));
    let mut iterations = 0;
    let mut converged = false;
    let mut err = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        // f_i <- -eps * (LSE_j((g_j - C_ij)/eps) - ln m)
        let gm = g.bcast_row(n)?.sub(&c)?.mul_scalar(1.0 / eps);
        f = lse_row(&gm)?.add_scalar(-ln_m).mul_scalar(-eps);
        let fm = f.bcast_col(m)?.sub(&c)?.mul_scalar(1.0 / eps);
        g = lse_col(&fm)?.add_scalar(-ln_n).mul_scalar(-eps);
        iterations += 1;
        err = marginal_error(&f.value(), &g.value(), &c.value(), eps);
        if err <= cfg.marginal_tol {
            converged = true;
            break;
        }
    }

    let fg = f
        .bcast_col(m)?
        .add(&g.bcast_row(n)?)?
        .sub(&c)?
        .mul_scalar(1.0 / eps);
    let plan = fg.exp().mul_scalar(1.0 / (n as f64 * m as f64));
    let cost = plan.mul(&c)?.sum_all();
    if !cost.value().is_finite() {
        return Err(OtError::NonFiniteCost);
    }
    Ok(SinkhornOutput {
        cost,
        plan,
        iterations,
        converged,
        marginal_error: err,
    })
}

pub const EXACT_OT_MAX: usize = 12;

/// Exact optimal transport between equal-size uniform empirical measures:
/// the assignment problem, solved by bitmask dynamic programming.
///
/// Returns the minimum over permutations of the mean cost
/// `(1/n) sum_i ||a_i - b_{pi(i)}||^p`. Capped at [`EXACT_OT_MAX`] points.
pub fn exact_ot(a: &Tensor, b: &Tensor, p: f64) -> Result<f64> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(OtError::Tensor(TensorError::InvalidShape(
            "exact_ot expects [n,d] matrices".into(),
        )));
    }
    let n = a.shape()[0];
    if b.shape()[0] != n {
        return Err(OtError::SizeMismatch(n, b.shape()[0]));
    }
    if a.shape()[1] != b.shape()[1] {
        return Err(OtError::DimMismatch(a.shape()[1], b.shape()[1]));
    }
    if n > EXACT_OT_MAX {
        return Err(OtError::SizeCap {
            max: EXACT_OT_MAX,
            got: n,
        });
    }
    let d = a.shape()[1];
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let sq: f64 = (0..d)
                .map(|k| {
                    let diff = a.data()[i * d + k] - b.data()[j * d + k];
                    diff * diff
                })
                .sum();
            cost[i * n + j] = sq.powf(p / 2.0);
        }
    }
    let full = 1usize << n;
    let mut dp = vec![f64::INFINITY; full];
    dp[0] = 0.0;
    for mask in 0..full - 1 {
        if !dp[mask].is_finite() {
            continue;
        }
        let i = mask.count_ones() as usize; // next row of `a` to match
        for j in 0..n {
            if mask & (1 << j) == 0 {
                let next = mask | (1 << j);
                let cand = dp[mask] + cost[i * n + j];
                if cand < dp[next] {
                    dp[next] = cand;
                }
            }
        }
    }
    Ok(dp[full - 1] / n as f64)
}

/// Squared Euclidean distance between the row-means of two sets
/// (the point-wise ablation loss; blind to spread).
pub fn pointwise_loss(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<Var> {
    if a.dim() != b.dim() {
        return Err(OtError::DimMismatch(a.dim(), b.dim()));
    }
    let ma = a.var().sum_axis0()?.mul_scalar(1.0 / a.n() as f64);
    let mb = b.var().sum_axis0()?.mul_scalar(1.0 / b.n() as f64);
    let diff = ma.sub(&mb)?;
    Ok(diff.mul(&diff)?.sum_all())
}
