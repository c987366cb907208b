//! Quadrature rules for integrating against a multivariate Normal latent
//! distribution: tensor-product Gauss-Hermite for up to three traits, and
//! randomized low-discrepancy (Halton) nodes above that.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::math::{gauss_hermite, halton_points};
use crate::rng::derive_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadKind {
    GaussHermiteTensor,
    Qmc,
}

/// Nodes and normalized weights positioned to integrate against `N(mu, Sigma)`:
/// `integral f dN  ~=  sum_q w_q f(node_q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    dims: usize,
    pub kind: QuadKind,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn node(&self, q: usize) -> &[f64] {
        &self.nodes[q * self.dims..(q + 1) * self.dims]
    }

    pub fn weight(&self, q: usize) -> f64 {
        self.weights[q]
    }

    pub fn log_weight(&self, q: usize) -> f64 {
        self.log_weights[q]
    }

    /// Approximate `E[f(theta)]` under the rule's Normal distribution.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        (0..self.len()).map(|q| self.weights[q] * f(self.node(q))).sum()
    }

    fn from_parts(nodes: Vec<f64>, mut weights: Vec<f64>, dims: usize, kind: QuadKind) -> Self {
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Self { nodes, log_weights, weights, dims, kind }
    }
}

fn cholesky_factor(dims: usize, cov: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if cov.len() != dims || cov.iter().any(|r| r.len() != dims) {
        return Err(Error::DimensionMismatch("covariance must be S x S".into()));
    }
    let m = DMatrix::from_fn(dims, dims, |r, c| cov[r][c]);
    m.cholesky().map(|c| c.l()).ok_or(Error::NotPositiveDefinite)
}

/// Tensor-product Gauss-Hermite rule transformed to integrate against
/// `N(mu, Sigma)`. Refuses more than three dimensions, where the tensor
/// product explodes; use [`qmc_rule`] there.
pub fn gauss_hermite_rule(
    points_per_dim: usize,
    dims: usize,
    mean: &[f64],
    cov: &[Vec<f64>],
) -> Result<QuadratureRule> {
    if dims == 0 || dims > 3 {
        return Err(Error::Unsupported(format!(
            "tensor Gauss-Hermite supports 1..=3 dimensions, got {dims}; use a QMC rule"
        )));
    }
    if points_per_dim < 2 {
        return Err(Error::InvalidParameter("points_per_dim must be at least 2".into()));
    }
    if mean.len() != dims {
        return Err(Error::DimensionMismatch("mean length must equal dims".into()));
    }
    let l = cholesky_factor(dims, cov)?;
    let (x1, w1) = gauss_hermite(points_per_dim);
    let q_total = points_per_dim.pow(dims as u32);
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut nodes = Vec::with_capacity(q_total * dims);
    let mut weights = Vec::with_capacity(q_total);
    let mut index = vec![0usize; dims];
    for _ in 0..q_total {
        let z: Vec<f64> = index.iter().map(|&i| sqrt2 * x1[i]).collect();
        for r in 0..dims {
            let mut v = mean[r];
            for c in 0..dims {
                v += l[(r, c)] * z[c];
            }
            nodes.push(v);
        }
        weights.push(index.iter().map(|&i| w1[i]).product());
        // Advance the mixed-radix counter (last dimension fastest).
        for d in (0..dims).rev() {
            index[d] += 1;
            if index[d] < points_per_dim {
                break;
            }
            index[d] = 0;
        }
    }
    Ok(QuadratureRule::from_parts(nodes, weights, dims, QuadKind::GaussHermiteTensor))
}

/// Equal-weight low-discrepancy rule: a Cranley-Patterson-rotated Halton
/// sequence mapped through the Normal inverse CDF and the Cholesky factor of
/// `Sigma`. Same seed, same nodes.
pub fn qmc_rule(
    n_points: usize,
    dims: usize,
    mean: &[f64],
    cov: &[Vec<f64>],
    seed: u64,
) -> Result<QuadratureRule> {
    if dims == 0 {
        return Err(Error::InvalidParameter("dims must be at least 1".into()));
    }
    if n_points == 0 {
        return Err(Error::InvalidParameter("n_points must be at least 1".into()));
    }
    if mean.len() != dims {
        return Err(Error::DimensionMismatch("mean length must equal dims".into()));
    }
    let l = cholesky_factor(dims, cov)?;
    let mut rng = derive_rng(seed, "qmc-shift");
    let shift: Vec<f64> = (0..dims).map(|_| rng.random::<f64>()).collect();
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    let points = halton_points(n_points, dims, &shift);
    let mut nodes = Vec::with_capacity(n_points * dims);
    for u in &points {
        let z: Vec<f64> = u.iter().map(|&ui| std_normal.inverse_cdf(ui)).collect();
        for r in 0..dims {
            let mut v = mean[r];
            for c in 0..dims {
                v += l[(r, c)] * z[c];
            }
            nodes.push(v);
        }
    }
    let weights = vec![1.0 / n_points as f64; n_points];
    Ok(QuadratureRule::from_parts(nodes, weights, dims, QuadKind::Qmc))
}
