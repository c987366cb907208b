//! Maximum marginal-likelihood fitting.
//!
//! Normal-trait models are fitted by EM over unique response patterns with
//! Gauss-Hermite quadrature (QMC nodes above three traits); latent-class
//! models by EM with a deterministic start plus a multi-start random
//! strategy. Standard errors come from the outer product of per-individual
//! score vectors.

mod items;
mod latent_class;
mod layout;
mod normal;
mod patterns;
mod se;

pub use latent_class::{em_fit_latent_class, LcStructural};
pub use layout::{ParamLayout, ParamRef};
pub use normal::{default_normal_init, em_fit_normal};
pub use patterns::{unique_patterns, UniquePatterns};
pub use se::standard_errors;

use serde::{Deserialize, Serialize};

use crate::model::{
    IdentificationScheme, ItemParams, LatentSpec, ModelSpec, SlopeConstraint,
};
use crate::{Error, Result};

/// Fitting controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_em_iters: usize,
    /// Stop when the marginal log-likelihood changes by less than this.
    pub loglik_tol: f64,
    /// ... and every free parameter moved by less than this.
    pub param_tol: f64,
    /// Tensor quadrature size per dimension; `None` picks 21/15/9 for 1/2/3
    /// traits.
    pub quad_points_per_dim: Option<usize>,
    /// Low-discrepancy node count used above three traits.
    pub qmc_points: usize,
    /// Random starts for latent-class fits, in addition to the
    /// deterministic start.
    pub n_random_starts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_em_iters: 500,
            loglik_tol: 1e-6,
            param_tol: 1e-4,
            quad_points_per_dim: None,
            qmc_points: 2000,
            n_random_starts: 10,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.loglik_tol <= 0.0 || self.param_tol <= 0.0 {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        if self.max_em_iters == 0 {
            return Err(Error::InvalidParameter("max_em_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Default tensor-quadrature size per dimension.
pub fn default_quad_points(dims: usize) -> usize {
    match dims {
        1 => 21,
        2 => 15,
        _ => 9,
    }
}

/// A fitted model with its likelihood trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelSpec,
    /// Final marginal log-likelihood.
    pub loglik: f64,
    /// Count of free (unconstrained) parameters.
    pub n_params: usize,
    /// Per-iteration marginal log-likelihood; non-decreasing up to numerical
    /// tolerance.
    pub trace: Vec<f64>,
    /// Standard errors aligned with [`ParamLayout::for_model`] order, when
    /// computed.
    pub std_errors: Option<Vec<f64>>,
    pub converged: bool,
    pub n_used: usize,
    pub warnings: Vec<String>,
    pub options: FitOptions,
}

/// Mark a model's identification constraints as fixed.
///
/// Scheme 1 standardizes the latent scale (zero means, unit-diagonal
/// covariance; with several traits the exploratory convention also zeroes
/// the upper-echelon slopes). Scheme 2 pins, per trait, the first allocated
/// item's discrimination at 1 and difficulty at 0. Free unidimensional
/// models need at least 3 items.
pub fn apply_identifiability(model: &ModelSpec, scheme: IdentificationScheme) -> Result<ModelSpec> {
    let mut out = model.clone();
    out.identification = scheme;
    let dims = out.dims();
    let free_slopes = out.slope_constraint != SlopeConstraint::Fixed;
    if dims == 1 && free_slopes && out.items.len() < 3 {
        return Err(Error::Identifiability(format!(
            "unidimensional models with free discriminations need at least 3 items, got {}",
            out.items.len()
        )));
    }
    match scheme {
        IdentificationScheme::StandardizedTraits => {
            let LatentSpec::Normal { mean, cov } = &mut out.latent else {
                return Err(Error::Identifiability(
                    "scheme 1 standardizes a Normal latent distribution".into(),
                ));
            };
            mean.iter_mut().for_each(|m| *m = 0.0);
            let sd: Vec<f64> = (0..dims).map(|s| cov[s][s].sqrt()).collect();
            for r in 0..dims {
                for c in 0..dims {
                    cov[r][c] /= sd[r] * sd[c];
                }
            }
            for (i, item) in out.items.iter_mut().enumerate() {
                zero_echelon_slopes(item, i, dims);
            }
        }
        IdentificationScheme::AnchoredItems => {
            let LatentSpec::Discrete { support, .. } = &mut out.latent else {
                return Err(Error::Identifiability(
                    "scheme 2 anchors items of a discrete latent distribution".into(),
                ));
            };
            let n_classes = support.len();
            if n_classes == 1 {
                for xi in support.iter_mut() {
                    xi.iter_mut().for_each(|v| *v = 0.0);
                }
            } else {
                let mut anchored = vec![false; dims];
                for (i, item) in out.items.iter_mut().enumerate() {
                    if out.fixed_items.contains(&i) {
                        continue;
                    }
                    if let ItemParams::LatentClass { disc, easiness, trait_index } = item {
                        if !anchored[*trait_index] {
                            *disc = 1.0;
                            *easiness = 0.0;
                            anchored[*trait_index] = true;
                        }
                    }
                }
                if anchored.iter().any(|a| !a) {
                    return Err(Error::Identifiability(
                        "every trait needs at least one allocated item to anchor".into(),
                    ));
                }
            }
        }
    }
    Ok(out)
}

/// Zero the exploratory echelon slopes: item `i` loads only on the first
/// `i + 1` traits.
fn zero_echelon_slopes(item: &mut ItemParams, i: usize, dims: usize) {
    if dims <= 1 {
        return;
    }
    match item {
        ItemParams::Binary { slopes, .. } | ItemParams::Graded { slopes, .. } => {
            for s in (i + 1)..dims.min(slopes.len()) {
                slopes[s] = 0.0;
            }
        }
        ItemParams::Nominal { slopes, .. } => {
            for row in slopes.iter_mut() {
                for s in (i + 1)..dims.min(row.len()) {
                    row[s] = 0.0;
                }
            }
        }
        ItemParams::LatentClass { .. } => {}
    }
}

/// True when the exploratory echelon constraint fixes `slope[dim]` of item
/// `item_idx` at zero.
pub(crate) fn echelon_fixed(model: &ModelSpec, item_idx: usize, dim: usize) -> bool {
    model.identification == IdentificationScheme::StandardizedTraits
        && model.dims() > 1
        && dim > item_idx
}
