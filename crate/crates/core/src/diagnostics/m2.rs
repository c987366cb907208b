//! Limited-information overall fit: the M2 statistic on first- and
//! second-order margins, and the RMSEA derived from it.
//!
//! The statistic is `N r' C r` where `r` stacks the residuals of all
//! univariate category margins and pairwise joint margins,
//! `C = Xi^-1 - Xi^-1 D (D' Xi^-1 D)^-1 D' Xi^-1`, `Xi` is the asymptotic
//! covariance of the sample margins under the fitted model and `D` the
//! margin derivatives with respect to the free parameters. Margin
//! probabilities involve at most four items, so everything reduces to
//! small joint probabilities integrated over the latent distribution — no
//! full pattern enumeration.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::estimation::{default_quad_points, FitResult, ParamLayout};
use crate::model::{LatentSpec, ModelSpec, ResponseMatrix};
use crate::quadrature::{gauss_hermite_rule, qmc_rule, QuadratureRule};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct M2Report {
    pub m2: f64,
    pub df: usize,
    pub rmsea: f64,
    /// Margins retained after collapsing small expected counts.
    pub n_margins: usize,
    pub n_params: usize,
}

/// A margin event: the named items take exactly the named categories.
#[derive(Clone)]
struct Margin {
    cells: Vec<(usize, u16)>,
}

/// M2, its degrees of freedom and the RMSEA
/// `sqrt(max(M2 - df, 0) / (df N))`.
///
/// Margins with model-expected count below 1 are collapsed (dropped into
/// their complement) to stabilize the weight matrix. Fits with a structural
/// model are not supported: covariate-dependent priors make the margins
/// non-identically distributed. `df <= 0` is an error reported as such.
pub fn rmsea_m2(data: &ResponseMatrix, fit: &FitResult) -> Result<M2Report> {
    if fit.model.structural.is_some() {
        return Err(Error::Unsupported(
            "M2 requires a fit without a structural model; margins are not identically \
             distributed under covariate-dependent priors"
                .into(),
        ));
    }
    let n = data.n() as f64;
    let model = &fit.model;
    let integrator = MarginIntegrator::for_model(model, fit)?;
    let layout = ParamLayout::for_model(model);

    // Candidate margins: univariate (k >= 1) then pairwise joints.
    let n_items = data.n_items();
    let mut margins = Vec::new();
    for i in 0..n_items {
        for k in 1..data.items()[i].n_categories {
            margins.push(Margin { cells: vec![(i, k as u16)] });
        }
    }
    for a in 0..n_items {
        for b in (a + 1)..n_items {
            for ka in 1..data.items()[a].n_categories {
                for kb in 1..data.items()[b].n_categories {
                    margins.push(Margin {
                        cells: vec![(a, ka as u16), (b, kb as u16)],
                    });
                }
            }
        }
    }
    // Collapse margins with tiny expected counts.
    let margins: Vec<Margin> = margins
        .into_iter()
        .filter(|m| n * integrator.probability(model, &m.cells) >= 1.0)
        .collect();
    let m = margins.len();
    let p = layout.len();
    if m <= p {
        return Err(Error::Unsupported(format!(
            "M2 undefined: {m} margins for {p} free parameters leaves no degrees of freedom"
        )));
    }
    let df = m - p;

    // Sample and model margins.
    let mut resid = DMatrix::zeros(m, 1);
    let mut pi = vec![0.0; m];
    for (idx, margin) in margins.iter().enumerate() {
        let mut hit = 0usize;
        let mut total = 0usize;
        for j in 0..data.n() {
            let all_elig = margin.cells.iter().all(|&(i, _)| data.eligible(j, i));
            if !all_elig {
                continue;
            }
            total += 1;
            if margin.cells.iter().all(|&(i, k)| data.response(j, i) == Some(k)) {
                hit += 1;
            }
        }
        if total == 0 {
            return Err(Error::Data("a margin has no jointly eligible individuals".into()));
        }
        let sample = hit as f64 / total as f64;
        pi[idx] = integrator.probability(model, &margin.cells);
        resid[(idx, 0)] = sample - pi[idx];
    }

    // Asymptotic covariance of the sample margins under the model:
    // Xi_ab = P(A and B) - P(A) P(B).
    let mut xi = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let joint = match merge_cells(&margins[a].cells, &margins[b].cells) {
                Some(cells) => integrator.probability(model, &cells),
                None => 0.0,
            };
            let cov = joint - pi[a] * pi[b];
            xi[(a, b)] = cov;
            xi[(b, a)] = cov;
        }
    }

    // Margin derivatives by central differences over the free parameters.
    let center = layout.extract(model);
    let mut delta = DMatrix::zeros(m, p);
    for k in 0..p {
        let h = 1e-5 * (1.0 + center[k].abs());
        let mut plus = center.clone();
        plus[k] += h;
        let mut minus = center.clone();
        minus[k] -= h;
        let model_p = layout.apply(model, &plus);
        let model_m = layout.apply(model, &minus);
        let int_p = MarginIntegrator::for_model(&model_p, fit)?;
        let int_m = MarginIntegrator::for_model(&model_m, fit)?;
        for (idx, margin) in margins.iter().enumerate() {
            delta[(idx, k)] = (int_p.probability(&model_p, &margin.cells)
                - int_m.probability(&model_m, &margin.cells))
                / (2.0 * h);
        }
    }

    // C = Xi^-1 - Xi^-1 D (D' Xi^-1 D)^-1 D' Xi^-1, applied to the residual.
    let xi_inv = invert_spd(&xi, "margin covariance")?;
    let xi_inv_d = &xi_inv * &delta;
    let inner = delta.transpose() * &xi_inv_d;
    let inner_inv = invert_spd(&inner, "delta weight")?;
    let xi_inv_r = &xi_inv * &resid;
    let proj = &xi_inv_d * (inner_inv * (delta.transpose() * &xi_inv_r));
    let c_r = &xi_inv_r - proj;
    let m2 = n * (resid.transpose() * c_r)[(0, 0)];
    let m2 = m2.max(0.0);
    let rmsea = ((m2 - df as f64).max(0.0) / (df as f64 * n)).sqrt();
    Ok(M2Report { m2, df, rmsea, n_margins: m, n_params: p })
}

/// Merge the cell constraints of two margins; `None` when they conflict
/// (same item, different categories), in which case the joint probability
/// is zero.
fn merge_cells(a: &[(usize, u16)], b: &[(usize, u16)]) -> Option<Vec<(usize, u16)>> {
    let mut cells = a.to_vec();
    for &(item, cat) in b {
        match cells.iter().find(|&&(i, _)| i == item) {
            Some(&(_, existing)) if existing != cat => return None,
            Some(_) => {}
            None => cells.push((item, cat)),
        }
    }
    cells.sort_unstable();
    Some(cells)
}

/// Computes low-order joint probabilities under the latent distribution.
enum MarginIntegrator {
    Rule(QuadratureRule),
    Classes,
}

impl MarginIntegrator {
    fn for_model(model: &ModelSpec, fit: &FitResult) -> Result<Self> {
        match &model.latent {
            LatentSpec::Normal { mean, cov } => {
                let dims = mean.len();
                let rule = if dims <= 3 {
                    let pts = fit
                        .options
                        .quad_points_per_dim
                        .unwrap_or_else(|| default_quad_points(dims));
                    gauss_hermite_rule(pts, dims, mean, cov)?
                } else {
                    qmc_rule(fit.options.qmc_points, dims, mean, cov, fit.options.seed)?
                };
                Ok(Self::Rule(rule))
            }
            LatentSpec::Discrete { .. } => Ok(Self::Classes),
        }
    }

    fn probability(&self, model: &ModelSpec, cells: &[(usize, u16)]) -> f64 {
        let joint = |theta: &[f64]| -> f64 {
            cells.iter().map(|&(i, k)| model.items[i].prob(theta, k)).product()
        };
        match self {
            Self::Rule(rule) => rule.integrate(joint),
            Self::Classes => {
                let LatentSpec::Discrete { support, prior } = &model.latent else {
                    unreachable!()
                };
                support.iter().zip(prior).map(|(xi, p)| p * joint(xi)).sum()
            }
        }
    }
}

fn invert_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical(format!("{what} matrix is not positive definite")))
}
