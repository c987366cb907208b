//! Standard errors from the outer product of per-individual score vectors,
//! with gradients by central finite differences of the per-individual
//! marginal log-likelihood.

use nalgebra::DMatrix;

use super::layout::ParamLayout;
use super::patterns::unique_patterns_grouped;
use super::{default_quad_points, FitResult};
use crate::model::{row_loglik_classes, row_loglik_quadrature, LatentSpec, ModelSpec, ResponseMatrix};
use crate::quadrature::{gauss_hermite_rule, qmc_rule, QuadratureRule};
use crate::structural::StructuralModel;
use crate::{Error, Result};

/// Per-parameter standard errors (aligned with [`ParamLayout::for_model`])
/// and any diagnostics. Parameters whose information is singular come back
/// as NaN.
pub fn standard_errors(
    fit: &FitResult,
    data: &ResponseMatrix,
    design: Option<&DMatrix<f64>>,
) -> Result<(Vec<f64>, Vec<String>)> {
    if !fit.converged {
        return Err(Error::InvalidParameter(
            "standard errors require a converged fit".into(),
        ));
    }
    let layout = ParamLayout::for_model(&fit.model);
    let center = layout.extract(&fit.model);
    let n_par = center.len();
    if n_par == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let patterns = unique_patterns_grouped(data, design);
    let rule = build_rule(&fit.model, fit)?;

    // Per-pattern log-likelihood at perturbed parameter vectors.
    let lls_at = |values: &[f64]| -> Vec<f64> {
        let model = layout.apply(&fit.model, values);
        pattern_logliks(&model, &patterns, rule.as_ref())
    };

    let mut scores = vec![vec![0.0; n_par]; patterns.len()];
    for k in 0..n_par {
        let h = 1e-5 * (1.0 + center[k].abs());
        let mut plus = center.clone();
        plus[k] += h;
        let mut minus = center.clone();
        minus[k] -= h;
        let lp = lls_at(&plus);
        let lm = lls_at(&minus);
        for u in 0..patterns.len() {
            scores[u][k] = (lp[u] - lm[u]) / (2.0 * h);
        }
    }

    let mut info = DMatrix::zeros(n_par, n_par);
    for (u, s) in scores.iter().enumerate() {
        let m = patterns.counts[u] as f64;
        for a in 0..n_par {
            for b in a..n_par {
                info[(a, b)] += m * s[a] * s[b];
            }
        }
    }
    for a in 0..n_par {
        for b in 0..a {
            info[(a, b)] = info[(b, a)];
        }
    }

    let mut warnings = Vec::new();
    let names = layout.names(&fit.model);
    // Parameters with no score variation are undefined from the start.
    let scale = (0..n_par).map(|k| info[(k, k)]).fold(0.0_f64, f64::max).max(1.0);
    let defined: Vec<usize> =
        (0..n_par).filter(|&k| info[(k, k)] > 1e-12 * scale).collect();
    for k in 0..n_par {
        if !defined.contains(&k) {
            warnings.push(format!(
                "standard error undefined for '{}': no score variation",
                names[k]
            ));
        }
    }
    let mut ses = vec![f64::NAN; n_par];
    if !defined.is_empty() {
        let sub = DMatrix::from_fn(defined.len(), defined.len(), |r, c| {
            info[(defined[r], defined[c])]
        });
        match sub.clone().cholesky() {
            Some(chol) => {
                let inv = chol.inverse();
                for (r, &k) in defined.iter().enumerate() {
                    ses[k] = inv[(r, r)].sqrt();
                }
            }
            None => {
                warnings.push(
                    "information matrix is singular; standard errors undefined".to_string(),
                );
            }
        }
    }
    Ok((ses, warnings))
}

fn build_rule(model: &ModelSpec, fit: &FitResult) -> Result<Option<QuadratureRule>> {
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
            Ok(Some(rule))
        }
        LatentSpec::Discrete { .. } => Ok(None),
    }
}

fn pattern_logliks(
    model: &ModelSpec,
    patterns: &super::patterns::UniquePatterns,
    rule: Option<&QuadratureRule>,
) -> Vec<f64> {
    crate::par::par_map_range(patterns.len(), |u| {
        let row = &patterns.rows[u];
        match &model.latent {
            LatentSpec::Normal { .. } => {
                let offset = match (&model.structural, patterns.design_row(u)) {
                    (Some(m @ StructuralModel::LatentRegression { .. }), Some(w)) => {
                        Some(m.latent_offset(w).expect("validated design"))
                    }
                    _ => None,
                };
                row_loglik_quadrature(row, &model.items, rule.expect("rule"), offset.as_deref())
            }
            LatentSpec::Discrete { support, prior } => {
                let prior_u = match patterns.design_row(u) {
                    Some(w) => class_prior_row(model, prior, w),
                    None => prior.clone(),
                };
                row_loglik_classes(row, &model.items, support, &prior_u)
            }
        }
    })
}

fn class_prior_row(model: &ModelSpec, prior: &[f64], w: &[f64]) -> Vec<f64> {
    match &model.structural {
        Some(m) if !matches!(m, StructuralModel::LatentRegression { .. }) => {
            crate::structural::prior_class_probs(m, w).expect("validated design")
        }
        _ => prior.to_vec(),
    }
}
