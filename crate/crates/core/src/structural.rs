//! Covariate models linking race/ethnicity (and other covariates) to latent
//! traits or latent-class probabilities, plus disparity extraction from
//! fitted coefficients.
//!
//! Coefficients live here; design matrices are passed alongside the data
//! they describe. For the latent regression the design must not contain an
//! intercept column (the reference-group latent mean is pinned at zero by
//! the identification scheme); the multinomial logit design normally starts
//! with an intercept column so the reference-group class probabilities are
//! the intercept softmax.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::estimation::{FitResult, ParamLayout, ParamRef};
use crate::math::{log1pexp, logsumexp, sigmoid};
use crate::{Error, Result};

/// Structural (covariate) model for the latent distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StructuralModel {
    /// Latent trait mean shifted by covariates: `theta = w gamma + eps`,
    /// `eps ~ N(0, I)`. `coef[cov][trait]`.
    LatentRegression {
        coef: Vec<Vec<f64>>,
        covariate_names: Vec<String>,
    },
    /// Multinomial logit for class probabilities with class 1 as reference.
    /// `coef[c - 2][cov]` holds the coefficients of class `c` (c = 2..C).
    MultinomialLogit {
        coef: Vec<Vec<f64>>,
        covariate_names: Vec<String>,
    },
    /// Cumulative logit on ordered classes: the log-odds of {classes above c}
    /// vs {at or below c} is `intercepts[c-1] + w* coef`. Coherent
    /// probabilities for every covariate value force the intercepts to be
    /// strictly decreasing in c, and the constructor enforces that.
    CumulativeLogit {
        intercepts: Vec<f64>,
        coef: Vec<f64>,
        covariate_names: Vec<String>,
    },
}

impl StructuralModel {
    pub fn latent_regression(coef: Vec<Vec<f64>>, covariate_names: Vec<String>) -> Result<Self> {
        if coef.len() != covariate_names.len() {
            return Err(Error::DimensionMismatch(format!(
                "latent regression: {} coefficient rows for {} covariates",
                coef.len(),
                covariate_names.len()
            )));
        }
        let traits = coef.first().map_or(0, Vec::len);
        if coef.iter().any(|row| row.len() != traits) {
            return Err(Error::DimensionMismatch(
                "latent regression: ragged coefficient rows".into(),
            ));
        }
        Ok(Self::LatentRegression { coef, covariate_names })
    }

    pub fn multinomial_logit(coef: Vec<Vec<f64>>, covariate_names: Vec<String>) -> Result<Self> {
        let q = covariate_names.len();
        if coef.iter().any(|row| row.len() != q) {
            return Err(Error::DimensionMismatch(
                "multinomial logit: coefficient row length must match covariate count".into(),
            ));
        }
        Ok(Self::MultinomialLogit { coef, covariate_names })
    }

    pub fn cumulative_logit(
        intercepts: Vec<f64>,
        coef: Vec<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        if coef.len() != covariate_names.len() {
            return Err(Error::DimensionMismatch(
                "cumulative logit: coefficient length must match covariate count".into(),
            ));
        }
        if intercepts.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter(
                "cumulative logit intercepts must be strictly decreasing in class order".into(),
            ));
        }
        Ok(Self::CumulativeLogit { intercepts, coef, covariate_names })
    }

    /// Number of classes described by a class-probability model.
    pub fn n_classes(&self) -> Option<usize> {
        match self {
            Self::LatentRegression { .. } => None,
            Self::MultinomialLogit { coef, .. } => Some(coef.len() + 1),
            Self::CumulativeLogit { intercepts, .. } => Some(intercepts.len() + 1),
        }
    }

    pub fn covariate_names(&self) -> &[String] {
        match self {
            Self::LatentRegression { covariate_names, .. }
            | Self::MultinomialLogit { covariate_names, .. }
            | Self::CumulativeLogit { covariate_names, .. } => covariate_names,
        }
    }

    /// Latent-mean offset `w gamma` for a latent regression.
    pub fn latent_offset(&self, w: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::LatentRegression { coef, .. } => {
                if w.len() != coef.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "design row has {} entries, model has {} covariates",
                        w.len(),
                        coef.len()
                    )));
                }
                let traits = coef.first().map_or(0, Vec::len);
                let mut out = vec![0.0; traits];
                for (wj, row) in w.iter().zip(coef) {
                    for (o, c) in out.iter_mut().zip(row) {
                        *o += wj * c;
                    }
                }
                Ok(out)
            }
            _ => Err(Error::InvalidParameter(
                "latent_offset only applies to a latent regression".into(),
            )),
        }
    }
}

/// Prior class probabilities for one individual.
///
/// For the multinomial logit pass the full design row `w` (usually including
/// an intercept); for the cumulative logit pass the reduced row `w*` without
/// an intercept.
pub fn prior_class_probs(model: &StructuralModel, w: &[f64]) -> Result<Vec<f64>> {
    match model {
        StructuralModel::MultinomialLogit { coef, .. } => {
            let q = model.covariate_names().len();
            if w.len() != q {
                return Err(Error::DimensionMismatch(format!(
                    "design row has {} entries, model has {q} covariates",
                    w.len()
                )));
            }
            let mut logits = Vec::with_capacity(coef.len() + 1);
            logits.push(0.0);
            for row in coef {
                logits.push(row.iter().zip(w).map(|(c, x)| c * x).sum());
            }
            let lse = logsumexp(&logits);
            Ok(logits.iter().map(|l| (l - lse).exp()).collect())
        }
        StructuralModel::CumulativeLogit { intercepts, coef, .. } => {
            if w.len() != coef.len() {
                return Err(Error::DimensionMismatch(format!(
                    "design row has {} entries, model has {} covariates",
                    w.len(),
                    coef.len()
                )));
            }
            let eta: f64 = coef.iter().zip(w).map(|(c, x)| c * x).sum();
            let c = intercepts.len() + 1;
            // exceed[c] = P(class > c), with P(class > 0) = 1 and P(class > C) = 0.
            let mut exceed = Vec::with_capacity(c + 1);
            exceed.push(1.0);
            for phi in intercepts {
                exceed.push(sigmoid(phi + eta));
            }
            exceed.push(0.0);
            Ok((0..c).map(|k| exceed[k] - exceed[k + 1]).collect())
        }
        StructuralModel::LatentRegression { .. } => Err(Error::InvalidParameter(
            "class probabilities require a multinomial or cumulative logit model".into(),
        )),
    }
}

/// One reported disparity coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityRow {
    pub group: String,
    pub contrast: String,
    pub estimate: f64,
    pub se: Option<f64>,
}

/// Per-group effect table from a fitted latent regression: one row per
/// covariate per trait. Negative estimates mean lower quality for that group
/// relative to the reference.
pub fn disparity_from_latent_regression(fit: &FitResult) -> Result<Vec<DisparityRow>> {
    let Some(StructuralModel::LatentRegression { coef, covariate_names }) = &fit.model.structural
    else {
        return Err(Error::InvalidParameter(
            "fit does not contain a latent-regression structural model".into(),
        ));
    };
    let se = StructuralSes::collect(fit);
    let mut rows = Vec::new();
    for (j, name) in covariate_names.iter().enumerate() {
        for (s, value) in coef[j].iter().enumerate() {
            rows.push(DisparityRow {
                group: name.clone(),
                contrast: format!("trait {}", s + 1),
                estimate: *value,
                se: se.lookup(&ParamRef::LatRegCoef { cov: j, dim: s }),
            });
        }
    }
    Ok(rows)
}

/// Per-group log-odds table from a fitted multinomial class model: one row
/// per covariate per contrast "class c vs 1". Intercept rows carry the
/// reference group's own log-odds.
pub fn disparity_from_class_model(fit: &FitResult) -> Result<Vec<DisparityRow>> {
    let Some(StructuralModel::MultinomialLogit { coef, covariate_names }) = &fit.model.structural
    else {
        return Err(Error::InvalidParameter(
            "fit does not contain a multinomial-logit structural model".into(),
        ));
    };
    let se = StructuralSes::collect(fit);
    let mut rows = Vec::new();
    for (j, name) in covariate_names.iter().enumerate() {
        for (ci, row) in coef.iter().enumerate() {
            rows.push(DisparityRow {
                group: name.clone(),
                contrast: format!("class {} vs 1", ci + 2),
                estimate: row[j],
                se: se.lookup(&ParamRef::MnlCoef { class: ci + 2, cov: j }),
            });
        }
    }
    Ok(rows)
}

struct StructuralSes<'a> {
    layout: ParamLayout,
    ses: Option<&'a [f64]>,
}

impl<'a> StructuralSes<'a> {
    fn collect(fit: &'a FitResult) -> Self {
        Self { layout: ParamLayout::for_model(&fit.model), ses: fit.std_errors.as_deref() }
    }

    fn lookup(&self, target: &ParamRef) -> Option<f64> {
        let ses = self.ses?;
        self.layout.position(target).map(|idx| ses[idx])
    }
}

// ---------------------------------------------------------------------------
// Weighted fits used by the EM M-steps. Rows are weighted observations
// (unique patterns with counts); class responsibilities enter as soft labels.
// ---------------------------------------------------------------------------

/// Exact M-step for the latent regression: per-trait weighted least squares
/// of posterior trait means on the design.
pub(crate) fn wls_latent_regression(
    design: &DMatrix<f64>,
    weights: &[f64],
    post_means: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let n = design.nrows();
    let q = design.ncols();
    let traits = post_means.first().map_or(0, Vec::len);
    let mut xtx = DMatrix::zeros(q, q);
    let mut xty = DMatrix::zeros(q, traits);
    for r in 0..n {
        let w = weights[r];
        for a in 0..q {
            for b in 0..q {
                xtx[(a, b)] += w * design[(r, a)] * design[(r, b)];
            }
            for s in 0..traits {
                xty[(a, s)] += w * design[(r, a)] * post_means[r][s];
            }
        }
    }
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::Numerical("singular design in latent regression update".into()))?;
    let sol = chol.solve(&xty);
    Ok((0..q).map(|a| (0..traits).map(|s| sol[(a, s)]).collect()).collect())
}

/// Weighted multinomial-logit maximization with soft class labels.
/// Returns updated `coef[c-2][cov]`.
pub(crate) fn fit_multinomial_weighted(
    design: &DMatrix<f64>,
    weights: &[f64],
    soft: &[Vec<f64>],
    init: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let n = design.nrows();
    let q = design.ncols();
    let cm1 = init.len();
    if cm1 == 0 {
        return Vec::new();
    }
    let x0: Vec<f64> = init.iter().flatten().cloned().collect();
    let eval = |x: &[f64]| -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let mut grad = vec![0.0; x.len()];
        for r in 0..n {
            let w = weights[r];
            let mut logits = Vec::with_capacity(cm1 + 1);
            logits.push(0.0);
            for c in 0..cm1 {
                let mut eta = 0.0;
                for j in 0..q {
                    eta += x[c * q + j] * design[(r, j)];
                }
                logits.push(eta);
            }
            let lse = logsumexp(&logits);
            for c in 0..=cm1 {
                value += w * soft[r][c] * (logits[c] - lse);
            }
            for c in 0..cm1 {
                let p = (logits[c + 1] - lse).exp();
                let resid = soft[r][c + 1] - p;
                for j in 0..q {
                    grad[c * q + j] += w * resid * design[(r, j)];
                }
            }
        }
        (value, grad)
    };
    let out = crate::math::newton_maximize(&x0, eval, 50, 1e-8);
    (0..cm1).map(|c| out.x[c * q..(c + 1) * q].to_vec()).collect()
}

/// Weighted cumulative-logit maximization with soft class labels, keeping
/// the intercepts strictly decreasing via a log-gap parameterization.
/// Returns `(intercepts, coef)`.
pub(crate) fn fit_cumulative_weighted(
    design: &DMatrix<f64>,
    weights: &[f64],
    soft: &[Vec<f64>],
    init_intercepts: &[f64],
    init_coef: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = design.nrows();
    let q = design.ncols();
    let cm1 = init_intercepts.len();
    // x = [phi_1, ln(phi_1 - phi_2), ..., coef...]
    let mut x0 = Vec::with_capacity(cm1 + q);
    x0.push(init_intercepts[0]);
    for k in 1..cm1 {
        x0.push((init_intercepts[k - 1] - init_intercepts[k]).max(1e-6).ln());
    }
    x0.extend_from_slice(init_coef);
    let unpack = |x: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut phi = Vec::with_capacity(cm1);
        phi.push(x[0]);
        for k in 1..cm1 {
            phi.push(phi[k - 1] - x[k].exp());
        }
        (phi, x[cm1..].to_vec())
    };
    let value_of = |x: &[f64]| -> f64 {
        let (phi, coef) = unpack(x);
        let mut value = 0.0;
        for r in 0..n {
            let eta: f64 = (0..q).map(|j| coef[j] * design[(r, j)]).sum();
            let mut exceed = Vec::with_capacity(cm1 + 2);
            exceed.push(1.0);
            for p in &phi {
                exceed.push(sigmoid(p + eta));
            }
            exceed.push(0.0);
            for c in 0..=cm1 {
                let pc = (exceed[c] - exceed[c + 1]).max(1e-300);
                value += weights[r] * soft[r][c] * pc.ln();
            }
        }
        value
    };
    let eval = |x: &[f64]| -> (f64, Vec<f64>) {
        let v = value_of(x);
        let mut grad = vec![0.0; x.len()];
        for k in 0..x.len() {
            let h = 1e-6 * (1.0 + x[k].abs());
            let mut xp = x.to_vec();
            xp[k] += h;
            let mut xm = x.to_vec();
            xm[k] -= h;
            grad[k] = (value_of(&xp) - value_of(&xm)) / (2.0 * h);
        }
        (v, grad)
    };
    let out = crate::math::newton_maximize(&x0, eval, 60, 1e-7);
    unpack(&out.x)
}

/// Design matrix of group indicators: one column per non-reference group in
/// first-appearance order, optionally preceded by an intercept column.
/// Returns the matrix and its column names.
pub fn group_design(
    groups: &[String],
    reference: &str,
    intercept: bool,
) -> Result<(DMatrix<f64>, Vec<String>)> {
    let mut levels: Vec<&str> = Vec::new();
    for g in groups {
        if g != reference && !levels.contains(&g.as_str()) {
            levels.push(g);
        }
    }
    if !groups.iter().any(|g| g == reference) {
        return Err(Error::Data(format!("reference group '{reference}' not present")));
    }
    let q = levels.len() + usize::from(intercept);
    let mut design = DMatrix::zeros(groups.len(), q);
    for (r, g) in groups.iter().enumerate() {
        let mut col = 0;
        if intercept {
            design[(r, 0)] = 1.0;
            col = 1;
        }
        for (k, lev) in levels.iter().enumerate() {
            if g == lev {
                design[(r, col + k)] = 1.0;
            }
        }
    }
    let mut names = Vec::with_capacity(q);
    if intercept {
        names.push(reference.to_string());
    }
    names.extend(levels.iter().map(|s| s.to_string()));
    Ok((design, names))
}

/// Log-likelihood contribution of one individual's class membership under a
/// multinomial logit, used by score-vector computations.
#[allow(dead_code)]
pub(crate) fn multinomial_logprob(coef: &[Vec<f64>], w: &[f64], class: usize) -> f64 {
    let mut logits = Vec::with_capacity(coef.len() + 1);
    logits.push(0.0);
    for row in coef {
        logits.push(row.iter().zip(w).map(|(c, x)| c * x).sum());
    }
    let lse = logsumexp(&logits);
    logits[class] - lse
}

#[allow(dead_code)]
pub(crate) fn binary_logit_loglik(eta: f64, y: bool) -> f64 {
    if y {
        -log1pexp(-eta)
    } else {
        -log1pexp(eta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mnl(coef: Vec<Vec<f64>>, q: usize) -> StructuralModel {
        let names = (0..q).map(|j| format!("w{j}")).collect();
        StructuralModel::multinomial_logit(coef, names).unwrap()
    }

    #[test]
    fn multinomial_zero_coefficients_are_uniform() {
        let m = mnl(vec![vec![0.0], vec![0.0]], 1);
        let p = prior_class_probs(&m, &[1.0]).unwrap();
        for v in &p {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_class_multinomial_is_logistic() {
        let m = mnl(vec![vec![0.4, -1.3]], 2);
        let w = [1.0, 2.0];
        let p = prior_class_probs(&m, &w).unwrap();
        let eta = 0.4 - 2.6;
        assert_abs_diff_eq!(p[1], sigmoid(eta), epsilon = 1e-12);
        assert_abs_diff_eq!(p[0] + p[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reference_intercepts_reproduce_reported_shares() {
        // Intercept-only design: class shares are the intercept softmax.
        let m = mnl(vec![vec![0.95], vec![2.01]], 1);
        let p = prior_class_probs(&m, &[1.0]).unwrap();
        let denom = 1.0 + 0.95_f64.exp() + 2.01_f64.exp();
        assert_abs_diff_eq!(p[0], 1.0 / denom, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.95_f64.exp() / denom, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 2.01_f64.exp() / denom, epsilon = 1e-12);
        // Shares land near (0.09, 0.23, 0.68); mostly a sanity check that the
        // softmax of the intercepts is what gets reported for the reference.
        assert!((p[0] - 0.0905).abs() < 5e-4);
        assert!((p[1] - 0.2340).abs() < 5e-4);
        assert!((p[2] - 0.6754).abs() < 5e-4);
    }

    #[test]
    fn simplex_invariant_many_draws() {
        use rand::Rng;
        let mut rng = crate::rng::derive_rng(11, "structural-simplex");
        for _ in 0..100 {
            let c: usize = rng.random_range(2..5);
            let q: usize = rng.random_range(1..4);
            let coef: Vec<Vec<f64>> = (0..c - 1)
                .map(|_| (0..q).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let m = mnl(coef, q);
            let w: Vec<f64> = (0..q).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = prior_class_probs(&m, &w).unwrap();
            let sum: f64 = p.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn shifting_multinomial_coefficients_is_not_a_symmetry() {
        // Class 1 is pinned, so adding a constant to every class-c coefficient
        // block changes the probabilities.
        let base = mnl(vec![vec![0.5], vec![-0.25]], 1);
        let shifted = mnl(vec![vec![1.5], vec![0.75]], 1);
        let p0 = prior_class_probs(&base, &[1.0]).unwrap();
        let p1 = prior_class_probs(&shifted, &[1.0]).unwrap();
        assert!((p0[0] - p1[0]).abs() > 1e-3);
    }

    #[test]
    fn cumulative_logit_probabilities_are_coherent_and_monotone() {
        let m = StructuralModel::cumulative_logit(
            vec![1.2, -0.4, -1.8],
            vec![0.7],
            vec!["black".into()],
        )
        .unwrap();
        for &w in &[-2.0, 0.0, 0.5, 3.0] {
            let p = prior_class_probs(&m, &[w]).unwrap();
            let sum: f64 = p.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(p.iter().all(|v| *v > 0.0));
            // P(class > c) non-increasing in c.
            let mut exceed: Vec<f64> = Vec::new();
            let mut acc = 0.0;
            for v in p.iter().rev() {
                acc += v;
                exceed.push(acc);
            }
            exceed.reverse();
            for pair in exceed.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12);
            }
        }
    }

    #[test]
    fn unordered_cumulative_intercepts_rejected() {
        let err = StructuralModel::cumulative_logit(vec![-1.0, 0.5], vec![], vec![]);
        assert!(err.is_err());
    }

    #[test]
    fn group_design_reference_coding() {
        let groups: Vec<String> =
            ["white", "black", "latinx", "black"].iter().map(|s| s.to_string()).collect();
        let (design, names) = group_design(&groups, "white", true).unwrap();
        assert_eq!(names, vec!["white", "black", "latinx"]);
        assert_eq!(design.nrows(), 4);
        assert_eq!(design[(0, 0)], 1.0);
        assert_eq!(design[(1, 1)], 1.0);
        assert_eq!(design[(2, 2)], 1.0);
        assert_eq!(design[(3, 1)], 1.0);
        assert!(group_design(&groups, "asian", true).is_err());
    }

    #[test]
    fn weighted_multinomial_recovers_hard_label_mle() {
        // Two covariate patterns, hard labels; compare against the
        // closed-form saturated solution.
        let design = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let weights = [30.0, 70.0, 60.0, 40.0];
        let soft = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ];
        let coef = fit_multinomial_weighted(&design, &weights, &soft, &[vec![0.0, 0.0]]);
        // P(class 2 | w=0) = 0.7, P(class 2 | w=1) = 0.4.
        let int = coef[0][0];
        let slope = coef[0][1];
        assert_abs_diff_eq!(sigmoid(int), 0.7, epsilon = 1e-6);
        assert_abs_diff_eq!(sigmoid(int + slope), 0.4, epsilon = 1e-6);
    }
}
