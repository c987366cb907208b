//! Individual-level quality summaries: the observed-score pipeline
//! (opportunity scores, naive disparity, covariate-adjusted regression),
//! EAP trait estimates, MAP class assignment and group-level class
//! distributions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ScoredResponses;
use crate::math::logsumexp;
use crate::model::{conditional_loglik, LatentSpec, ModelSpec, ResponseMatrix};
use crate::quadrature::QuadratureRule;
use crate::structural::{prior_class_probs, StructuralModel};
use crate::{Error, Result};

/// Observed (opportunity) scores with their standardization.
///
/// The spread divides by N, not N-1, so the standardized scores have mean 0
/// and root-mean-square exactly 1 by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedScores {
    /// Ids of the scored individuals (those with at least one eligible item).
    pub ids: Vec<String>,
    /// Opportunity score: mean numeric score over eligible items.
    pub opportunity: Vec<f64>,
    /// Standardized score.
    pub z: Vec<f64>,
    /// Cohort mean of the opportunity scores.
    pub mean: f64,
    /// Divide-by-N spread used for standardization.
    pub spread: f64,
    /// Ids excluded because they were eligible for no items.
    pub excluded: Vec<String>,
}

/// Opportunity scores and standardized scores for a numerically scored
/// cohort. Individuals eligible for nothing are excluded with a diagnostic;
/// a zero spread (no variation at all) is an error because the standardized
/// score is undefined.
pub fn opportunity_scores(scored: &ScoredResponses) -> Result<ObservedScores> {
    let mut ids = Vec::new();
    let mut opportunity = Vec::new();
    let mut excluded = Vec::new();
    for j in 0..scored.n() {
        let row = scored.row(j);
        let mut sum = 0.0;
        let mut count = 0usize;
        for v in row {
            if !v.is_nan() {
                sum += v;
                count += 1;
            }
        }
        if count == 0 {
            excluded.push(scored.ids[j].clone());
        } else {
            ids.push(scored.ids[j].clone());
            opportunity.push(sum / count as f64);
        }
    }
    if opportunity.is_empty() {
        return Err(Error::Data("no individual has any eligible item".into()));
    }
    let n = opportunity.len() as f64;
    let mean = opportunity.iter().sum::<f64>() / n;
    let spread = (opportunity.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
    if spread == 0.0 {
        return Err(Error::Numerical(
            "opportunity scores have zero spread; standardized scores undefined".into(),
        ));
    }
    let z = opportunity.iter().map(|y| (y - mean) / spread).collect();
    Ok(ObservedScores { ids, opportunity, z, mean, spread, excluded })
}

/// Mean standardized score among the indicated group minus the mean among
/// the rest.
pub fn naive_disparity(z: &[f64], minority: &[bool]) -> Result<f64> {
    if z.len() != minority.len() {
        return Err(Error::DimensionMismatch("indicator length must match scores".into()));
    }
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (zi, &m) in z.iter().zip(minority) {
        if m {
            s1 += zi;
            n1 += 1;
        } else {
            s0 += zi;
            n0 += 1;
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(Error::Data("both groups must be non-empty".into()));
    }
    Ok(s1 / n1 as f64 - s0 / n0 as f64)
}

/// One coefficient of the observed-score regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

/// Ordinary least squares of the standardized score on an intercept, the
/// race/ethnicity design `w` and optional health-status design `v`.
pub fn common_regression(
    z: &[f64],
    w: (&DMatrix<f64>, &[String]),
    v: Option<(&DMatrix<f64>, &[String])>,
) -> Result<Vec<CoefRow>> {
    let n = z.len();
    let (wm, wnames) = w;
    if wm.nrows() != n {
        return Err(Error::DimensionMismatch("design rows must match scores".into()));
    }
    let vcols = v.map_or(0, |(m, _)| m.ncols());
    if let Some((vm, _)) = v {
        if vm.nrows() != n {
            return Err(Error::DimensionMismatch("design rows must match scores".into()));
        }
    }
    let p = 1 + wm.ncols() + vcols;
    if n <= p {
        return Err(Error::Data(format!("{n} observations for {p} coefficients")));
    }
    let mut x = DMatrix::zeros(n, p);
    for r in 0..n {
        x[(r, 0)] = 1.0;
        for c in 0..wm.ncols() {
            x[(r, 1 + c)] = wm[(r, c)];
        }
        if let Some((vm, _)) = v {
            for c in 0..vm.ncols() {
                x[(r, 1 + wm.ncols() + c)] = vm[(r, c)];
            }
        }
    }
    let y = DVector::from_column_slice(z);
    let xtx = x.transpose() * &x;
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::Numerical("rank-deficient regression design".into()))?;
    let beta = chol.solve(&(x.transpose() * &y));
    let resid = &y - &x * &beta;
    let sigma2 = resid.dot(&resid) / (n - p) as f64;
    let cov = chol.inverse() * sigma2;
    let mut names = vec!["intercept".to_string()];
    names.extend(wnames.iter().cloned());
    if let Some((_, vnames)) = v {
        names.extend(vnames.iter().cloned());
    }
    Ok(names
        .into_iter()
        .enumerate()
        .map(|(k, name)| CoefRow { name, estimate: beta[k], se: cov[(k, k)].sqrt() })
        .collect())
}

/// Posterior trait means for one response pattern under a Normal-trait
/// model. `from_prior` marks individuals with no eligible responses, whose
/// EAP is just the prior mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitPosterior {
    pub means: Vec<f64>,
    pub from_prior: bool,
}

/// Expected a posteriori trait estimate:
/// `E(theta | y) = sum_q node_q w_q L(y | node_q) / sum_q w_q L(y | node_q)`,
/// computed in the log domain.
pub fn eap(
    responses: &[i16],
    model: &ModelSpec,
    design_row: Option<&[f64]>,
    rule: &QuadratureRule,
) -> Result<TraitPosterior> {
    if !matches!(model.latent, LatentSpec::Normal { .. }) {
        return Err(Error::InvalidParameter("EAP requires a Normal-trait model".into()));
    }
    let dims = model.dims();
    if rule.dims() != dims {
        return Err(Error::DimensionMismatch("rule dimensions must match the model".into()));
    }
    let offset: Option<Vec<f64>> = match (&model.structural, design_row) {
        (Some(m @ StructuralModel::LatentRegression { .. }), Some(w)) => Some(m.latent_offset(w)?),
        (Some(StructuralModel::LatentRegression { .. }), None) => {
            return Err(Error::InvalidParameter(
                "structural model present but no design row supplied".into(),
            ));
        }
        _ => None,
    };
    let empty = responses.iter().all(|&c| c == crate::model::MISSING);
    if empty {
        let means = offset.unwrap_or_else(|| vec![0.0; dims]);
        return Ok(TraitPosterior { means, from_prior: true });
    }
    let mut terms = Vec::with_capacity(rule.len());
    let mut thetas = Vec::with_capacity(rule.len());
    for q in 0..rule.len() {
        let node = rule.node(q);
        let theta: Vec<f64> = match &offset {
            Some(off) => node.iter().zip(off).map(|(n, o)| n + o).collect(),
            None => node.to_vec(),
        };
        terms.push(rule.log_weight(q) + conditional_loglik(responses, &model.items, &theta));
        thetas.push(theta);
    }
    let lse = logsumexp(&terms);
    if !lse.is_finite() {
        return Err(Error::Numerical("posterior mass underflowed for a pattern".into()));
    }
    let mut means = vec![0.0; dims];
    for (t, theta) in terms.iter().zip(&thetas) {
        let w = (t - lse).exp();
        for (m, v) in means.iter_mut().zip(theta) {
            *m += w * v;
        }
    }
    Ok(TraitPosterior { means, from_prior: false })
}

/// EAPs for every individual.
pub fn eap_all(
    data: &ResponseMatrix,
    model: &ModelSpec,
    design: Option<&DMatrix<f64>>,
    rule: &QuadratureRule,
) -> Result<Vec<TraitPosterior>> {
    let results: Vec<Result<TraitPosterior>> = crate::par::par_map_range(data.n(), |j| {
        let row_design: Option<Vec<f64>> =
            design.map(|w| (0..w.ncols()).map(|c| w[(j, c)]).collect());
        eap(data.row(j), model, row_design.as_deref(), rule)
    });
    results.into_iter().collect()
}

/// Class posterior and MAP assignment for one pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPosterior {
    pub probs: Vec<f64>,
    /// MAP class (0-based); ties break to the lowest index.
    pub map_class: usize,
}

/// Posterior class probabilities (prior times conditional likelihood,
/// normalized) and the MAP class.
pub fn class_posteriors_and_map(
    responses: &[i16],
    model: &ModelSpec,
    design_row: Option<&[f64]>,
) -> Result<ClassPosterior> {
    let LatentSpec::Discrete { support, prior } = &model.latent else {
        return Err(Error::InvalidParameter("class posteriors require a discrete latent".into()));
    };
    let prior_j: Vec<f64> = match (&model.structural, design_row) {
        (Some(m), Some(w)) if !matches!(m, StructuralModel::LatentRegression { .. }) => {
            prior_class_probs(m, w)?
        }
        (Some(m), None) if !matches!(m, StructuralModel::LatentRegression { .. }) => {
            return Err(Error::InvalidParameter(
                "structural model present but no design row supplied".into(),
            ));
        }
        _ => prior.clone(),
    };
    let terms: Vec<f64> = support
        .iter()
        .zip(&prior_j)
        .map(|(xi, p)| {
            if *p > 0.0 {
                p.ln() + conditional_loglik(responses, &model.items, xi)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let lse = logsumexp(&terms);
    if !lse.is_finite() {
        return Err(Error::Numerical("posterior mass underflowed for a pattern".into()));
    }
    let probs: Vec<f64> = terms.iter().map(|t| (t - lse).exp()).collect();
    let mut map_class = 0;
    for (c, p) in probs.iter().enumerate() {
        if *p > probs[map_class] {
            map_class = c;
        }
    }
    Ok(ClassPosterior { probs, map_class })
}

/// Class posteriors for every individual.
pub fn class_posteriors_all(
    data: &ResponseMatrix,
    model: &ModelSpec,
    design: Option<&DMatrix<f64>>,
) -> Result<Vec<ClassPosterior>> {
    let results: Vec<Result<ClassPosterior>> = crate::par::par_map_range(data.n(), |j| {
        let row_design: Option<Vec<f64>> =
            design.map(|w| (0..w.ncols()).map(|c| w[(j, c)]).collect());
        class_posteriors_and_map(data.row(j), model, row_design.as_deref())
    });
    results.into_iter().collect()
}

/// Per-group mean class probabilities and MAP shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupClassRow {
    pub group: String,
    /// 1-based class number.
    pub class: usize,
    pub mean_prob: f64,
    pub map_share: f64,
    pub n: usize,
}

/// Summarize class membership by group: for each group the mean posterior
/// probability of each class and the share of MAP assignments.
pub fn class_distribution_by_group(
    posteriors: &[ClassPosterior],
    groups: &[String],
) -> Result<Vec<GroupClassRow>> {
    if posteriors.len() != groups.len() {
        return Err(Error::DimensionMismatch("one group label per posterior required".into()));
    }
    if posteriors.is_empty() {
        return Ok(Vec::new());
    }
    let n_classes = posteriors[0].probs.len();
    let mut levels: Vec<String> = groups.to_vec();
    levels.sort();
    levels.dedup();
    let mut rows = Vec::new();
    for level in levels {
        let members: Vec<usize> = (0..groups.len()).filter(|&j| groups[j] == level).collect();
        let n = members.len();
        for c in 0..n_classes {
            let mean_prob =
                members.iter().map(|&j| posteriors[j].probs[c]).sum::<f64>() / n as f64;
            let map_share =
                members.iter().filter(|&&j| posteriors[j].map_class == c).count() as f64
                    / n as f64;
            rows.push(GroupClassRow { group: level.clone(), class: c + 1, mean_prob, map_share, n });
        }
    }
    Ok(rows)
}
