//! Model-fit statistics, dimensionality tests, local-independence checks,
//! factor rotation, latent-trait normality data and held-out validation.

mod m2;
mod rotation;

pub use m2::{rmsea_m2, M2Report};
pub use rotation::{slopes_to_loadings, varimax_criterion, varimax_rotate, LoadingMatrix};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::estimation::{
    em_fit_latent_class, standard_errors, FitOptions, FitResult, LcStructural,
};
use crate::model::{LatentSpec, ModelSpec, ResponseMatrix};
use crate::quadrature::QuadratureRule;
use crate::scoring::{class_posteriors_all, eap_all, ClassPosterior};
use crate::{Error, Result};

/// Summary fit statistics of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStatistics {
    pub loglik: f64,
    pub n_params: usize,
    pub n_individuals: usize,
    pub aic: f64,
    pub bic: f64,
    pub rmsea: Option<f64>,
    pub m2: Option<f64>,
    pub m2_df: Option<usize>,
}

impl FitStatistics {
    pub fn from_fit(fit: &FitResult) -> Self {
        let (aic, bic) = information_criteria(fit.loglik, fit.n_params, fit.n_used);
        Self {
            loglik: fit.loglik,
            n_params: fit.n_params,
            n_individuals: fit.n_used,
            aic,
            bic,
            rmsea: None,
            m2: None,
            m2_df: None,
        }
    }
}

/// `AIC = -2 loglik + 2 p`, `BIC = -2 loglik + p ln(N)`.
pub fn information_criteria(loglik: f64, n_params: usize, n: usize) -> (f64, f64) {
    let aic = -2.0 * loglik + 2.0 * n_params as f64;
    let bic = -2.0 * loglik + n_params as f64 * (n as f64).ln();
    (aic, bic)
}

/// Likelihood-ratio test of nested fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// `-2 (loglik_restricted - loglik_full)` on `dof = delta n_params`. A
/// statistic below `-1e-6` violates nesting and errors; small negative
/// noise clamps to zero.
pub fn likelihood_ratio_test(restricted: &FitResult, full: &FitResult) -> Result<LrtResult> {
    if full.n_params <= restricted.n_params {
        return Err(Error::InvalidParameter(format!(
            "models are not nested: full has {} parameters, restricted {}",
            full.n_params, restricted.n_params
        )));
    }
    let dof = full.n_params - restricted.n_params;
    let statistic = -2.0 * (restricted.loglik - full.loglik);
    if statistic < -1e-6 {
        return Err(Error::InvalidParameter(format!(
            "restricted fit has higher likelihood ({} vs {}); nesting violated",
            restricted.loglik, full.loglik
        )));
    }
    let statistic = statistic.max(0.0);
    let p_value = if statistic == 0.0 {
        1.0
    } else {
        let chi = ChiSquared::new(dof as f64).expect("dof >= 1");
        1.0 - chi.cdf(statistic)
    };
    Ok(LrtResult { statistic, dof, p_value })
}

/// Pairwise correlations of observed-minus-expected item scores over the
/// individuals eligible for both items, the expected score taken under each
/// individual's posterior. Entries with fewer than 2 joint observations (or
/// zero variance) are NaN.
pub fn residual_item_correlations(
    data: &ResponseMatrix,
    fit: &FitResult,
    design: Option<&DMatrix<f64>>,
    rule: Option<&QuadratureRule>,
) -> Result<Vec<Vec<f64>>> {
    let n = data.n();
    let n_items = data.n_items();
    if matches!(fit.model.latent, LatentSpec::Normal { .. }) && rule.is_none() {
        return Err(Error::InvalidParameter(
            "Normal-trait residuals need a quadrature rule".into(),
        ));
    }
    let rows: Vec<Result<Vec<f64>>> = crate::par::par_map_range(n, |j| {
        expected_item_scores(data.row(j), &fit.model, design, rule, j)
    });
    let expected: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    let mut corr = vec![vec![f64::NAN; n_items]; n_items];
    for a in 0..n_items {
        corr[a][a] = 1.0;
        for b in (a + 1)..n_items {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for j in 0..n {
                if let (Some(ya), Some(yb)) = (data.response(j, a), data.response(j, b)) {
                    xs.push(f64::from(ya) - expected[j][a]);
                    ys.push(f64::from(yb) - expected[j][b]);
                }
            }
            let value = pearson(&xs, &ys);
            corr[a][b] = value;
            corr[b][a] = value;
        }
    }
    Ok(corr)
}

/// Posterior-expected numeric scores of every item for one pattern.
fn expected_item_scores(
    row: &[i16],
    model: &ModelSpec,
    design: Option<&DMatrix<f64>>,
    rule: Option<&QuadratureRule>,
    j: usize,
) -> Result<Vec<f64>> {
    let n_items = model.items.len();
    match &model.latent {
        LatentSpec::Normal { .. } => {
            let rule = rule.expect("checked by caller");
            let offset = crate::model::structural_offset(model, design, j);
            let mut terms = Vec::with_capacity(rule.len());
            let mut thetas = Vec::with_capacity(rule.len());
            for q in 0..rule.len() {
                let node = rule.node(q);
                let theta: Vec<f64> = match &offset {
                    Some(off) => node.iter().zip(off).map(|(n, o)| n + o).collect(),
                    None => node.to_vec(),
                };
                terms.push(
                    rule.log_weight(q)
                        + crate::model::conditional_loglik(row, &model.items, &theta),
                );
                thetas.push(theta);
            }
            let lse = crate::math::logsumexp(&terms);
            if !lse.is_finite() {
                return Err(Error::Numerical(format!("pattern {j}: posterior underflow")));
            }
            let mut out = vec![0.0; n_items];
            for (t, theta) in terms.iter().zip(&thetas) {
                let w = (t - lse).exp();
                for (i, o) in out.iter_mut().enumerate() {
                    *o += w * model.items[i].expected_score(theta);
                }
            }
            Ok(out)
        }
        LatentSpec::Discrete { support, prior } => {
            let prior_j = crate::model::class_prior(model, prior, design, j);
            let terms: Vec<f64> = support
                .iter()
                .zip(&prior_j)
                .map(|(xi, p)| {
                    if *p > 0.0 {
                        p.ln() + crate::model::conditional_loglik(row, &model.items, xi)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let lse = crate::math::logsumexp(&terms);
            if !lse.is_finite() {
                return Err(Error::Numerical(format!("pattern {j}: posterior underflow")));
            }
            let mut out = vec![0.0; n_items];
            for (t, xi) in terms.iter().zip(support) {
                let w = (t - lse).exp();
                for (i, o) in out.iter_mut().enumerate() {
                    *o += w * model.items[i].expected_score(xi);
                }
            }
            Ok(out)
        }
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx).powi(2);
        syy += (yi - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

/// Sorted estimates paired with standard-Normal quantiles at plotting
/// positions `(i - 0.5) / n`.
pub fn qq_data(estimates: &[f64]) -> Result<Vec<(f64, f64)>> {
    if estimates.len() < 10 {
        return Err(Error::Data(format!(
            "QQ data needs at least 10 estimates, got {}",
            estimates.len()
        )));
    }
    let mut sorted = estimates.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, emp)| {
            let p = (i as f64 + 0.5) / n as f64;
            (std_normal.inverse_cdf(p), emp)
        })
        .collect())
}

/// One row of a class-count scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScanRow {
    pub n_classes: usize,
    pub stats: FitStatistics,
    pub converged: bool,
}

/// Result of scanning a class-count range.
#[derive(Debug)]
pub struct ClassScan {
    pub rows: Vec<ClassScanRow>,
    pub fits: Vec<FitResult>,
    /// Class count with the lowest BIC.
    pub best_bic: usize,
    /// Class count with the lowest AIC.
    pub best_aic: usize,
}

/// Fit one latent-class model per class count and tabulate fit statistics;
/// the recommended class count minimizes BIC (AIC also reported).
pub fn class_scan(
    data: &ResponseMatrix,
    class_range: std::ops::RangeInclusive<usize>,
    allocation: &[usize],
    opts: &FitOptions,
) -> Result<ClassScan> {
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for c in class_range {
        let fit = em_fit_latent_class(data, c, allocation, LcStructural::None, opts)?;
        rows.push(ClassScanRow {
            n_classes: c,
            stats: FitStatistics::from_fit(&fit),
            converged: fit.converged,
        });
        fits.push(fit);
    }
    if rows.is_empty() {
        return Err(Error::InvalidParameter("empty class range".into()));
    }
    let best = |key: fn(&FitStatistics) -> f64| -> usize {
        rows.iter()
            .min_by(|a, b| key(&a.stats).partial_cmp(&key(&b.stats)).unwrap())
            .map(|r| r.n_classes)
            .unwrap()
    };
    let best_bic = best(|s| s.bic);
    let best_aic = best(|s| s.aic);
    Ok(ClassScan { rows, fits, best_bic, best_aic })
}

/// Held-out validation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    /// Normal-trait models: mean EAP (first trait) among held-out successes
    /// minus failures.
    pub eap_difference: Option<f64>,
    /// Latent-class models: held-out success rate per class (MAP
    /// assignment), 1-based class order.
    pub class_success_rates: Option<Vec<f64>>,
    /// The held-out item varies; rates/differences are undefined otherwise.
    pub heldout_varies: bool,
    pub n_heldout: usize,
}

/// Correlate the fitted construct with a held-out item: positive EAP
/// differences (Normal traits) or higher success rates in higher classes
/// support validity. The summary deliberately represents non-monotone
/// patterns as-is.
pub fn validate_heldout(
    data: &ResponseMatrix,
    fit: &FitResult,
    design: Option<&DMatrix<f64>>,
    rule: Option<&QuadratureRule>,
    heldout: &[i16],
) -> Result<ValidationSummary> {
    if heldout.len() != data.n() {
        return Err(Error::DimensionMismatch(
            "held-out responses must cover every individual".into(),
        ));
    }
    let observed: Vec<(usize, u16)> = heldout
        .iter()
        .enumerate()
        .filter_map(|(j, &c)| (c >= 0).then_some((j, c as u16)))
        .collect();
    let n_heldout = observed.len();
    let max_cat = observed.iter().map(|&(_, c)| c).max().unwrap_or(0);
    let varies = observed.iter().any(|&(_, c)| c != observed[0].1);
    if !varies {
        return Ok(ValidationSummary {
            eap_difference: None,
            class_success_rates: None,
            heldout_varies: false,
            n_heldout,
        });
    }
    // Success = highest observed category.
    let success: Vec<(usize, bool)> =
        observed.iter().map(|&(j, c)| (j, c == max_cat)).collect();
    match &fit.model.latent {
        LatentSpec::Normal { .. } => {
            let rule = rule.ok_or_else(|| {
                Error::InvalidParameter("Normal-trait validation needs a quadrature rule".into())
            })?;
            let posts = eap_all(data, &fit.model, design, rule)?;
            let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
            for &(j, hit) in &success {
                if hit {
                    s1 += posts[j].means[0];
                    n1 += 1;
                } else {
                    s0 += posts[j].means[0];
                    n0 += 1;
                }
            }
            Ok(ValidationSummary {
                eap_difference: Some(s1 / n1 as f64 - s0 / n0 as f64),
                class_success_rates: None,
                heldout_varies: true,
                n_heldout,
            })
        }
        LatentSpec::Discrete { support, .. } => {
            let posts: Vec<ClassPosterior> = class_posteriors_all(data, &fit.model, design)?;
            let c = support.len();
            let mut hits = vec![0usize; c];
            let mut totals = vec![0usize; c];
            for &(j, hit) in &success {
                totals[posts[j].map_class] += 1;
                if hit {
                    hits[posts[j].map_class] += 1;
                }
            }
            let rates = hits
                .iter()
                .zip(&totals)
                .map(|(&h, &t)| if t > 0 { h as f64 / t as f64 } else { f64::NAN })
                .collect();
            Ok(ValidationSummary {
                eap_difference: None,
                class_success_rates: Some(rates),
                heldout_varies: true,
                n_heldout,
            })
        }
    }
}

/// Attach OPG standard errors to a fit.
pub fn with_standard_errors(
    mut fit: FitResult,
    data: &ResponseMatrix,
    design: Option<&DMatrix<f64>>,
) -> Result<FitResult> {
    let (ses, warnings) = standard_errors(&fit, data, design)?;
    fit.std_errors = Some(ses);
    fit.warnings.extend(warnings);
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::FitOptions;
    use crate::model::{ItemParams, ItemSpec};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn information_criteria_match_published_rows() {
        // 3-class unidimensional row.
        let (aic, bic) = information_criteria(-65675.85, 19, 24000);
        assert!((aic - 131389.7).abs() < 0.1, "aic {aic}");
        assert!((bic - 131543.3).abs() < 0.1, "bic {bic}");
        // Two-dimensional 3-class row.
        let (aic, bic) = information_criteria(-65505.40, 20, 24000);
        assert!((aic - 131050.8).abs() < 0.1, "aic {aic}");
        assert!((bic - 131212.5).abs() < 0.1, "bic {bic}");
        // Degenerate inputs.
        let (aic, bic) = information_criteria(0.0, 0, 1);
        assert_eq!((aic, bic), (0.0, 0.0));
    }

    fn fake_fit(loglik: f64, n_params: usize) -> FitResult {
        FitResult {
            model: ModelSpec::new(
                vec![ItemParams::latent_class(1.0, 0.0, 0)],
                LatentSpec::discrete(vec![vec![0.0]], vec![1.0]).unwrap(),
            ),
            loglik,
            n_params,
            trace: vec![loglik],
            std_errors: None,
            converged: true,
            n_used: 24000,
            warnings: vec![],
            options: FitOptions::default(),
        }
    }

    #[test]
    fn lrt_matches_published_statistics() {
        let r = likelihood_ratio_test(&fake_fit(-65675.85, 19), &fake_fit(-65505.40, 20)).unwrap();
        assert!((r.statistic - 340.9).abs() < 0.1, "stat {}", r.statistic);
        assert_eq!(r.dof, 1);
        assert!(r.p_value < 1e-10);
        let r = likelihood_ratio_test(&fake_fit(-65673.74, 21), &fake_fit(-65084.60, 22)).unwrap();
        assert!((r.statistic - 1178.3).abs() < 0.11, "stat {}", r.statistic);
    }

    #[test]
    fn lrt_identical_fits_and_violations() {
        let r = likelihood_ratio_test(&fake_fit(-100.0, 5), &fake_fit(-100.0, 7)).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(likelihood_ratio_test(&fake_fit(-100.0, 7), &fake_fit(-100.0, 5)).is_err());
        assert!(likelihood_ratio_test(&fake_fit(-90.0, 5), &fake_fit(-100.0, 7)).is_err());
    }

    #[test]
    fn qq_data_shapes() {
        // Constant estimates: flat empirical column.
        let flat = qq_data(&vec![0.7; 50]).unwrap();
        assert!(flat.iter().all(|&(_, e)| e == 0.7));
        assert!(qq_data(&[0.0; 9]).is_err());
        // Normal draws track the diagonal away from the tails.
        let mut rng = crate::rng::derive_rng(3, "qq");
        let draws: Vec<f64> = (0..10_000)
            .map(|_| {
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let pairs = qq_data(&draws).unwrap();
        // Extreme order statistics fluctuate at a slower rate; the
        // diagnostic value of the plot is in the body of the distribution.
        let interior_dev = pairs
            .iter()
            .filter(|&&(t, _)| t.abs() < 2.0)
            .map(|&(t, e)| (t - e).abs())
            .fold(0.0f64, f64::max);
        assert!(interior_dev < 0.1, "interior deviation {interior_dev}");
        // Strongly bimodal estimates bow away from the diagonal.
        let bimodal: Vec<f64> =
            (0..10_000).map(|i| if i % 2 == 0 { -2.0 } else { 2.0 }).collect();
        let pairs = qq_data(&bimodal).unwrap();
        let max_dev = pairs.iter().map(|&(t, e)| (t - e).abs()).fold(0.0f64, f64::max);
        assert!(max_dev > 0.3, "bimodal deviation {max_dev}");
    }

    #[test]
    fn residual_correlations_detect_duplicated_item() {
        // Simulate a latent-class structure, duplicate item 0 as item 3.
        let mut rng = crate::rng::derive_rng(9, "resid");
        let n = 3000;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let class = usize::from(rng.random::<f64>() < 0.5);
            let xi = if class == 0 { -1.2 } else { 1.2 };
            let draw = |rng: &mut rand_chacha::ChaCha8Rng, a: f64, d: f64| -> i16 {
                i16::from(rng.random::<f64>() < crate::math::sigmoid(a * xi + d))
            };
            let y0 = draw(&mut rng, 1.4, 0.0);
            let y1 = draw(&mut rng, 1.0, 0.3);
            let y2 = draw(&mut rng, 1.2, -0.3);
            rows.push(vec![y0, y1, y2, y0]);
        }
        let items = (0..4).map(|i| ItemSpec::binary(&format!("i{i}"), "")).collect();
        let ids = (0..n).map(|j| format!("p{j}")).collect();
        let data = ResponseMatrix::from_rows(items, ids, rows).unwrap();
        let fit = em_fit_latent_class(
            &data,
            2,
            &[0, 0, 0, 0],
            LcStructural::None,
            &FitOptions { n_random_starts: 3, seed: 4, ..FitOptions::default() },
        )
        .unwrap();
        let corr = residual_item_correlations(&data, &fit, None, None).unwrap();
        assert_abs_diff_eq!(corr[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(corr[1][2], corr[2][1], epsilon = 1e-12);
        assert!(corr[0][3] > 0.5, "duplicated pair correlation {}", corr[0][3]);
    }

    #[test]
    fn residual_correlations_small_under_local_independence() {
        // A realistic scale length: with few items the posterior conditions
        // too strongly on each item and Q3-style residuals are biased even
        // under the truth.
        let mut rng = crate::rng::derive_rng(19, "resid-null");
        let n = 5000;
        let n_items = 12usize;
        let discs: Vec<f64> = (0..n_items).map(|i| 1.0 + 0.1 * (i % 5) as f64).collect();
        let inters: Vec<f64> = (0..n_items).map(|i| 0.2 * (i as f64 - 5.5)).collect();
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let class = usize::from(rng.random::<f64>() < 0.5);
            let xi = if class == 0 { -1.5 } else { 1.5 };
            rows.push(
                discs
                    .iter()
                    .zip(&inters)
                    .map(|(a, d)| {
                        i16::from(rng.random::<f64>() < crate::math::sigmoid(a * xi + d))
                    })
                    .collect::<Vec<i16>>(),
            );
        }
        let items = (0..n_items).map(|i| ItemSpec::binary(&format!("i{i}"), "")).collect();
        let ids = (0..n).map(|j| format!("p{j}")).collect();
        let data = ResponseMatrix::from_rows(items, ids, rows).unwrap();
        let fit = em_fit_latent_class(
            &data,
            2,
            &vec![0; n_items],
            LcStructural::None,
            &FitOptions { n_random_starts: 2, seed: 8, ..FitOptions::default() },
        )
        .unwrap();
        let corr = residual_item_correlations(&data, &fit, None, None).unwrap();
        let mut total = 0.0;
        let mut count = 0;
        for a in 0..n_items {
            for b in (a + 1)..n_items {
                total += corr[a][b].abs();
                count += 1;
            }
        }
        let mean_abs = total / f64::from(count);
        assert!(mean_abs < 0.05, "mean |off-diagonal| {mean_abs}");
    }

    #[test]
    fn validation_represents_nonmonotone_class_rates() {
        // Three classes with fabricated rates 39% / 8% / 55%.
        let items: Vec<ItemSpec> =
            (0..4).map(|i| ItemSpec::binary(&format!("i{i}"), "")).collect();
        let params: Vec<ItemParams> =
            (0..4).map(|_| ItemParams::latent_class(3.0, 0.0, 0)).collect();
        let latent = LatentSpec::discrete(
            vec![vec![-2.0], vec![0.0], vec![2.0]],
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        )
        .unwrap();
        let model = ModelSpec::new(params, latent);
        let mut rng = crate::rng::derive_rng(5, "valid");
        let n = 3000;
        let mut rows = Vec::with_capacity(n);
        let mut heldout = Vec::with_capacity(n);
        for _ in 0..n {
            let class = rng.random_range(0..3usize);
            let xi = [-2.0, 0.0, 2.0][class];
            let row: Vec<i16> = (0..4)
                .map(|_| i16::from(rng.random::<f64>() < crate::math::sigmoid(3.0 * xi)))
                .collect();
            let rate = [0.39, 0.08, 0.55][class];
            heldout.push(i16::from(rng.random::<f64>() < rate));
            rows.push(row);
        }
        let ids = (0..n).map(|j| format!("p{j}")).collect();
        let data = ResponseMatrix::from_rows(items, ids, rows).unwrap();
        let fit = FitResult {
            model,
            loglik: 0.0,
            n_params: 0,
            trace: vec![],
            std_errors: None,
            converged: true,
            n_used: n,
            warnings: vec![],
            options: FitOptions::default(),
        };
        let summary = validate_heldout(&data, &fit, None, None, &heldout).unwrap();
        let rates = summary.class_success_rates.unwrap();
        // Classes are ordered by support here; rates track the fabricated
        // non-monotone pattern.
        assert!((rates[0] - 0.39).abs() < 0.06, "{rates:?}");
        assert!((rates[1] - 0.08).abs() < 0.06, "{rates:?}");
        assert!((rates[2] - 0.55).abs() < 0.06, "{rates:?}");
        // Constant held-out item flags.
        let constant = vec![1i16; n];
        let summary = validate_heldout(&data, &fit, None, None, &constant).unwrap();
        assert!(!summary.heldout_varies);
        assert!(summary.class_success_rates.is_none());
    }
}
