//! EM fitting of Normal-latent-trait models.

use nalgebra::DMatrix;

use super::items::{update_item, ItemObs};
use super::layout::ParamLayout;
use super::patterns::unique_patterns_grouped;
use super::{default_quad_points, FitOptions, FitResult};
use crate::math::logsumexp;
use crate::model::{
    conditional_loglik, IdentificationScheme, ItemParams, LatentSpec, ModelSpec, ResponseMatrix,
    SlopeConstraint, MISSING,
};
use crate::quadrature::{gauss_hermite_rule, qmc_rule, QuadratureRule};
use crate::structural::{wls_latent_regression, StructuralModel};
use crate::{Error, Result};

/// Fit a Normal-latent-trait model by EM over unique response patterns.
///
/// The E-step computes per-pattern posterior weights over quadrature nodes;
/// the M-step solves, per item, a weighted logistic / proportional-odds /
/// multinomial maximization with node values as fixed regressors. When a
/// latent-regression structural model is present its coefficients are
/// updated by weighted least squares of posterior trait means on the design.
///
/// Items with no response variation among eligible individuals are pinned at
/// their observed margins (slopes zero) and flagged in the warnings.
/// Non-convergence after `max_em_iters` flags `converged = false` rather
/// than erroring.
pub fn em_fit_normal(
    data: &ResponseMatrix,
    init: &ModelSpec,
    design: Option<&DMatrix<f64>>,
    opts: &FitOptions,
) -> Result<FitResult> {
    opts.validate()?;
    let LatentSpec::Normal { mean, cov } = &init.latent else {
        return Err(Error::InvalidParameter("em_fit_normal requires a Normal latent".into()));
    };
    if init.identification != IdentificationScheme::StandardizedTraits {
        return Err(Error::Unsupported(
            "Normal-trait fitting uses the standardized-traits identification".into(),
        ));
    }
    init.check_items(data.items())?;
    let dims = init.dims();
    match (&init.structural, design) {
        (Some(StructuralModel::LatentRegression { coef, .. }), Some(w)) => {
            if w.ncols() != coef.len() {
                return Err(Error::DimensionMismatch(format!(
                    "design has {} columns, structural model has {} covariates",
                    w.ncols(),
                    coef.len()
                )));
            }
            if w.nrows() != data.n() {
                return Err(Error::DimensionMismatch("design rows must match individuals".into()));
            }
            // An intercept column would fight the zero-mean identification.
            for c in 0..w.ncols() {
                let first = w[(0, c)];
                if (0..w.nrows()).all(|r| w[(r, c)] == first) && first != 0.0 {
                    return Err(Error::Identifiability(
                        "latent-regression design must not contain a constant column".into(),
                    ));
                }
            }
        }
        (Some(StructuralModel::LatentRegression { .. }), None) => {
            return Err(Error::InvalidParameter(
                "structural model present but no design supplied".into(),
            ));
        }
        (Some(_), _) => {
            return Err(Error::InvalidParameter(
                "Normal-trait fits take a latent-regression structural model".into(),
            ));
        }
        (None, _) => {}
    }

    let mut model = init.clone();
    let mut warnings = Vec::new();
    pin_degenerate_items(data, &mut model, &mut warnings);

    let rule = if dims <= 3 {
        let pts = opts.quad_points_per_dim.unwrap_or_else(|| default_quad_points(dims));
        gauss_hermite_rule(pts, dims, mean, cov)?
    } else {
        qmc_rule(opts.qmc_points, dims, mean, cov, opts.seed)?
    };

    let patterns = unique_patterns_grouped(data, design);
    let layout = ParamLayout::for_model(&model);
    let mut params_flat = layout.extract(&model);
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut last_param_delta = f64::INFINITY;

    for _iter in 0..opts.max_em_iters {
        let estep = e_step(&model, &patterns, &rule)?;
        trace.push(estep.loglik);
        let len = trace.len();
        if len >= 2 {
            let dll = (trace[len - 1] - trace[len - 2]).abs();
            if dll < opts.loglik_tol && last_param_delta < opts.param_tol {
                converged = true;
                break;
            }
        }
        m_step(&mut model, &patterns, &rule, &estep)?;
        let new_flat = layout.extract(&model);
        last_param_delta = params_flat
            .iter()
            .zip(&new_flat)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        params_flat = new_flat;
    }
    // Likelihood at the final parameters.
    let final_ll = e_step(&model, &patterns, &rule)?.loglik;
    trace.push(final_ll);

    Ok(FitResult {
        loglik: final_ll,
        n_params: layout.len(),
        trace,
        std_errors: None,
        converged,
        n_used: data.n(),
        warnings,
        options: opts.clone(),
        model,
    })
}

/// Replace the parameters of zero-variance items by pinned values matching
/// their smoothed observed margins, and exclude them from free parameters.
pub(crate) fn pin_degenerate_items(
    data: &ResponseMatrix,
    model: &mut ModelSpec,
    warnings: &mut Vec<String>,
) {
    let n_items = data.n_items();
    for i in 0..n_items {
        if model.fixed_items.contains(&i) {
            continue;
        }
        let k = data.items()[i].n_categories;
        let mut counts = vec![0usize; k];
        for j in 0..data.n() {
            if let Some(c) = data.response(j, i) {
                counts[c as usize] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        let observed = counts.iter().filter(|&&c| c > 0).count();
        if observed > 1 {
            continue;
        }
        let smoothed: Vec<f64> = counts
            .iter()
            .map(|&c| (c as f64 + 0.5) / (total as f64 + 0.5 * k as f64))
            .collect();
        model.items[i] = pinned_params(&model.items[i], &smoothed);
        model.fixed_items.push(i);
        warnings.push(format!(
            "item '{}' has no response variation among eligible individuals; \
             excluded from estimation with slopes pinned at 0",
            data.items()[i].id
        ));
    }
    model.fixed_items.sort_unstable();
    model.fixed_items.dedup();
}

fn pinned_params(params: &ItemParams, smoothed: &[f64]) -> ItemParams {
    let logit = |p: f64| (p / (1.0 - p)).ln();
    match params {
        ItemParams::Binary { slopes, .. } => ItemParams::Binary {
            slopes: vec![0.0; slopes.len()],
            intercept: logit(smoothed[1]),
        },
        ItemParams::Graded { slopes, intercepts } => {
            let mut cum = Vec::with_capacity(intercepts.len());
            let mut upper: f64 = smoothed.iter().skip(1).sum();
            for k in 1..=intercepts.len() {
                cum.push(logit(upper.clamp(1e-12, 1.0 - 1e-12)));
                if k < intercepts.len() {
                    upper -= smoothed[k];
                }
            }
            ItemParams::Graded { slopes: vec![0.0; slopes.len()], intercepts: cum }
        }
        ItemParams::Nominal { slopes, .. } => ItemParams::Nominal {
            slopes: slopes.iter().map(|row| vec![0.0; row.len()]).collect(),
            intercepts: smoothed.iter().map(|&p| (p / smoothed[0]).ln()).collect(),
        },
        ItemParams::LatentClass { trait_index, .. } => ItemParams::LatentClass {
            disc: 0.0,
            easiness: logit(smoothed[1]),
            trait_index: *trait_index,
        },
    }
}

struct EStep {
    loglik: f64,
    /// Posterior node weights per pattern (U x Q).
    posts: Vec<Vec<f64>>,
    /// Latent offset per pattern under the current structural coefficients.
    offsets: Option<Vec<Vec<f64>>>,
}

fn e_step(
    model: &ModelSpec,
    patterns: &super::patterns::UniquePatterns,
    rule: &QuadratureRule,
) -> Result<EStep> {
    let offsets: Option<Vec<Vec<f64>>> = match (&model.structural, &patterns.designs) {
        (Some(m @ StructuralModel::LatentRegression { .. }), Some(designs)) => Some(
            designs
                .iter()
                .map(|w| m.latent_offset(w).expect("validated design"))
                .collect(),
        ),
        _ => None,
    };
    let dims = rule.dims();
    let results: Vec<(f64, Vec<f64>)> = crate::par::par_map_range(patterns.len(), |u| {
        let row = &patterns.rows[u];
        let mut terms = Vec::with_capacity(rule.len());
        let mut theta = vec![0.0; dims];
        for q in 0..rule.len() {
            let node = rule.node(q);
            match offsets.as_ref() {
                Some(off) => {
                    for ((t, n), o) in theta.iter_mut().zip(node).zip(&off[u]) {
                        *t = n + o;
                    }
                }
                None => theta.copy_from_slice(node),
            }
            terms.push(rule.log_weight(q) + conditional_loglik(row, &model.items, &theta));
        }
        let lse = logsumexp(&terms);
        let posts = terms.iter().map(|t| (t - lse).exp()).collect();
        (lse, posts)
    });
    let mut loglik = 0.0;
    let mut posts = Vec::with_capacity(patterns.len());
    for (u, (lse, post)) in results.into_iter().enumerate() {
        if !lse.is_finite() {
            return Err(Error::Numerical(format!(
                "pattern {u} has zero marginal probability under the current parameters"
            )));
        }
        loglik += patterns.counts[u] as f64 * lse;
        posts.push(post);
    }
    Ok(EStep { loglik, posts, offsets })
}

fn m_step(
    model: &mut ModelSpec,
    patterns: &super::patterns::UniquePatterns,
    rule: &QuadratureRule,
    estep: &EStep,
) -> Result<()> {
    let dims = rule.dims();
    let n_items = model.items.len();
    let nonneg = model.slope_constraint == SlopeConstraint::NonNegative;
    let slopes_free = model.slope_constraint != SlopeConstraint::Fixed;

    // Structural update first (it uses the posterior of the current
    // parameters; items are updated with the same posterior).
    if let (Some(StructuralModel::LatentRegression { coef, .. }), Some(offsets)) =
        (&model.structural, &estep.offsets)
    {
        let q_cov = coef.len();
        let mut post_means = Vec::with_capacity(patterns.len());
        for u in 0..patterns.len() {
            let mut mean = offsets[u].clone();
            for q in 0..rule.len() {
                let w = estep.posts[u][q];
                for (m, v) in mean.iter_mut().zip(rule.node(q)) {
                    *m += w * v;
                }
            }
            post_means.push(mean);
        }
        let design = patterns.design_matrix().ok_or_else(|| {
            Error::InvalidParameter("structural update requires pattern designs".into())
        })?;
        debug_assert_eq!(design.ncols(), q_cov);
        let weights: Vec<f64> = patterns.counts.iter().map(|&c| c as f64).collect();
        let new_coef = wls_latent_regression(&design, &weights, &post_means)?;
        if let Some(StructuralModel::LatentRegression { coef, .. }) = &mut model.structural {
            *coef = new_coef;
        }
    }

    // Expected per-category counts. Without covariates the regressors are
    // the shared nodes (Q observations per item); with covariates each
    // (pattern, node) pair is its own observation.
    let plain = estep.offsets.is_none();
    let updated: Vec<Option<ItemParams>> = crate::par::par_map_range(n_items, |i| {
        if model.fixed_items.contains(&i) {
            return None;
        }
        let k = model.items[i].n_categories();
        let mut obs: Vec<ItemObs> = Vec::new();
        if plain {
            let mut r = vec![vec![0.0; k]; rule.len()];
            for u in 0..patterns.len() {
                let code = patterns.rows[u][i];
                if code == MISSING {
                    continue;
                }
                let m = patterns.counts[u] as f64;
                for q in 0..rule.len() {
                    r[q][code as usize] += m * estep.posts[u][q];
                }
            }
            obs.reserve(rule.len());
            for q in 0..rule.len() {
                obs.push(ItemObs { x: rule.node(q).to_vec(), w: std::mem::take(&mut r[q]) });
            }
        } else {
            let offsets = estep.offsets.as_ref().unwrap();
            for u in 0..patterns.len() {
                let code = patterns.rows[u][i];
                if code == MISSING {
                    continue;
                }
                let m = patterns.counts[u] as f64;
                for q in 0..rule.len() {
                    let mut x = vec![0.0; dims];
                    for ((xv, n), o) in x.iter_mut().zip(rule.node(q)).zip(&offsets[u]) {
                        *xv = n + o;
                    }
                    let mut w = vec![0.0; k];
                    w[code as usize] = m * estep.posts[u][q];
                    obs.push(ItemObs { x, w });
                }
            }
        }
        let free_dims: Vec<bool> = (0..dims)
            .map(|s| slopes_free && !super::echelon_fixed(model, i, s))
            .collect();
        Some(update_item(&model.items[i], &obs, free_dims, nonneg))
    });
    for (i, new_params) in updated.into_iter().enumerate() {
        if let Some(p) = new_params {
            model.items[i] = p;
        }
    }
    Ok(())
}

/// Starting values for a Normal-trait fit: unit slopes on the free echelon
/// coordinates and intercepts from smoothed marginal frequencies.
pub fn default_normal_init(data: &ResponseMatrix, dims: usize) -> Result<ModelSpec> {
    let n = data.n();
    let mut items = Vec::with_capacity(data.n_items());
    for (i, spec) in data.items().iter().enumerate() {
        let k = spec.n_categories;
        let mut counts = vec![0.0; k];
        let mut total = 0.0;
        for j in 0..n {
            if let Some(c) = data.response(j, i) {
                counts[c as usize] += 1.0;
                total += 1.0;
            }
        }
        let smoothed: Vec<f64> =
            counts.iter().map(|c| (c + 0.5) / (total + 0.5 * k as f64)).collect();
        let logit = |p: f64| ((p / (1.0 - p)) as f64).ln();
        let params = match spec.kind {
            crate::model::ItemKind::Binary => {
                ItemParams::binary(vec![1.0; dims], logit(smoothed[1]))
            }
            crate::model::ItemKind::Ordinal => {
                let mut cum = Vec::with_capacity(k - 1);
                let mut upper: f64 = smoothed.iter().skip(1).sum();
                for m in 1..k {
                    cum.push(logit(upper.clamp(1e-9, 1.0 - 1e-9)));
                    if m < k - 1 {
                        upper -= smoothed[m];
                    }
                }
                // Enforce strict ordering for flat margins.
                for m in 1..cum.len() {
                    if cum[m] >= cum[m - 1] {
                        cum[m] = cum[m - 1] - 1e-3;
                    }
                }
                ItemParams::graded(vec![1.0; dims], cum)?
            }
            crate::model::ItemKind::Nominal => {
                let mut slopes = vec![vec![0.0; dims]];
                let mut intercepts = vec![0.0];
                for c in 1..k {
                    // Spread category slopes so the softmax is not symmetric
                    // at the start.
                    slopes.push(vec![0.5 * c as f64; dims]);
                    intercepts.push((smoothed[c] / smoothed[0]).ln());
                }
                ItemParams::nominal(slopes, intercepts)?
            }
        };
        items.push(params);
    }
    let mut model = ModelSpec::new(items, LatentSpec::standard_normal(dims));
    model.slope_constraint = SlopeConstraint::NonNegative;
    super::apply_identifiability(&model, IdentificationScheme::StandardizedTraits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Integrator, ItemSpec};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn simulate_2pl(
        n: usize,
        slopes: &[f64],
        intercepts: &[f64],
        seed: u64,
    ) -> ResponseMatrix {
        let mut rng = crate::rng::derive_rng(seed, "normal-test");
        let items: Vec<ItemSpec> =
            (0..slopes.len()).map(|i| ItemSpec::binary(&format!("i{i}"), "")).collect();
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let theta: f64 = {
                let (u1, u2): (f64, f64) = (rng.random(), rng.random());
                (-2.0 * u1.max(1e-12).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            };
            let row: Vec<i16> = slopes
                .iter()
                .zip(intercepts)
                .map(|(a, d)| {
                    let p = crate::math::sigmoid(a * theta + d);
                    i16::from(rng.random::<f64>() < p)
                })
                .collect();
            rows.push(row);
        }
        let ids = (0..n).map(|j| format!("p{j}")).collect();
        ResponseMatrix::from_rows(items, ids, rows).unwrap()
    }

    #[test]
    fn em_ascends_and_recovers_single_run() {
        let true_a = [1.6, 0.9, 1.2, 2.0, 0.8];
        let true_d = [-0.5, 0.3, 0.0, 0.8, -1.0];
        let data = simulate_2pl(1500, &true_a, &true_d, 42);
        let init = default_normal_init(&data, 1).unwrap();
        let opts = FitOptions { seed: 1, ..FitOptions::default() };
        let fit = em_fit_normal(&data, &init, None, &opts).unwrap();
        assert!(fit.converged);
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "trace must be non-decreasing: {:?}", w);
        }
        for (i, (ta, td)) in true_a.iter().zip(&true_d).enumerate() {
            let ItemParams::Binary { slopes, intercept } = &fit.model.items[i] else {
                unreachable!()
            };
            assert!((slopes[0] - ta).abs() < 0.35, "slope {i}: {} vs {ta}", slopes[0]);
            assert!((intercept - td).abs() < 0.25, "intercept {i}: {intercept} vs {td}");
        }
        // Reported loglik agrees with an independent per-row computation.
        let rule = gauss_hermite_rule(21, 1, &[0.0], &[vec![1.0]]).unwrap();
        let ll = crate::model::marginal_loglik(
            &data,
            &fit.model,
            None,
            &Integrator::Quadrature(&rule),
        )
        .unwrap();
        assert_abs_diff_eq!(ll, fit.loglik, epsilon = 1e-10);
    }

    #[test]
    fn rasch_fit_under_fixed_slopes() {
        let true_a = [1.0, 1.0, 1.0, 1.0];
        let true_d = [-0.8, -0.2, 0.4, 1.0];
        let data = simulate_2pl(800, &true_a, &true_d, 7);
        let mut init = default_normal_init(&data, 1).unwrap();
        init.slope_constraint = SlopeConstraint::Fixed;
        for item in &mut init.items {
            if let ItemParams::Binary { slopes, .. } = item {
                slopes[0] = 1.0;
            }
        }
        let fit = em_fit_normal(&data, &init, None, &FitOptions::default()).unwrap();
        assert_eq!(fit.n_params, 4);
        for item in &fit.model.items {
            let ItemParams::Binary { slopes, .. } = item else { unreachable!() };
            assert_eq!(slopes[0], 1.0);
        }
    }

    #[test]
    fn single_free_item_matches_analytic_saturated_loglik() {
        // One binary item plus two pinned-by-fiat anchors would change the
        // likelihood, so use the 3-item minimum with two flat items and
        // check the flat items' contribution analytically.
        let items = vec![
            ItemSpec::binary("a", ""),
            ItemSpec::binary("b", ""),
            ItemSpec::binary("c", ""),
        ];
        let mut rng = crate::rng::derive_rng(3, "flat");
        let rows: Vec<Vec<i16>> = (0..400)
            .map(|_| {
                vec![
                    i16::from(rng.random::<f64>() < 0.3),
                    i16::from(rng.random::<f64>() < 0.6),
                    i16::from(rng.random::<f64>() < 0.5),
                ]
            })
            .collect();
        let ids = (0..rows.len()).map(|j| format!("p{j}")).collect();
        let data = ResponseMatrix::from_rows(items, ids, rows).unwrap();
        let init = default_normal_init(&data, 1).unwrap();
        let fit = em_fit_normal(&data, &init, None, &FitOptions::default()).unwrap();
        // Independence data: the fitted independence model bound is the
        // Bernoulli saturated marginal sum(n_i1 ln p_i + n_i0 ln (1-p_i)).
        let mut saturated = 0.0;
        for i in 0..3 {
            let n1: f64 = (0..data.n()).map(|j| f64::from(data.code(j, i) as i32)).sum();
            let n = data.n() as f64;
            let p = n1 / n;
            saturated += n1 * p.ln() + (n - n1) * (1.0 - p).ln();
        }
        // The 2PL nests independence, so its optimum cannot fall below.
        assert!(fit.loglik >= saturated - 1e-6);
        assert!(fit.loglik <= saturated + 2.0);
    }

    #[test]
    fn degenerate_item_pinned_with_warning() {
        let items = vec![
            ItemSpec::binary("a", ""),
            ItemSpec::binary("b", ""),
            ItemSpec::binary("c", ""),
            ItemSpec::binary("flat", ""),
        ];
        let mut rng = crate::rng::derive_rng(5, "degen");
        let rows: Vec<Vec<i16>> = (0..200)
            .map(|_| {
                vec![
                    i16::from(rng.random::<f64>() < 0.4),
                    i16::from(rng.random::<f64>() < 0.6),
                    i16::from(rng.random::<f64>() < 0.5),
                    1,
                ]
            })
            .collect();
        let ids = (0..rows.len()).map(|j| format!("p{j}")).collect();
        let data = ResponseMatrix::from_rows(items, ids, rows).unwrap();
        let init = default_normal_init(&data, 1).unwrap();
        let fit = em_fit_normal(&data, &init, None, &FitOptions::default()).unwrap();
        assert_eq!(fit.model.fixed_items, vec![3]);
        assert!(!fit.warnings.is_empty());
        let ItemParams::Binary { slopes, .. } = &fit.model.items[3] else { unreachable!() };
        assert_eq!(slopes[0], 0.0);
        // 3 free items * 2 parameters.
        assert_eq!(fit.n_params, 6);
    }

    #[test]
    fn pattern_collapse_equals_row_expansion() {
        let data = simulate_2pl(300, &[1.2, 0.9, 1.5], &[0.2, -0.4, 0.0], 11);
        let patterns = super::super::patterns::unique_patterns(&data);
        // Rebuild the data pattern-by-pattern (different row order, same
        // multiset) — the fit must be bit-identical.
        let mut rows = Vec::new();
        for (row, count) in patterns.rows.iter().zip(&patterns.counts) {
            for _ in 0..*count {
                rows.push(row.clone());
            }
        }
        let ids = (0..rows.len()).map(|j| format!("q{j}")).collect();
        let expanded = ResponseMatrix::from_rows(data.items().to_vec(), ids, rows).unwrap();
        let init = default_normal_init(&data, 1).unwrap();
        let opts = FitOptions::default();
        let f1 = em_fit_normal(&data, &init, None, &opts).unwrap();
        let f2 = em_fit_normal(&expanded, &init, None, &opts).unwrap();
        assert_eq!(f1.loglik, f2.loglik);
        assert_eq!(f1.model, f2.model);
        assert_eq!(f1.trace, f2.trace);
    }

    #[test]
    fn quadrature_refinement_is_stable() {
        let data = simulate_2pl(2000, &[1.4, 0.9, 1.8, 1.1, 0.7, 1.3, 1.6, 1.0],
            &[0.3, -0.5, 0.8, 0.0, -1.0, 0.5, -0.2, 1.2], 13);
        let init = default_normal_init(&data, 1).unwrap();
        // Tight stopping rule so the comparison isolates the quadrature
        // error rather than where EM happened to stop.
        let tight = FitOptions {
            loglik_tol: 1e-10,
            param_tol: 1e-7,
            max_em_iters: 5000,
            ..FitOptions::default()
        };
        let f21 = em_fit_normal(
            &data,
            &init,
            None,
            &FitOptions { quad_points_per_dim: Some(21), ..tight.clone() },
        )
        .unwrap();
        let f42 = em_fit_normal(
            &data,
            &init,
            None,
            &FitOptions { quad_points_per_dim: Some(42), ..tight },
        )
        .unwrap();
        let rel = (f21.loglik - f42.loglik).abs() / f42.loglik.abs();
        assert!(rel < 1e-4, "21 pts: {:.8}, 42 pts: {:.8}", f21.loglik, f42.loglik);
    }

    #[test]
    fn latent_regression_recovers_group_shift() {
        // Two groups with true latent means 0 and -0.6.
        let mut rng = crate::rng::derive_rng(21, "latreg");
        let n = 3000;
        let slopes = [1.4, 1.0, 1.8, 0.9, 1.2];
        let inters = [0.0, 0.4, -0.4, 0.8, -0.8];
        let items: Vec<ItemSpec> =
            (0..5).map(|i| ItemSpec::binary(&format!("i{i}"), "")).collect();
        let mut rows = Vec::with_capacity(n);
        let mut design = DMatrix::zeros(n, 1);
        for j in 0..n {
            let black = j % 2 == 0;
            design[(j, 0)] = f64::from(black);
            let shift = if black { -0.6 } else { 0.0 };
            let z: f64 = {
                let (u1, u2): (f64, f64) = (rng.random(), rng.random());
                (-2.0 * u1.max(1e-12).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            };
            let theta = shift + z;
            rows.push(
                slopes
                    .iter()
                    .zip(&inters)
                    .map(|(a, d)| i16::from(rng.random::<f64>() < crate::math::sigmoid(a * theta + d)))
                    .collect(),
            );
        }
        let ids = (0..n).map(|j| format!("p{j}")).collect();
        let data = ResponseMatrix::from_rows(items, ids, rows).unwrap();
        let mut init = default_normal_init(&data, 1).unwrap();
        init.structural = Some(
            crate::structural::StructuralModel::latent_regression(
                vec![vec![0.0]],
                vec!["black".into()],
            )
            .unwrap(),
        );
        let fit = em_fit_normal(&data, &init, Some(&design), &FitOptions::default()).unwrap();
        let Some(crate::structural::StructuralModel::LatentRegression { coef, .. }) =
            &fit.model.structural
        else {
            unreachable!()
        };
        assert!((coef[0][0] + 0.6).abs() < 0.15, "gamma = {}", coef[0][0]);
    }
}
