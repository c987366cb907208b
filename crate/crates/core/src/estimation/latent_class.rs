//! EM fitting of latent-class models with deterministic and multi-start
//! random initialization.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::items::{update_item, ItemObs};
use super::layout::ParamLayout;
use super::normal::pin_degenerate_items;
use super::patterns::{unique_patterns_grouped, UniquePatterns};
use super::{apply_identifiability, FitOptions, FitResult};
use crate::math::{logsumexp, newton_maximize, sigmoid};
use crate::model::{
    IdentificationScheme, ItemKind, ItemParams, LatentSpec, ModelSpec, ResponseMatrix, MISSING,
};
use crate::rng::derive_rng_indexed;
use crate::structural::{
    fit_cumulative_weighted, fit_multinomial_weighted, prior_class_probs, StructuralModel,
};
use crate::{Error, Result};

/// Optional covariate model for the class prior.
pub enum LcStructural<'a> {
    None,
    /// Multinomial logit on the given design (one row per individual; the
    /// first column is normally an intercept).
    Multinomial { design: &'a DMatrix<f64>, covariate_names: Vec<String> },
    /// Cumulative logit on a reduced design without an intercept column.
    Cumulative { design: &'a DMatrix<f64>, covariate_names: Vec<String> },
}

impl LcStructural<'_> {
    fn design(&self) -> Option<&DMatrix<f64>> {
        match self {
            Self::None => None,
            Self::Multinomial { design, .. } | Self::Cumulative { design, .. } => Some(design),
        }
    }
}

/// Fit a latent-class model with `n_classes` classes and the given one-hot
/// item-to-trait allocation (entry `allocation[i]` is the trait of item i).
///
/// Runs one deterministic start plus `opts.n_random_starts` random starts —
/// class weights drawn uniformly and normalized, all other parameters from
/// standard normals — and returns the best final log-likelihood. Per-trait
/// identification pins the first allocated item's discrimination at 1 and
/// difficulty at 0.
pub fn em_fit_latent_class(
    data: &ResponseMatrix,
    n_classes: usize,
    allocation: &[usize],
    structural: LcStructural<'_>,
    opts: &FitOptions,
) -> Result<FitResult> {
    opts.validate()?;
    if n_classes == 0 {
        return Err(Error::InvalidParameter("at least one class required".into()));
    }
    if allocation.len() != data.n_items() {
        return Err(Error::DimensionMismatch(format!(
            "allocation names {} items, data has {}",
            allocation.len(),
            data.n_items()
        )));
    }
    if let Some(spec) = data.items().iter().find(|s| s.kind != ItemKind::Binary) {
        return Err(Error::Unsupported(format!(
            "latent-class fitting covers binary items; item '{}' is not binary",
            spec.id
        )));
    }
    let dims = allocation.iter().copied().max().map_or(1, |m| m + 1);
    for s in 0..dims {
        if !allocation.contains(&s) {
            return Err(Error::Identifiability(format!("trait {s} has no allocated items")));
        }
    }
    if let Some(w) = structural.design() {
        if w.nrows() != data.n() {
            return Err(Error::DimensionMismatch("design rows must match individuals".into()));
        }
    }

    let patterns = unique_patterns_grouped(data, structural.design());
    let deterministic = deterministic_init(data, n_classes, allocation, &structural, dims)?;
    let mut warnings = Vec::new();
    let mut base = deterministic.clone();
    pin_degenerate_items(data, &mut base, &mut warnings);
    let n_starts = 1 + if n_classes > 1 { opts.n_random_starts } else { 0 };

    let runs: Vec<Result<FitResult>> = crate::par::par_map_range(n_starts, |start| {
        let mut model = if start == 0 {
            base.clone()
        } else {
            random_init(&base, dims, opts.seed, start)
        };
        model = apply_identifiability(&model, IdentificationScheme::AnchoredItems)?;
        run_em(model, &patterns, opts, start, warnings.clone())
    });

    let mut best: Option<FitResult> = None;
    let mut start_failures = Vec::new();
    for (start, run) in runs.into_iter().enumerate() {
        match run {
            Ok(fit) => {
                let better = match &best {
                    None => true,
                    Some(b) => fit.loglik > b.loglik,
                };
                if better {
                    best = Some(fit);
                }
            }
            Err(e) => start_failures.push(format!("start {start}: {e}")),
        }
    }
    let mut best = best.ok_or_else(|| {
        Error::Numerical(format!("all starts failed: {}", start_failures.join("; ")))
    })?;
    best.warnings.extend(start_failures);
    canonicalize_class_order(&mut best.model);
    Ok(best)
}

/// Undo label switching: order classes by the last trait's support point
/// (then the first trait's, then the prior). The likelihood is invariant;
/// multinomial-logit coefficients are re-expressed against the new
/// reference class. Cumulative-logit fits already carry an ordering and are
/// left alone.
fn canonicalize_class_order(model: &mut ModelSpec) {
    if matches!(model.structural, Some(StructuralModel::CumulativeLogit { .. })) {
        return;
    }
    let LatentSpec::Discrete { support, prior } = &mut model.latent else {
        return;
    };
    let c = support.len();
    if c <= 1 {
        return;
    }
    let dims = support[0].len();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        let key = |k: usize| (support[k][dims - 1], support[k][0], prior[k]);
        key(a).partial_cmp(&key(b)).unwrap_or(std::cmp::Ordering::Equal)
    });
    if order.iter().enumerate().all(|(k, &o)| k == o) {
        return;
    }
    *support = order.iter().map(|&o| support[o].clone()).collect();
    *prior = order.iter().map(|&o| prior[o]).collect();
    if let Some(StructuralModel::MultinomialLogit { coef, .. }) = &mut model.structural {
        let q = coef.first().map_or(0, Vec::len);
        // Old logit row per class, class 1 being all zeros.
        let old_row = |class: usize| -> Vec<f64> {
            if class == 0 {
                vec![0.0; q]
            } else {
                coef[class - 1].clone()
            }
        };
        let base = old_row(order[0]);
        let new_coef: Vec<Vec<f64>> = order[1..]
            .iter()
            .map(|&o| old_row(o).iter().zip(&base).map(|(v, b)| v - b).collect())
            .collect();
        *coef = new_coef;
    }
}

fn run_em(
    mut model: ModelSpec,
    patterns: &UniquePatterns,
    opts: &FitOptions,
    start: usize,
    mut warnings: Vec<String>,
) -> Result<FitResult> {
    let layout = ParamLayout::for_model(&model);
    let mut params_flat = layout.extract(&model);
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut last_param_delta = f64::INFINITY;
    let mut perturbed = false;
    let n_total: f64 = patterns.counts.iter().map(|&c| c as f64).sum();

    let mut iter = 0;
    while iter < opts.max_em_iters {
        iter += 1;
        let estep = lc_e_step(&model, patterns)?;
        // Empty-class guard: restart once from a perturbed configuration,
        // then flag.
        if let Some(empty) = estep.masses.iter().position(|&m| m < 1e-10 * n_total) {
            if !perturbed {
                perturbed = true;
                perturb_class(&mut model, empty, opts.seed, start);
                trace.clear();
                params_flat = layout.extract(&model);
                last_param_delta = f64::INFINITY;
                iter = 0;
                continue;
            }
            warnings.push(format!(
                "class {} lost all posterior mass after a perturbation restart; \
                 fit flagged as non-converged",
                empty + 1
            ));
            trace.push(estep.loglik);
            break;
        }
        trace.push(estep.loglik);
        let len = trace.len();
        if len >= 2 {
            let dll = (trace[len - 1] - trace[len - 2]).abs();
            if dll < opts.loglik_tol && last_param_delta < opts.param_tol {
                converged = true;
                break;
            }
        }
        lc_m_step(&mut model, patterns, &estep)?;
        let new_flat = layout.extract(&model);
        last_param_delta = params_flat
            .iter()
            .zip(&new_flat)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        params_flat = new_flat;
    }
    let final_ll = lc_e_step(&model, patterns)?.loglik;
    trace.push(final_ll);
    Ok(FitResult {
        loglik: final_ll,
        n_params: layout.len(),
        trace,
        std_errors: None,
        converged,
        n_used: n_total as usize,
        warnings,
        options: opts.clone(),
        model,
    })
}

struct LcEStep {
    loglik: f64,
    /// Posterior class weights per pattern (U x C).
    posts: Vec<Vec<f64>>,
    /// Posterior mass per class.
    masses: Vec<f64>,
}

fn lc_e_step(model: &ModelSpec, patterns: &UniquePatterns) -> Result<LcEStep> {
    let LatentSpec::Discrete { support, prior } = &model.latent else {
        return Err(Error::InvalidParameter("latent-class E-step requires a discrete latent".into()));
    };
    let n_classes = support.len();
    let results: Vec<(f64, Vec<f64>)> = crate::par::par_map_range(patterns.len(), |u| {
        let prior_u: Vec<f64> = match (&model.structural, patterns.design_row(u)) {
            (Some(m), Some(w)) => prior_class_probs(m, w).expect("validated design"),
            _ => prior.clone(),
        };
        let row = &patterns.rows[u];
        let terms: Vec<f64> = (0..n_classes)
            .map(|c| {
                if prior_u[c] > 0.0 {
                    prior_u[c].ln()
                        + crate::model::conditional_loglik(row, &model.items, &support[c])
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let lse = logsumexp(&terms);
        let posts = terms.iter().map(|t| (t - lse).exp()).collect();
        (lse, posts)
    });
    let mut loglik = 0.0;
    let mut posts = Vec::with_capacity(patterns.len());
    let mut masses = vec![0.0; n_classes];
    for (u, (lse, post)) in results.into_iter().enumerate() {
        if !lse.is_finite() {
            return Err(Error::Numerical(format!(
                "pattern {u} has zero marginal probability under the current parameters"
            )));
        }
        let m = patterns.counts[u] as f64;
        loglik += m * lse;
        for (mass, p) in masses.iter_mut().zip(&post) {
            *mass += m * p;
        }
        posts.push(post);
    }
    Ok(LcEStep { loglik, posts, masses })
}

fn lc_m_step(model: &mut ModelSpec, patterns: &UniquePatterns, estep: &LcEStep) -> Result<()> {
    let (support_now, n_classes) = {
        let LatentSpec::Discrete { support, .. } = &model.latent else { unreachable!() };
        (support.clone(), support.len())
    };
    let n_items = model.items.len();
    let counts: Vec<f64> = patterns.counts.iter().map(|&c| c as f64).collect();

    // Item updates: per item, expected counts per class and category with the
    // allocated support value as regressor.
    let anchors = anchor_items(model);
    let updated: Vec<Option<ItemParams>> = crate::par::par_map_range(n_items, |i| {
        if model.fixed_items.contains(&i) || anchors.contains(&i) {
            return None;
        }
        let ItemParams::LatentClass { trait_index, .. } = &model.items[i] else {
            return None;
        };
        let mut r = vec![[0.0; 2]; n_classes];
        for u in 0..patterns.len() {
            let code = patterns.rows[u][i];
            if code == MISSING {
                continue;
            }
            for c in 0..n_classes {
                r[c][code as usize] += counts[u] * estep.posts[u][c];
            }
        }
        let obs: Vec<ItemObs> = (0..n_classes)
            .map(|c| ItemObs { x: vec![support_now[c][*trait_index]], w: r[c].to_vec() })
            .collect();
        let free_dims = vec![n_classes > 1];
        Some(update_item(&model.items[i], &obs, free_dims, false))
    });
    for (i, p) in updated.into_iter().enumerate() {
        if let Some(p) = p {
            model.items[i] = p;
        }
    }

    // Support-point updates, one scalar Newton per (class, trait).
    if n_classes > 1 {
        let dims = model.dims();
        let items = model.items.clone();
        let mut new_support = support_now.clone();
        for c in 0..n_classes {
            for s in 0..dims {
                // Expected successes/failures for items in this trait, under
                // class c.
                let members: Vec<(usize, f64, f64)> = items
                    .iter()
                    .enumerate()
                    .filter_map(|(i, it)| match it {
                        ItemParams::LatentClass { disc, easiness, trait_index }
                            if *trait_index == s =>
                        {
                            Some((i, *disc, *easiness))
                        }
                        _ => None,
                    })
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let mut r = vec![[0.0; 2]; members.len()];
                for u in 0..patterns.len() {
                    let w = counts[u] * estep.posts[u][c];
                    for (mi, (i, _, _)) in members.iter().enumerate() {
                        let code = patterns.rows[u][*i];
                        if code != MISSING {
                            r[mi][code as usize] += w;
                        }
                    }
                }
                let eval = |x: &[f64]| -> (f64, Vec<f64>) {
                    let xi = x[0];
                    let mut value = 0.0;
                    let mut grad = 0.0;
                    for (mi, (_, a, d)) in members.iter().enumerate() {
                        let eta = a * xi + d;
                        let (w0, w1) = (r[mi][0], r[mi][1]);
                        value += w1 * crate::math::log_sigmoid(eta)
                            + w0 * crate::math::log_sigmoid(-eta);
                        grad += a * (w1 - (w0 + w1) * sigmoid(eta));
                    }
                    (value, vec![grad])
                };
                let out = newton_maximize(&[support_now[c][s]], eval, 30, 1e-10);
                new_support[c][s] = out.x[0];
            }
        }
        if let LatentSpec::Discrete { support, .. } = &mut model.latent {
            *support = new_support;
        }
    }

    // Prior update: closed form without covariates, weighted logit fits with.
    match &model.structural {
        None => {
            let total: f64 = estep.masses.iter().sum();
            if let LatentSpec::Discrete { prior, .. } = &mut model.latent {
                for (p, m) in prior.iter_mut().zip(&estep.masses) {
                    *p = m / total;
                }
            }
        }
        Some(StructuralModel::MultinomialLogit { coef, .. }) => {
            let design = patterns.design_matrix().expect("structural fit requires designs");
            let new_coef = fit_multinomial_weighted(&design, &counts, &estep.posts, coef);
            if let Some(StructuralModel::MultinomialLogit { coef, .. }) = &mut model.structural {
                *coef = new_coef;
            }
        }
        Some(StructuralModel::CumulativeLogit { intercepts, coef, .. }) => {
            let design = patterns.design_matrix().expect("structural fit requires designs");
            let (phi, gamma) =
                fit_cumulative_weighted(&design, &counts, &estep.posts, intercepts, coef);
            if let Some(StructuralModel::CumulativeLogit { intercepts, coef, .. }) =
                &mut model.structural
            {
                *intercepts = phi;
                *coef = gamma;
            }
        }
        Some(StructuralModel::LatentRegression { .. }) => {
            return Err(Error::InvalidParameter(
                "latent-class fits take a multinomial or cumulative logit structural model".into(),
            ));
        }
    }
    Ok(())
}

fn anchor_items(model: &ModelSpec) -> Vec<usize> {
    let dims = model.dims();
    let single_class = matches!(model.latent.n_classes(), Some(1));
    if single_class {
        return Vec::new();
    }
    let mut anchored = vec![None; dims];
    for (i, item) in model.items.iter().enumerate() {
        if model.fixed_items.contains(&i) {
            continue;
        }
        if let ItemParams::LatentClass { trait_index, .. } = item {
            if anchored[*trait_index].is_none() {
                anchored[*trait_index] = Some(i);
            }
        }
    }
    anchored.into_iter().flatten().collect()
}

fn perturb_class(model: &mut ModelSpec, class: usize, seed: u64, start: usize) {
    let mut rng = derive_rng_indexed(seed, "lc-perturb", start);
    if let LatentSpec::Discrete { support, prior } = &mut model.latent {
        for v in support[class].iter_mut() {
            *v += rng.random_range(-1.0..1.0);
        }
        let c = prior.len() as f64;
        prior.iter_mut().for_each(|p| *p = 1.0 / c);
    }
}

/// Deterministic start: split individuals into C groups by their mean
/// response over eligible items, place each class's support at the logit of
/// the group's per-trait success rate, unit discriminations, uniform-ish
/// prior from the group sizes.
fn deterministic_init(
    data: &ResponseMatrix,
    n_classes: usize,
    allocation: &[usize],
    structural: &LcStructural<'_>,
    dims: usize,
) -> Result<ModelSpec> {
    let n = data.n();
    let mut order: Vec<usize> = (0..n).collect();
    let scores: Vec<f64> = (0..n)
        .map(|j| {
            let elig = data.n_eligible(j);
            if elig == 0 {
                0.5
            } else {
                let sum: f64 = (0..data.n_items())
                    .filter_map(|i| data.response(j, i))
                    .map(f64::from)
                    .sum();
                sum / elig as f64
            }
        })
        .collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));

    let mut support = vec![vec![0.0; dims]; n_classes];
    let mut prior = vec![0.0; n_classes];
    for c in 0..n_classes {
        let lo = c * n / n_classes;
        let hi = ((c + 1) * n / n_classes).max(lo + 1).min(n);
        let members = &order[lo..hi];
        prior[c] = members.len() as f64 / n as f64;
        for s in 0..dims {
            let mut successes = 0.0;
            let mut eligible = 0.0;
            for &j in members {
                for (i, &alloc) in allocation.iter().enumerate() {
                    if alloc == s {
                        if let Some(code) = data.response(j, i) {
                            successes += f64::from(code);
                            eligible += 1.0;
                        }
                    }
                }
            }
            let p = if eligible > 0.0 { (successes / eligible).clamp(0.02, 0.98) } else { 0.5 };
            support[c][s] = (p / (1.0 - p)).ln();
        }
    }
    if n_classes == 1 {
        support[0].iter_mut().for_each(|v| *v = 0.0);
    }
    let total: f64 = prior.iter().sum();
    prior.iter_mut().for_each(|p| *p /= total);

    let items: Vec<ItemParams> =
        allocation.iter().map(|&s| ItemParams::latent_class(1.0, 0.0, s)).collect();
    let structural_model = init_structural(structural, &prior, n_classes)?;
    let latent = LatentSpec::discrete(support, vec![1.0 / n_classes as f64; n_classes])?;
    let mut model = ModelSpec::new(items, latent);
    if structural_model.is_none() {
        if let LatentSpec::Discrete { prior: p, .. } = &mut model.latent {
            *p = prior;
        }
    }
    model.structural = structural_model;
    model.identification = IdentificationScheme::AnchoredItems;
    Ok(model)
}

fn init_structural(
    structural: &LcStructural<'_>,
    prior: &[f64],
    n_classes: usize,
) -> Result<Option<StructuralModel>> {
    match structural {
        LcStructural::None => Ok(None),
        LcStructural::Multinomial { design, covariate_names } => {
            let q = design.ncols();
            if covariate_names.len() != q {
                return Err(Error::DimensionMismatch(
                    "covariate names must match design columns".into(),
                ));
            }
            let has_intercept =
                q > 0 && (0..design.nrows()).all(|r| design[(r, 0)] == 1.0);
            let coef: Vec<Vec<f64>> = (2..=n_classes)
                .map(|c| {
                    let mut row = vec![0.0; q];
                    if has_intercept {
                        row[0] = (prior[c - 1].max(1e-6) / prior[0].max(1e-6)).ln();
                    }
                    row
                })
                .collect();
            Ok(Some(StructuralModel::multinomial_logit(coef, covariate_names.clone())?))
        }
        LcStructural::Cumulative { design, covariate_names } => {
            let q = design.ncols();
            if covariate_names.len() != q {
                return Err(Error::DimensionMismatch(
                    "covariate names must match design columns".into(),
                ));
            }
            // Start from the exceedance logits of the prior, which are
            // strictly decreasing for a positive prior.
            let mut intercepts = Vec::with_capacity(n_classes - 1);
            let mut upper: f64 = prior.iter().skip(1).sum();
            for c in 1..n_classes {
                let p = upper.clamp(1e-6, 1.0 - 1e-6);
                intercepts.push((p / (1.0 - p)).ln());
                if c < n_classes - 1 {
                    upper -= prior[c];
                }
            }
            for k in 1..intercepts.len() {
                if intercepts[k] >= intercepts[k - 1] {
                    intercepts[k] = intercepts[k - 1] - 1e-3;
                }
            }
            Ok(Some(StructuralModel::cumulative_logit(
                intercepts,
                vec![0.0; q],
                covariate_names.clone(),
            )?))
        }
    }
}

/// Random start: class weights uniform-normalized, every other free
/// parameter standard normal.
fn random_init(base: &ModelSpec, dims: usize, seed: u64, start: usize) -> ModelSpec {
    let mut rng: ChaCha8Rng = derive_rng_indexed(seed, "lc-start", start);
    let mut model = base.clone();
    let n_classes = model.latent.n_classes().unwrap_or(1);
    let mut weights: Vec<f64> = (0..n_classes).map(|_| rng.random::<f64>()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let mut normal = || -> f64 {
        // Box-Muller on the derived stream.
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    for (i, item) in model.items.iter_mut().enumerate() {
        if model.fixed_items.contains(&i) {
            continue;
        }
        if let ItemParams::LatentClass { disc, easiness, .. } = item {
            *disc = normal();
            *easiness = normal();
        }
    }
    if let LatentSpec::Discrete { support, prior } = &mut model.latent {
        for xi in support.iter_mut() {
            for v in xi.iter_mut().take(dims) {
                *v = normal();
            }
        }
        if model.structural.is_none() {
            *prior = weights.clone();
        }
    }
    match &mut model.structural {
        Some(StructuralModel::MultinomialLogit { coef, .. }) => {
            let has_intercept = !coef.is_empty() && {
                // The deterministic init put prior logits in column 0 when an
                // intercept column exists; reuse that convention.
                true
            };
            for (ci, row) in coef.iter_mut().enumerate() {
                for (q, v) in row.iter_mut().enumerate() {
                    if q == 0 && has_intercept {
                        *v = (weights[ci + 1].max(1e-6) / weights[0].max(1e-6)).ln();
                    } else {
                        *v = normal();
                    }
                }
            }
        }
        Some(StructuralModel::CumulativeLogit { coef, .. }) => {
            for v in coef.iter_mut() {
                *v = normal();
            }
        }
        _ => {}
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ItemSpec;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    pub(crate) fn simulate_lc(
        n: usize,
        disc: &[f64],
        easiness: &[f64],
        allocation: &[usize],
        support: &[Vec<f64>],
        prior: &[f64],
        seed: u64,
    ) -> (ResponseMatrix, Vec<usize>) {
        let mut rng = crate::rng::derive_rng(seed, "lc-sim");
        let items: Vec<ItemSpec> =
            (0..disc.len()).map(|i| ItemSpec::binary(&format!("i{i}"), "")).collect();
        let mut rows = Vec::with_capacity(n);
        let mut classes = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut class = prior.len() - 1;
            for (c, p) in prior.iter().enumerate() {
                acc += p;
                if u < acc {
                    class = c;
                    break;
                }
            }
            classes.push(class);
            let row: Vec<i16> = disc
                .iter()
                .zip(easiness)
                .zip(allocation)
                .map(|((a, d), &s)| {
                    let p = sigmoid(a * support[class][s] + d);
                    i16::from(rng.random::<f64>() < p)
                })
                .collect();
            rows.push(row);
        }
        let ids = (0..n).map(|j| format!("p{j}")).collect();
        (ResponseMatrix::from_rows(items, ids, rows).unwrap(), classes)
    }

    #[test]
    fn single_class_collapses_to_independence() {
        let (data, _) = simulate_lc(
            400,
            &[1.0, 1.0, 1.0, 1.0],
            &[0.5, -0.5, 0.2, 0.9],
            &[0, 0, 0, 0],
            &[vec![0.0]],
            &[1.0],
            3,
        );
        let fit = em_fit_latent_class(&data, 1, &[0, 0, 0, 0], LcStructural::None, &FitOptions::default())
            .unwrap();
        assert_eq!(fit.n_params, 4);
        // Independence MLE log-likelihood.
        let mut expect = 0.0;
        for i in 0..4 {
            let n1: f64 = (0..data.n()).map(|j| f64::from(data.code(j, i) as i32)).sum();
            let n = data.n() as f64;
            let p = n1 / n;
            expect += n1 * p.ln() + (n - n1) * (1.0 - p).ln();
        }
        assert_abs_diff_eq!(fit.loglik, expect, epsilon = 1e-6);
    }

    #[test]
    fn two_class_fit_recovers_separated_structure() {
        let truth_support = vec![vec![-1.5], vec![1.5]];
        let (data, classes) = simulate_lc(
            1500,
            &[1.0, 1.6, 1.2, 2.0, 0.9],
            &[0.0, 0.3, -0.3, 0.5, 0.0],
            &[0; 5],
            &truth_support,
            &[0.4, 0.6],
            17,
        );
        let opts = FitOptions { n_random_starts: 4, seed: 5, ..FitOptions::default() };
        let fit =
            em_fit_latent_class(&data, 2, &[0; 5], LcStructural::None, &opts).unwrap();
        assert!(fit.converged);
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
        let LatentSpec::Discrete { support, prior } = &fit.model.latent else { unreachable!() };
        // Sort classes by support on trait 1 to undo label switching.
        let mut idx = [0usize, 1];
        idx.sort_by(|&a, &b| support[a][0].partial_cmp(&support[b][0]).unwrap());
        let lo = idx[0];
        let hi = idx[1];
        let true_share = classes.iter().filter(|&&c| c == 0).count() as f64 / 1500.0;
        assert!((prior[lo] - true_share).abs() < 0.08, "prior {}", prior[lo]);
        assert!(support[lo][0] < 0.0 && support[hi][0] > 0.0);
    }

    #[test]
    fn deterministic_given_seed_and_tie_broken_by_start_index() {
        let (data, _) = simulate_lc(
            300,
            &[1.0, 1.3, 0.8, 1.1],
            &[0.2, -0.2, 0.4, 0.0],
            &[0; 4],
            &[vec![-1.0], vec![1.0]],
            &[0.5, 0.5],
            23,
        );
        let opts = FitOptions { n_random_starts: 3, seed: 9, ..FitOptions::default() };
        let a = em_fit_latent_class(&data, 2, &[0; 4], LcStructural::None, &opts).unwrap();
        let b = em_fit_latent_class(&data, 2, &[0; 4], LcStructural::None, &opts).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }


    #[test]
    fn classes_come_back_in_canonical_order() {
        let (data, _) = simulate_lc(
            800,
            &[1.0, 1.4, 1.1, 1.6, 0.9],
            &[0.0, 0.2, -0.2, 0.4, 0.1],
            &[0; 5],
            &[vec![2.0], vec![-2.0], vec![0.0]],
            &[0.3, 0.4, 0.3],
            41,
        );
        let opts = FitOptions { n_random_starts: 4, seed: 6, ..FitOptions::default() };
        let fit = em_fit_latent_class(&data, 3, &[0; 5], LcStructural::None, &opts).unwrap();
        let LatentSpec::Discrete { support, .. } = &fit.model.latent else { unreachable!() };
        assert!(support[0][0] < support[1][0] && support[1][0] < support[2][0]);
    }

    #[test]
    fn anchors_pinned_per_trait() {
        let (data, _) = simulate_lc(
            500,
            &[1.0, 1.5, 1.0, 1.2, 0.8, 1.4],
            &[0.0, 0.2, 0.0, -0.2, 0.3, 0.1],
            &[0, 0, 1, 1, 0, 1],
            &[vec![-1.0, -0.5], vec![1.0, 1.5]],
            &[0.5, 0.5],
            31,
        );
        let opts = FitOptions { n_random_starts: 2, seed: 2, ..FitOptions::default() };
        let fit =
            em_fit_latent_class(&data, 2, &[0, 0, 1, 1, 0, 1], LcStructural::None, &opts).unwrap();
        let ItemParams::LatentClass { disc, easiness, .. } = &fit.model.items[0] else {
            unreachable!()
        };
        assert_eq!((*disc, *easiness), (1.0, 0.0));
        let ItemParams::LatentClass { disc, easiness, .. } = &fit.model.items[2] else {
            unreachable!()
        };
        assert_eq!((*disc, *easiness), (1.0, 0.0));
        // 4 free items x 2 + 4 supports + 1 prior logit.
        assert_eq!(fit.n_params, 13);
    }
}
