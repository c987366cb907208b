//! Per-item M-step maximizers.
//!
//! Each item's expected complete-data log-likelihood is a weighted
//! categorical likelihood with quadrature nodes (or class support values) as
//! fixed regressors. Newton steps with backtracking never decrease the
//! objective, which preserves the EM ascent property.

use crate::math::{log1pexp, logsumexp, newton_maximize, sigmoid, softplus, softplus_inv};
use crate::model::ItemParams;

/// One weighted observation: regressor values and expected counts per
/// category.
pub(crate) struct ItemObs {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

/// Which slope coordinates move, and whether they are softplus-constrained
/// to be non-negative.
#[derive(Clone)]
pub(crate) struct SlopeTransform {
    pub free: Vec<bool>,
    pub nonneg: bool,
}

impl SlopeTransform {
    fn to_internal(&self, a: f64) -> f64 {
        if self.nonneg {
            softplus_inv(a.max(1e-9))
        } else {
            a
        }
    }

    fn to_natural(&self, u: f64) -> f64 {
        if self.nonneg {
            softplus(u.max(-40.0))
        } else {
            u
        }
    }

    /// d(natural)/d(internal) at internal value `u`.
    fn jacobian(&self, u: f64) -> f64 {
        if self.nonneg {
            sigmoid(u.max(-40.0))
        } else {
            1.0
        }
    }
}

/// Maximize a weighted Bernoulli log-likelihood
/// `sum_q w1 ln s(eta) + w0 ln s(-eta)`, `eta = a.x + d`.
/// Returns updated `(slopes, intercept)`.
pub(crate) fn max_binary(
    obs: &[ItemObs],
    slopes0: &[f64],
    intercept0: f64,
    tr: &SlopeTransform,
) -> (Vec<f64>, f64) {
    let free_idx: Vec<usize> = (0..slopes0.len()).filter(|&s| tr.free[s]).collect();
    let n_free = free_idx.len();
    let mut x0: Vec<f64> = free_idx.iter().map(|&s| tr.to_internal(slopes0[s])).collect();
    x0.push(intercept0);
    let eval = |p: &[f64]| -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let mut grad = vec![0.0; p.len()];
        for o in obs {
            let mut eta = p[n_free];
            for (k, &s) in free_idx.iter().enumerate() {
                eta += tr.to_natural(p[k]) * o.x[s];
            }
            for (s, &a) in slopes0.iter().enumerate() {
                if !tr.free[s] {
                    eta += a * o.x[s];
                }
            }
            let (w0, w1) = (o.w[0], o.w[1]);
            value += w1 * -log1pexp(-eta) + w0 * -log1pexp(eta);
            let resid = w1 - (w0 + w1) * sigmoid(eta);
            for (k, &s) in free_idx.iter().enumerate() {
                grad[k] += resid * o.x[s] * tr.jacobian(p[k]);
            }
            grad[n_free] += resid;
        }
        (value, grad)
    };
    let out = newton_maximize(&x0, eval, 30, 1e-9);
    let mut slopes = slopes0.to_vec();
    for (k, &s) in free_idx.iter().enumerate() {
        slopes[s] = tr.to_natural(out.x[k]);
    }
    (slopes, out.x[n_free])
}

/// Maximize a weighted graded (cumulative logistic) log-likelihood.
/// Returns updated `(slopes, intercepts)`; the intercept ordering is kept
/// valid because any step that breaks it hits a `-inf` objective and is
/// rejected by the line search.
pub(crate) fn max_graded(
    obs: &[ItemObs],
    slopes0: &[f64],
    intercepts0: &[f64],
    tr: &SlopeTransform,
) -> (Vec<f64>, Vec<f64>) {
    let free_idx: Vec<usize> = (0..slopes0.len()).filter(|&s| tr.free[s]).collect();
    let n_free = free_idx.len();
    let km1 = intercepts0.len();
    let mut x0: Vec<f64> = free_idx.iter().map(|&s| tr.to_internal(slopes0[s])).collect();
    x0.extend_from_slice(intercepts0);
    let eval = |p: &[f64]| -> (f64, Vec<f64>) {
        let d = &p[n_free..];
        let mut value = 0.0;
        let mut grad = vec![0.0; p.len()];
        if d.windows(2).any(|w| w[1] >= w[0]) {
            return (f64::NEG_INFINITY, grad);
        }
        for o in obs {
            let mut eta = 0.0;
            for (k, &s) in free_idx.iter().enumerate() {
                eta += tr.to_natural(p[k]) * o.x[s];
            }
            for (s, &a) in slopes0.iter().enumerate() {
                if !tr.free[s] {
                    eta += a * o.x[s];
                }
            }
            // g[m] = G_m (1 - G_m) with G_0 = 1, G_K = 0.
            let mut big_g = vec![1.0; km1 + 2];
            let mut little_g = vec![0.0; km1 + 2];
            for m in 1..=km1 {
                let g = sigmoid(eta + d[m - 1]);
                big_g[m] = g;
                little_g[m] = g * (1.0 - g);
            }
            big_g[km1 + 1] = 0.0;
            for k in 0..=km1 {
                let wk = o.w[k];
                if wk == 0.0 {
                    continue;
                }
                let pk = big_g[k] - big_g[k + 1];
                if pk <= 0.0 {
                    return (f64::NEG_INFINITY, vec![0.0; p.len()]);
                }
                value += wk * pk.ln();
                let ratio = wk / pk;
                let dslope = little_g[k] - little_g[k + 1];
                for (kk, &s) in free_idx.iter().enumerate() {
                    grad[kk] += ratio * dslope * o.x[s] * tr.jacobian(p[kk]);
                }
                if k >= 1 {
                    grad[n_free + k - 1] += ratio * little_g[k];
                }
                if k + 1 <= km1 {
                    grad[n_free + k] -= ratio * little_g[k + 1];
                }
            }
        }
        (value, grad)
    };
    let out = newton_maximize(&x0, eval, 40, 1e-9);
    let mut slopes = slopes0.to_vec();
    for (k, &s) in free_idx.iter().enumerate() {
        slopes[s] = tr.to_natural(out.x[k]);
    }
    (slopes, out.x[n_free..].to_vec())
}

/// Maximize a weighted multinomial (nominal softmax) log-likelihood with
/// category 0 pinned at zero. Nominal slopes are never sign-constrained.
pub(crate) fn max_nominal(
    obs: &[ItemObs],
    slopes0: &[Vec<f64>],
    intercepts0: &[f64],
    free_dims: &[bool],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n_cat = intercepts0.len();
    let dims = slopes0[0].len();
    let free_idx: Vec<usize> = (0..dims).filter(|&s| free_dims[s]).collect();
    let per_cat = free_idx.len() + 1;
    let mut x0 = Vec::with_capacity((n_cat - 1) * per_cat);
    for cat in 1..n_cat {
        for &s in &free_idx {
            x0.push(slopes0[cat][s]);
        }
        x0.push(intercepts0[cat]);
    }
    let eval = |p: &[f64]| -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let mut grad = vec![0.0; p.len()];
        let mut logits = vec![0.0; n_cat];
        for o in obs {
            logits[0] = 0.0;
            for cat in 1..n_cat {
                let base = (cat - 1) * per_cat;
                let mut eta = p[base + free_idx.len()];
                for (k, &s) in free_idx.iter().enumerate() {
                    eta += p[base + k] * o.x[s];
                }
                for (s, &a) in slopes0[cat].iter().enumerate() {
                    if !free_dims[s] {
                        eta += a * o.x[s];
                    }
                }
                logits[cat] = eta;
            }
            let lse = logsumexp(&logits);
            let total: f64 = o.w.iter().sum();
            for cat in 0..n_cat {
                value += o.w[cat] * (logits[cat] - lse);
            }
            for cat in 1..n_cat {
                let p_cat = (logits[cat] - lse).exp();
                let resid = o.w[cat] - total * p_cat;
                let base = (cat - 1) * per_cat;
                for (k, &s) in free_idx.iter().enumerate() {
                    grad[base + k] += resid * o.x[s];
                }
                grad[base + free_idx.len()] += resid;
            }
        }
        (value, grad)
    };
    let out = newton_maximize(&x0, eval, 40, 1e-9);
    let mut slopes = slopes0.to_vec();
    let mut intercepts = intercepts0.to_vec();
    for cat in 1..n_cat {
        let base = (cat - 1) * per_cat;
        for (k, &s) in free_idx.iter().enumerate() {
            slopes[cat][s] = out.x[base + k];
        }
        intercepts[cat] = out.x[base + free_idx.len()];
    }
    (slopes, intercepts)
}

/// Dispatch one item update on its family. `free_dims`/`nonneg` describe the
/// slope constraints in force for this item.
pub(crate) fn update_item(
    params: &ItemParams,
    obs: &[ItemObs],
    free_dims: Vec<bool>,
    nonneg: bool,
) -> ItemParams {
    match params {
        ItemParams::Binary { slopes, intercept } => {
            let tr = SlopeTransform { free: free_dims, nonneg };
            let (a, d) = max_binary(obs, slopes, *intercept, &tr);
            ItemParams::Binary { slopes: a, intercept: d }
        }
        ItemParams::Graded { slopes, intercepts } => {
            let tr = SlopeTransform { free: free_dims, nonneg };
            let (a, d) = max_graded(obs, slopes, intercepts, &tr);
            ItemParams::Graded { slopes: a, intercepts: d }
        }
        ItemParams::Nominal { slopes, intercepts } => {
            let (a, d) = max_nominal(obs, slopes, intercepts, &free_dims);
            ItemParams::Nominal { slopes: a, intercepts: d }
        }
        ItemParams::LatentClass { disc, easiness, trait_index } => {
            // One regressor: the allocated support value.
            let tr = SlopeTransform { free: free_dims, nonneg };
            let (a, d) = max_binary(obs, &[*disc], *easiness, &tr);
            ItemParams::LatentClass { disc: a[0], easiness: d, trait_index: *trait_index }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn binary_newton_matches_closed_form_for_intercept_only() {
        // Single observation at x = 0: MLE of d is logit(w1 / (w0 + w1)).
        let obs = vec![ItemObs { x: vec![0.0], w: vec![30.0, 70.0] }];
        let tr = SlopeTransform { free: vec![false], nonneg: false };
        let (_, d) = max_binary(&obs, &[0.0], 0.0, &tr);
        assert_abs_diff_eq!(sigmoid(d), 0.7, epsilon = 1e-8);
    }

    #[test]
    fn binary_newton_recovers_separable_logit() {
        // Two design points with known success rates: saturated solution.
        let obs = vec![
            ItemObs { x: vec![-1.0], w: vec![80.0, 20.0] },
            ItemObs { x: vec![1.0], w: vec![20.0, 80.0] },
        ];
        let tr = SlopeTransform { free: vec![true], nonneg: false };
        let (a, d) = max_binary(&obs, &[0.5], 0.0, &tr);
        // logit(0.2) = -a + d, logit(0.8) = a + d.
        let logit8 = (0.8f64 / 0.2).ln();
        assert_abs_diff_eq!(a[0], logit8, epsilon = 1e-6);
        assert_abs_diff_eq!(d, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn nonneg_transform_keeps_slope_positive() {
        // Data favor a negative slope; the softplus transform pins it near 0.
        let obs = vec![
            ItemObs { x: vec![-1.0], w: vec![10.0, 90.0] },
            ItemObs { x: vec![1.0], w: vec![90.0, 10.0] },
        ];
        let tr = SlopeTransform { free: vec![true], nonneg: true };
        let (a, _) = max_binary(&obs, &[1.0], 0.0, &tr);
        assert!(a[0] >= 0.0);
        assert!(a[0] < 1e-3);
    }

    #[test]
    fn graded_newton_improves_and_keeps_order() {
        let obs = vec![
            ItemObs { x: vec![-1.5], w: vec![50.0, 30.0, 5.0] },
            ItemObs { x: vec![0.0], w: vec![20.0, 40.0, 25.0] },
            ItemObs { x: vec![1.5], w: vec![5.0, 25.0, 60.0] },
        ];
        let tr = SlopeTransform { free: vec![true], nonneg: false };
        let (a, d) = max_graded(&obs, &[1.0], &[1.0, -1.0], &tr);
        assert!(a[0] > 0.0);
        assert!(d[0] > d[1]);
    }

    #[test]
    fn nominal_newton_matches_marginal_softmax_at_zero_slope_design() {
        let obs = vec![ItemObs { x: vec![0.0], w: vec![20.0, 30.0, 50.0] }];
        let (_, d) = max_nominal(
            &obs,
            &[vec![0.0], vec![0.0], vec![0.0]],
            &[0.0, 0.0, 0.0],
            &[false],
        );
        assert_abs_diff_eq!(d[1], (30.0f64 / 20.0).ln(), epsilon = 1e-7);
        assert_abs_diff_eq!(d[2], (50.0f64 / 20.0).ln(), epsilon = 1e-7);
    }
}
