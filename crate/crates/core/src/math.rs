//! Numerical building blocks: stable logistic functions, log-sum-exp,
//! Gauss-Hermite nodes, Halton sequences and a safeguarded Newton maximizer.

use nalgebra::{DMatrix, DVector};

/// Numerically stable logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable `ln(1 + e^x)`.
#[inline]
pub fn log1pexp(x: f64) -> f64 {
    if x <= -37.0 {
        x.exp()
    } else if x <= 18.0 {
        x.exp().ln_1p()
    } else if x <= 33.3 {
        x + (-x).exp()
    } else {
        x
    }
}

/// Stable `ln(sigmoid(x))`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -log1pexp(-x)
}

/// Softplus `ln(1 + e^x)`, the reparameterization used for non-negative slopes.
#[inline]
pub fn softplus(x: f64) -> f64 {
    log1pexp(x)
}

/// Inverse of [`softplus`]; the argument must be positive.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Log-sum-exp over a slice. Returns `-inf` for an empty slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Nodes and weights of the n-point Gauss-Hermite rule for the weight
/// function `exp(-x^2)` (so the weights sum to `sqrt(pi)`).
///
/// Newton iteration on the Hermite recurrence; accurate well beyond the
/// node counts used for latent-trait integration.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_hermite needs at least one point");
    let mut nodes = vec![0.0_f64; n];
    let mut weights = vec![0.0_f64; n];
    let m = (n + 1) / 2;
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            // Evaluate the orthonormal Hermite polynomial at z.
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0_f64;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j as f64 - 1.0) / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    // Ascending order.
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

const HALTON_PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical-inverse (van der Corput) value of `index` in the given base.
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut value = 0.0;
    let mut factor = inv;
    while index > 0 {
        value += (index % base) as f64 * factor;
        index /= base;
        factor *= inv;
    }
    value
}

/// `n` points of the Halton sequence in `dims` dimensions with a
/// Cranley-Patterson rotation by `shift` (one offset per dimension).
pub fn halton_points(n: usize, dims: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    assert!(dims <= HALTON_PRIMES.len(), "halton supports up to 8 dimensions");
    assert_eq!(shift.len(), dims);
    (0..n)
        .map(|i| {
            (0..dims)
                .map(|d| {
                    let u = radical_inverse(i as u64 + 1, HALTON_PRIMES[d]) + shift[d];
                    let u = u - u.floor();
                    u.clamp(1e-12, 1.0 - 1e-12)
                })
                .collect()
        })
        .collect()
}

/// Outcome of [`newton_maximize`].
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
}

/// Safeguarded Newton ascent for a smooth objective.
///
/// `eval` returns the objective value and gradient; the Hessian is taken by
/// central differences of the gradient. Steps are halved until the objective
/// does not decrease, so a call starting from the current maximizer never
/// moves downhill — the property EM relies on for monotone ascent.
pub fn newton_maximize<F>(x0: &[f64], eval: F, max_iter: usize, grad_tol: f64) -> NewtonOutcome
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0.to_vec();
    let (mut value, mut grad) = eval(&x);
    let mut converged = false;
    for _ in 0..max_iter {
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < grad_tol {
            converged = true;
            break;
        }
        let hess = fd_hessian_of_grad(&x, &grad, &eval);
        let step = solve_ascent_step(&hess, &grad);
        // Backtracking line search on the objective.
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = x.iter().zip(&step).map(|(xi, s)| xi + alpha * s).collect();
            let (v, g) = eval(&cand);
            if v.is_finite() && v >= value - 1e-14 * (1.0 + value.abs()) {
                let accepted_better = v > value;
                x = cand;
                value = v;
                grad = g;
                improved = accepted_better;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            converged = true;
            break;
        }
    }
    NewtonOutcome { x, value, converged }
}

fn fd_hessian_of_grad<F>(x: &[f64], grad: &[f64], eval: &F) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let dim = x.len();
    let mut hess = DMatrix::zeros(dim, dim);
    let mut xp = x.to_vec();
    for k in 0..dim {
        let h = 1e-6 * (1.0 + x[k].abs());
        xp[k] = x[k] + h;
        let (_, gp) = eval(&xp);
        xp[k] = x[k];
        for r in 0..dim {
            hess[(r, k)] = (gp[r] - grad[r]) / h;
        }
    }
    // Symmetrize.
    for r in 0..dim {
        for c in (r + 1)..dim {
            let avg = 0.5 * (hess[(r, c)] + hess[(c, r)]);
            hess[(r, c)] = avg;
            hess[(c, r)] = avg;
        }
    }
    hess
}

/// Solve `-H s = g` for an ascent direction, regularizing until the system
/// is solvable and the direction points uphill.
pub(crate) fn solve_ascent_step(hess: &DMatrix<f64>, grad: &[f64]) -> Vec<f64> {
    let dim = grad.len();
    let g = DVector::from_column_slice(grad);
    let mut ridge = 0.0;
    let scale = hess.iter().map(|v| v.abs()).fold(0.0_f64, f64::max).max(1.0);
    for _ in 0..30 {
        let mut a = -hess.clone();
        for d in 0..dim {
            a[(d, d)] += ridge;
        }
        if let Some(chol) = a.clone().cholesky() {
            let s = chol.solve(&g);
            let uphill: f64 = s.iter().zip(grad).map(|(si, gi)| si * gi).sum();
            if uphill > 0.0 {
                return s.iter().cloned().collect();
            }
        }
        ridge = if ridge == 0.0 { 1e-8 * scale } else { ridge * 10.0 };
    }
    // Fall back to a small gradient step.
    grad.iter().map(|g| g / scale).collect()
}

/// Mean of a slice; 0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sigmoid_matches_naive() {
        for &x in &[-700.0, -30.0, -1.0, 0.0, 0.5, 30.0, 700.0] {
            let naive = 1.0 / (1.0 + (-x as f64).exp());
            assert_abs_diff_eq!(sigmoid(x), naive, epsilon = 1e-12);
            assert!(sigmoid(x) > 0.0 || x <= -700.0);
        }
        assert_abs_diff_eq!(sigmoid(0.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn log1pexp_stable() {
        for &x in &[-800.0f64, -40.0, -1.0, 0.0, 10.0, 40.0, 800.0] {
            let direct = if x < 700.0 { (1.0 + x.exp()).ln() } else { x };
            assert_abs_diff_eq!(log1pexp(x), direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn softplus_round_trip() {
        for &a in &[1e-6, 0.1, 1.0, 2.5, 40.0] {
            assert_abs_diff_eq!(softplus(softplus_inv(a)), a, epsilon = 1e-10);
        }
    }

    #[test]
    fn logsumexp_basics() {
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_abs_diff_eq!(logsumexp(&[0.0, 0.0]), 2.0_f64.ln(), epsilon = 1e-14);
        // Scale invariance under large offsets.
        assert_abs_diff_eq!(logsumexp(&[-1000.0, -1000.0]), -1000.0 + 2.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn gauss_hermite_moments() {
        let sqrt_pi = std::f64::consts::PI.sqrt();
        for n in [2usize, 5, 9, 21, 42] {
            let (x, w) = gauss_hermite(n);
            let s0: f64 = w.iter().sum();
            assert_abs_diff_eq!(s0, sqrt_pi, epsilon = 1e-12);
            let s1: f64 = x.iter().zip(&w).map(|(xi, wi)| xi * wi).sum();
            assert_abs_diff_eq!(s1, 0.0, epsilon = 1e-12);
            let s2: f64 = x.iter().zip(&w).map(|(xi, wi)| xi * xi * wi).sum();
            assert_abs_diff_eq!(s2, sqrt_pi / 2.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn gauss_hermite_two_point_nodes() {
        let (x, _) = gauss_hermite(2);
        assert_abs_diff_eq!(x[0], -(0.5_f64).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], (0.5_f64).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn halton_first_points_base2_3() {
        let pts = halton_points(4, 2, &[0.0, 0.0]);
        assert_abs_diff_eq!(pts[0][0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pts[1][0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(pts[0][1], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pts[1][1], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn newton_finds_quadratic_max() {
        // f(x, y) = -(x-1)^2 - 2(y+0.5)^2
        let out = newton_maximize(
            &[0.0, 0.0],
            |x| {
                let f = -(x[0] - 1.0).powi(2) - 2.0 * (x[1] + 0.5).powi(2);
                let g = vec![-2.0 * (x[0] - 1.0), -4.0 * (x[1] + 0.5)];
                (f, g)
            },
            50,
            1e-10,
        );
        assert!(out.converged);
        assert_abs_diff_eq!(out.x[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(out.x[1], -0.5, epsilon = 1e-6);
    }
}
