//! Shared oracles for the acceptance suite. Everything here recomputes
//! quantities through independent routes (direct enumeration, fine grids,
//! generic optimization) — none of it calls the estimation paths it checks.

use quirt::math::sigmoid;
use quirt::model::{ItemSpec, ResponseMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Binary 2PL cohort with Normal(0,1) traits.
pub fn simulate_2pl(
    n: usize,
    slopes: &[f64],
    intercepts: &[f64],
    rng: &mut ChaCha8Rng,
) -> ResponseMatrix {
    let items: Vec<ItemSpec> =
        (0..slopes.len()).map(|i| ItemSpec::binary(&format!("i{i}"), "")).collect();
    let rows: Vec<Vec<i16>> = (0..n)
        .map(|_| {
            let theta = standard_normal(rng);
            slopes
                .iter()
                .zip(intercepts)
                .map(|(a, d)| i16::from(rng.random::<f64>() < sigmoid(a * theta + d)))
                .collect()
        })
        .collect();
    let ids = (0..n).map(|j| format!("p{j}")).collect();
    ResponseMatrix::from_rows(items, ids, rows).unwrap()
}

/// Binary two-dimensional 2PL cohort: the first half of the items loads on
/// trait 1, the second half on trait 2, traits independent.
pub fn simulate_two_dim(
    n: usize,
    slopes: &[f64],
    intercepts: &[f64],
    rng: &mut ChaCha8Rng,
) -> ResponseMatrix {
    let items: Vec<ItemSpec> =
        (0..slopes.len()).map(|i| ItemSpec::binary(&format!("i{i}"), "")).collect();
    let half = slopes.len() / 2;
    let rows: Vec<Vec<i16>> = (0..n)
        .map(|_| {
            let t1 = standard_normal(rng);
            let t2 = standard_normal(rng);
            slopes
                .iter()
                .zip(intercepts)
                .enumerate()
                .map(|(i, (a, d))| {
                    let theta = if i < half { t1 } else { t2 };
                    i16::from(rng.random::<f64>() < sigmoid(a * theta + d))
                })
                .collect()
        })
        .collect();
    let ids = (0..n).map(|j| format!("p{j}")).collect();
    ResponseMatrix::from_rows(items, ids, rows).unwrap()
}

/// Binary latent-class cohort; returns the true class labels too.
pub fn simulate_lc(
    n: usize,
    disc: &[f64],
    easiness: &[f64],
    allocation: &[usize],
    support: &[Vec<f64>],
    prior: &[f64],
    rng: &mut ChaCha8Rng,
) -> (ResponseMatrix, Vec<usize>) {
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
        rows.push(
            disc.iter()
                .zip(easiness)
                .zip(allocation)
                .map(|((a, d), &s)| {
                    i16::from(rng.random::<f64>() < sigmoid(a * support[class][s] + d))
                })
                .collect(),
        );
    }
    let ids = (0..n).map(|j| format!("p{j}")).collect();
    (ResponseMatrix::from_rows(items, ids, rows).unwrap(), classes)
}

/// Marginal log-likelihood of binary 2PL data by 2001-point grid
/// integration over [-8, 8] with normalized Normal weights.
pub fn grid_marginal_loglik_2pl(
    data: &ResponseMatrix,
    slopes: &[f64],
    intercepts: &[f64],
) -> f64 {
    let m = 2001;
    let grid: Vec<f64> = (0..m).map(|i| -8.0 + 16.0 * i as f64 / (m - 1) as f64).collect();
    let weights: Vec<f64> = {
        let raw: Vec<f64> = grid.iter().map(|x| (-0.5 * x * x).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    };
    let mut total = 0.0;
    for j in 0..data.n() {
        let mut marginal = 0.0;
        for (x, w) in grid.iter().zip(&weights) {
            let mut lik = 1.0;
            for (i, (a, d)) in slopes.iter().zip(intercepts).enumerate() {
                if let Some(y) = data.response(j, i) {
                    let p = sigmoid(a * x + d);
                    lik *= if y == 1 { p } else { 1.0 - p };
                }
            }
            marginal += w * lik;
        }
        total += marginal.ln();
    }
    total
}

/// Nelder-Mead maximization, restarted from the incumbent until the
/// improvement stalls. Independent of every fitting path in the crate.
pub fn nelder_mead_maximize<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    initial_step: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let mut best = x0.to_vec();
    let mut best_val = f(x0);
    let mut step = initial_step;
    for _restart in 0..6 {
        let (x, v) = nm_once(f, &best, step, max_evals);
        if v > best_val + 1e-12 {
            best = x;
            best_val = v;
        } else {
            best = x;
            best_val = best_val.max(v);
        }
        step *= 0.2;
    }
    (best, best_val)
}

fn nm_once<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    step: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let dim = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for k in 0..dim {
        let mut v = x0.to_vec();
        v[k] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    let mut evals = values.len();
    while evals < max_evals {
        // Sort descending by value (maximization).
        let mut order: Vec<usize> = (0..simplex.len()).collect();
        order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
        let simplex_sorted: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let values_sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = simplex_sorted;
        values = values_sorted;
        if (values[0] - values[dim]).abs() < 1e-13 * (1.0 + values[0].abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|k| simplex[..dim].iter().map(|v| v[k]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let reflect: Vec<f64> =
            centroid.iter().zip(&worst).map(|(c, w)| c + (c - w)).collect();
        let fr = f(&reflect);
        evals += 1;
        if fr > values[0] {
            let expand: Vec<f64> =
                centroid.iter().zip(&worst).map(|(c, w)| c + 2.0 * (c - w)).collect();
            let fe = f(&expand);
            evals += 1;
            if fe > fr {
                simplex[dim] = expand;
                values[dim] = fe;
            } else {
                simplex[dim] = reflect;
                values[dim] = fr;
            }
        } else if fr > values[dim - 1] {
            simplex[dim] = reflect;
            values[dim] = fr;
        } else {
            let contract: Vec<f64> =
                centroid.iter().zip(&worst).map(|(c, w)| c + 0.5 * (w - c)).collect();
            let fc = f(&contract);
            evals += 1;
            if fc > values[dim] {
                simplex[dim] = contract;
                values[dim] = fc;
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].clone();
                for v in simplex.iter_mut().skip(1) {
                    for (vk, bk) in v.iter_mut().zip(&best) {
                        *vk = bk + 0.5 * (*vk - bk);
                    }
                }
                for (k, v) in simplex.iter().enumerate().skip(1) {
                    values[k] = f(v);
                    evals += 1;
                }
            }
        }
    }
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    (simplex[best].clone(), values[best])
}

/// Emit one acceptance line and fail the test when the criterion does not
/// hold.
pub fn report(number: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {number:02} {name}: {status} ({detail})");
    assert!(pass, "acceptance criterion {number} failed: {detail}");
}
