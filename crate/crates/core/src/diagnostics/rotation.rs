//! Factor loadings from discrimination parameters, and varimax rotation.

use serde::{Deserialize, Serialize};

use crate::model::ItemParams;

/// An I x S loading matrix with the orthogonal rotation that produced it
/// and the cumulative-variance percentages per factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingMatrix {
    pub loadings: Vec<Vec<f64>>,
    /// Orthogonal S x S rotation applied to the unrotated loadings.
    pub rotation: Vec<Vec<f64>>,
    pub cumulative_variance_pct: Vec<f64>,
}

impl LoadingMatrix {
    fn new(loadings: Vec<Vec<f64>>, rotation: Vec<Vec<f64>>) -> Self {
        let cumulative_variance_pct = cumulative_variance(&loadings);
        Self { loadings, rotation, cumulative_variance_pct }
    }

    pub fn n_items(&self) -> usize {
        self.loadings.len()
    }

    pub fn n_factors(&self) -> usize {
        self.loadings.first().map_or(0, Vec::len)
    }
}

fn cumulative_variance(loadings: &[Vec<f64>]) -> Vec<f64> {
    let n_items = loadings.len().max(1) as f64;
    let s = loadings.first().map_or(0, Vec::len);
    let mut acc = 0.0;
    (0..s)
        .map(|f| {
            let ssq: f64 = loadings.iter().map(|row| row[f] * row[f]).sum();
            acc += 100.0 * ssq / n_items;
            acc
        })
        .collect()
}

fn identity(s: usize) -> Vec<Vec<f64>> {
    (0..s)
        .map(|r| (0..s).map(|c| f64::from(u8::from(r == c))).collect())
        .collect()
}

/// Standardized loadings from discrimination parameters under the logistic
/// latent-response formulation:
/// `lambda_is = a_is / sqrt(sum_s a_is^2 + pi^2 / 3)`.
///
/// Nominal items have no single slope vector; the top category's slopes
/// divided by `K - 1` stand in (the shared per-step slope when
/// adjacent-category logits are evenly spaced).
pub fn slopes_to_loadings(items: &[ItemParams], dims: usize) -> LoadingMatrix {
    let resid = std::f64::consts::PI.powi(2) / 3.0;
    let loadings = items
        .iter()
        .map(|item| {
            let slopes: Vec<f64> = match item {
                ItemParams::Binary { slopes, .. } | ItemParams::Graded { slopes, .. } => {
                    slopes.clone()
                }
                ItemParams::Nominal { slopes, .. } => {
                    let k = slopes.len();
                    slopes[k - 1].iter().map(|a| a / (k as f64 - 1.0)).collect()
                }
                ItemParams::LatentClass { disc, trait_index, .. } => {
                    let mut v = vec![0.0; dims];
                    v[*trait_index] = *disc;
                    v
                }
            };
            let mut padded = vec![0.0; dims];
            for (p, a) in padded.iter_mut().zip(&slopes) {
                *p = *a;
            }
            let denom = (padded.iter().map(|a| a * a).sum::<f64>() + resid).sqrt();
            padded.iter().map(|a| a / denom).collect()
        })
        .collect();
    LoadingMatrix::new(loadings, identity(dims))
}

/// The raw varimax criterion: sum over factors of the variance of the
/// squared loadings.
pub fn varimax_criterion(loadings: &[Vec<f64>]) -> f64 {
    let n = loadings.len() as f64;
    let s = loadings.first().map_or(0, Vec::len);
    (0..s)
        .map(|f| {
            let sq: Vec<f64> = loadings.iter().map(|row| row[f] * row[f]).collect();
            let mean = sq.iter().sum::<f64>() / n;
            sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
        })
        .sum()
}

/// Orthogonal varimax rotation by pairwise Jacobi sweeps. The output
/// criterion never falls below the input's; a single factor is a no-op.
pub fn varimax_rotate(input: &LoadingMatrix) -> LoadingMatrix {
    let s = input.n_factors();
    if s < 2 {
        return LoadingMatrix::new(input.loadings.clone(), identity(s.max(1)));
    }
    let n = input.n_items();
    let mut loadings = input.loadings.clone();
    let mut rotation = identity(s);
    for _sweep in 0..100 {
        let before = varimax_criterion(&loadings);
        for a in 0..s {
            for b in (a + 1)..s {
                let angle = optimal_pair_angle(&loadings, a, b, n);
                if angle.abs() < 1e-12 {
                    continue;
                }
                rotate_pair(&mut loadings, a, b, angle);
                rotate_pair(&mut rotation, a, b, angle);
            }
        }
        let after = varimax_criterion(&loadings);
        if after - before < 1e-13 {
            break;
        }
    }
    LoadingMatrix::new(loadings, rotation)
}

/// Closed-form optimal planar angle for one factor pair (Kaiser).
fn optimal_pair_angle(loadings: &[Vec<f64>], fa: usize, fb: usize, n: usize) -> f64 {
    let (mut big_a, mut big_b, mut big_c, mut big_d) = (0.0, 0.0, 0.0, 0.0);
    for row in loadings {
        let u = row[fa] * row[fa] - row[fb] * row[fb];
        let v = 2.0 * row[fa] * row[fb];
        big_a += u;
        big_b += v;
        big_c += u * u - v * v;
        big_d += 2.0 * u * v;
    }
    let nf = n as f64;
    let num = big_d - 2.0 * big_a * big_b / nf;
    let den = big_c - (big_a * big_a - big_b * big_b) / nf;
    0.25 * num.atan2(den)
}

fn rotate_pair(m: &mut [Vec<f64>], a: usize, b: usize, angle: f64) {
    let (sin, cos) = angle.sin_cos();
    for row in m.iter_mut() {
        let (ra, rb) = (row[a], row[b]);
        row[a] = cos * ra + sin * rb;
        row[b] = -sin * ra + cos * rb;
    }
}
