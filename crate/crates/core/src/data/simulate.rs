//! Synthetic-cohort simulation with a retained truth record.
//!
//! Draws are per individual from derived RNG streams, so simulation is
//! reproducible bit for bit and parallelizes without shared state. Group
//! labels and categorical covariates can shift the latent distribution
//! (confounding and injected disparities); the truth record keeps every
//! latent draw for oracle tests.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::matching::CovariateTable;
use crate::math::logsumexp;
use crate::model::{ItemSpec, LatentSpec, ModelSpec, ResponseMatrix, MISSING};
use crate::rng::derive_rng_indexed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    pub weight: f64,
    /// Latent shift for the group: per-trait mean shift (Normal latent) or
    /// per-class logit shift for classes 2..C (discrete latent). Empty
    /// means no effect.
    #[serde(default)]
    pub effect: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSim {
    pub name: String,
    pub categories: Vec<String>,
    /// Per group (aligned with `SimulationSpec::groups`), category
    /// probabilities.
    pub probs_by_group: Vec<Vec<f64>>,
    /// Per category, latent shift with the same convention as
    /// [`GroupSpec::effect`]. Empty means no effect.
    #[serde(default)]
    pub effects: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    /// True measurement model and latent distribution (no structural model;
    /// group and covariate effects are declared below).
    pub model: ModelSpec,
    pub items: Vec<ItemSpec>,
    pub n: usize,
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub covariates: Vec<CovariateSim>,
    /// Per-item probability of a structurally ineligible cell.
    #[serde(default)]
    pub na_probs: Vec<f64>,
    pub seed: u64,
}

/// Latent draws retained for oracle tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub seed: u64,
    pub groups: Vec<String>,
    /// Class index per individual (discrete latent).
    pub classes: Option<Vec<usize>>,
    /// Trait values per individual.
    pub thetas: Vec<Vec<f64>>,
}

pub fn simulate_cohort(
    spec: &SimulationSpec,
) -> Result<(ResponseMatrix, CovariateTable, TruthRecord)> {
    spec.model.check_items(&spec.items)?;
    spec.model.latent.validate()?;
    if spec.groups.is_empty() {
        return Err(Error::InvalidParameter("at least one group required".into()));
    }
    if !spec.na_probs.is_empty() && spec.na_probs.len() != spec.items.len() {
        return Err(Error::DimensionMismatch("na_probs must cover every item".into()));
    }
    for cov in &spec.covariates {
        if cov.probs_by_group.len() != spec.groups.len() {
            return Err(Error::DimensionMismatch(format!(
                "covariate '{}': one probability row per group required",
                cov.name
            )));
        }
        if cov.probs_by_group.iter().any(|p| p.len() != cov.categories.len()) {
            return Err(Error::DimensionMismatch(format!(
                "covariate '{}': probability rows must cover every category",
                cov.name
            )));
        }
    }
    let dims = spec.model.dims();
    let total_weight: f64 = spec.groups.iter().map(|g| g.weight).sum();
    let chol = match &spec.model.latent {
        LatentSpec::Normal { cov, .. } => {
            let m = DMatrix::from_fn(dims, dims, |r, c| cov[r][c]);
            Some(m.cholesky().ok_or(Error::NotPositiveDefinite)?.l())
        }
        LatentSpec::Discrete { .. } => None,
    };

    struct Draw {
        group: usize,
        cov_codes: Vec<u16>,
        class: Option<usize>,
        theta: Vec<f64>,
        row: Vec<i16>,
    }

    let draws: Vec<Draw> = crate::par::par_map_range(spec.n, |j| {
        let mut rng = derive_rng_indexed(spec.seed, "sim-ind", j);
        let group = categorical(&mut rng, &spec.groups.iter().map(|g| g.weight / total_weight).collect::<Vec<_>>());
        let cov_codes: Vec<u16> = spec
            .covariates
            .iter()
            .map(|cov| categorical(&mut rng, &cov.probs_by_group[group]) as u16)
            .collect();
        // Accumulate latent shifts from the group and covariate categories.
        let shift_len = match &spec.model.latent {
            LatentSpec::Normal { .. } => dims,
            LatentSpec::Discrete { support, .. } => support.len().saturating_sub(1),
        };
        let mut shift = vec![0.0; shift_len];
        add_effect(&mut shift, &spec.groups[group].effect);
        for (cov, &code) in spec.covariates.iter().zip(&cov_codes) {
            if let Some(effect) = cov.effects.get(code as usize) {
                add_effect(&mut shift, effect);
            }
        }
        let (class, theta) = match &spec.model.latent {
            LatentSpec::Normal { mean, .. } => {
                let z: Vec<f64> = (0..dims).map(|_| standard_normal(&mut rng)).collect();
                let l = chol.as_ref().expect("chol for normal");
                let theta: Vec<f64> = (0..dims)
                    .map(|r| {
                        mean[r]
                            + shift[r]
                            + (0..dims).map(|c| l[(r, c)] * z[c]).sum::<f64>()
                    })
                    .collect();
                (None, theta)
            }
            LatentSpec::Discrete { support, prior } => {
                let mut logits = vec![0.0];
                for c in 1..support.len() {
                    logits.push(
                        (prior[c].max(1e-300) / prior[0].max(1e-300)).ln() + shift[c - 1],
                    );
                }
                let lse = logsumexp(&logits);
                let probs: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
                let class = categorical(&mut rng, &probs);
                (Some(class), support[class].clone())
            }
        };
        let row: Vec<i16> = spec
            .model
            .items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let na = spec.na_probs.get(i).copied().unwrap_or(0.0);
                if na > 0.0 && rng.random::<f64>() < na {
                    return MISSING;
                }
                let k = item.n_categories();
                let probs: Vec<f64> = (0..k).map(|c| item.prob(&theta, c as u16)).collect();
                categorical(&mut rng, &probs) as i16
            })
            .collect();
        Draw { group, cov_codes, class, theta, row }
    });

    let ids: Vec<String> = (0..spec.n).map(|j| format!("i{j:06}")).collect();
    let rows: Vec<Vec<i16>> = draws.iter().map(|d| d.row.clone()).collect();
    let data = ResponseMatrix::from_rows(spec.items.clone(), ids.clone(), rows)?;

    let groups: Vec<String> =
        draws.iter().map(|d| spec.groups[d.group].label.clone()).collect();
    let covariates: Vec<String> = spec.covariates.iter().map(|c| c.name.clone()).collect();
    let categories: Vec<Vec<String>> =
        spec.covariates.iter().map(|c| c.categories.clone()).collect();
    let mut codes = Vec::with_capacity(spec.n * covariates.len());
    let mut raw = Vec::with_capacity(spec.n);
    for d in &draws {
        codes.extend_from_slice(&d.cov_codes);
        raw.push(
            d.cov_codes
                .iter()
                .enumerate()
                .map(|(k, &c)| spec.covariates[k].categories[c as usize].clone())
                .collect(),
        );
    }
    let table =
        CovariateTable::new(ids, groups.clone(), covariates, categories, codes, raw)?;

    let truth = TruthRecord {
        seed: spec.seed,
        groups,
        classes: draws.first().and_then(|d| d.class.map(|_| ())).map(|()| {
            draws.iter().map(|d| d.class.expect("discrete draws")).collect()
        }),
        thetas: draws.into_iter().map(|d| d.theta).collect(),
    };
    Ok((data, table, truth))
}

fn add_effect(shift: &mut [f64], effect: &[f64]) {
    for (s, e) in shift.iter_mut().zip(effect) {
        *s += e;
    }
}

fn categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
