//! Domain types and pure evaluation of item response probabilities and
//! conditional/marginal log-likelihoods.
//!
//! All mixture and softmax sums run in the log domain with log-sum-exp;
//! response patterns with many items underflow in the linear domain.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::math::{log_sigmoid, logsumexp, sigmoid};
use crate::quadrature::QuadratureRule;
use crate::structural::{prior_class_probs, StructuralModel};
use crate::{Error, Result};

/// Cell code for a structurally missing (ineligible) response.
pub const MISSING: i16 = -1;

/// Response scale of a quality metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Binary,
    Ordinal,
    Nominal,
}

/// Declared structure of one quality metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub id: String,
    pub kind: ItemKind,
    pub n_categories: usize,
    pub label: String,
    /// Category labels in code order (length `n_categories`).
    pub categories: Vec<String>,
}

impl ItemSpec {
    pub fn new(id: &str, kind: ItemKind, categories: Vec<String>, label: &str) -> Result<Self> {
        let k = categories.len();
        if k < 2 {
            return Err(Error::InvalidParameter(format!(
                "item '{id}': at least 2 categories required, got {k}"
            )));
        }
        if kind == ItemKind::Binary && k != 2 {
            return Err(Error::InvalidParameter(format!(
                "item '{id}': binary items must have exactly 2 categories, got {k}"
            )));
        }
        Ok(Self { id: id.to_string(), kind, n_categories: k, label: label.to_string(), categories })
    }

    /// Binary item with "0"/"1" category labels.
    pub fn binary(id: &str, label: &str) -> Self {
        Self::new(id, ItemKind::Binary, vec!["0".into(), "1".into()], label).unwrap()
    }
}

/// N individuals by I items of categorical responses with a per-cell
/// eligibility mask. A cell holds the category code in `0..K_i`, or
/// [`MISSING`] when the individual is ineligible for the item; eligibility
/// and missingness are the same fact, so they cannot disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    items: Vec<ItemSpec>,
    ids: Vec<String>,
    data: Vec<i16>,
    n_eligible: Vec<u32>,
}

impl ResponseMatrix {
    pub fn from_rows(items: Vec<ItemSpec>, ids: Vec<String>, rows: Vec<Vec<i16>>) -> Result<Self> {
        let n_items = items.len();
        if rows.len() != ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} ids for {} response rows",
                ids.len(),
                rows.len()
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * n_items);
        let mut n_eligible = Vec::with_capacity(rows.len());
        for (j, row) in rows.iter().enumerate() {
            if row.len() != n_items {
                return Err(Error::DimensionMismatch(format!(
                    "row {j} has {} cells for {n_items} items",
                    row.len()
                )));
            }
            let mut count = 0u32;
            for (i, &code) in row.iter().enumerate() {
                if code == MISSING {
                    // ineligible cell
                } else if code < 0 || code as usize >= items[i].n_categories {
                    return Err(Error::Data(format!(
                        "individual {} item '{}': code {code} outside 0..{}",
                        ids[j], items[i].id, items[i].n_categories
                    )));
                } else {
                    count += 1;
                }
            }
            n_eligible.push(count);
            data.extend_from_slice(row);
        }
        Ok(Self { items, ids, data, n_eligible })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn items(&self) -> &[ItemSpec] {
        &self.items
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, j: usize) -> &[i16] {
        let i = self.items.len();
        &self.data[j * i..(j + 1) * i]
    }

    pub fn code(&self, j: usize, i: usize) -> i16 {
        self.data[j * self.items.len() + i]
    }

    pub fn response(&self, j: usize, i: usize) -> Option<u16> {
        let c = self.code(j, i);
        (c >= 0).then_some(c as u16)
    }

    pub fn eligible(&self, j: usize, i: usize) -> bool {
        self.code(j, i) != MISSING
    }

    pub fn n_eligible(&self, j: usize) -> usize {
        self.n_eligible[j] as usize
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|s| s.id == id)
    }

    /// Submatrix keeping the given row indices, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> ResponseMatrix {
        let mut out_rows = Vec::with_capacity(rows.len());
        let mut ids = Vec::with_capacity(rows.len());
        for &j in rows {
            out_rows.push(self.row(j).to_vec());
            ids.push(self.ids[j].clone());
        }
        ResponseMatrix::from_rows(self.items.clone(), ids, out_rows).expect("valid submatrix")
    }

    /// Remove one item, returning the reduced matrix and the removed column.
    pub fn split_item(&self, id: &str) -> Result<(ResponseMatrix, Vec<i16>)> {
        let idx = self
            .item_index(id)
            .ok_or_else(|| Error::Data(format!("item '{id}' not present")))?;
        let mut items = self.items.clone();
        items.remove(idx);
        let mut column = Vec::with_capacity(self.n());
        let mut rows = Vec::with_capacity(self.n());
        for j in 0..self.n() {
            let row = self.row(j);
            column.push(row[idx]);
            let mut reduced = row.to_vec();
            reduced.remove(idx);
            rows.push(reduced);
        }
        Ok((ResponseMatrix::from_rows(items, self.ids.clone(), rows)?, column))
    }
}

/// Per-item parameter block, matched to the item's model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ItemParams {
    /// 2PL / compensatory multidimensional 2PL: logistic of
    /// `sum_s slopes[s] * theta[s] + intercept`.
    Binary { slopes: Vec<f64>, intercept: f64 },
    /// Graded model: cumulative logistic curves sharing one slope vector,
    /// intercepts strictly decreasing.
    Graded { slopes: Vec<f64>, intercepts: Vec<f64> },
    /// Nominal model: softmax over per-category slope vectors and
    /// intercepts, category 0 pinned at zero.
    Nominal { slopes: Vec<Vec<f64>>, intercepts: Vec<f64> },
    /// Latent-class item tied to a single trait: logistic of
    /// `disc * theta[trait_index] + easiness` (difficulty = -easiness/disc).
    LatentClass { disc: f64, easiness: f64, trait_index: usize },
}

impl ItemParams {
    pub fn binary(slopes: Vec<f64>, intercept: f64) -> Self {
        Self::Binary { slopes, intercept }
    }

    /// Graded parameters; rejects non-decreasing intercepts, which would
    /// yield negative category probabilities.
    pub fn graded(slopes: Vec<f64>, intercepts: Vec<f64>) -> Result<Self> {
        if intercepts.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter(
                "graded intercepts must be strictly decreasing".into(),
            ));
        }
        Ok(Self::Graded { slopes, intercepts })
    }

    /// Graded parameters without the ordering check, for diagnostic use
    /// (examining unconstrained estimates of the easiness sequence).
    pub fn graded_unchecked(slopes: Vec<f64>, intercepts: Vec<f64>) -> Self {
        Self::Graded { slopes, intercepts }
    }

    /// Nominal parameters; category 0 must carry all-zero slope and
    /// intercept.
    pub fn nominal(slopes: Vec<Vec<f64>>, intercepts: Vec<f64>) -> Result<Self> {
        if slopes.len() != intercepts.len() || slopes.len() < 2 {
            return Err(Error::DimensionMismatch(
                "nominal: one slope vector and one intercept per category".into(),
            ));
        }
        if slopes[0].iter().any(|v| *v != 0.0) || intercepts[0] != 0.0 {
            return Err(Error::InvalidParameter(
                "nominal category-0 parameters must be identically zero".into(),
            ));
        }
        let dims = slopes[0].len();
        if slopes.iter().any(|s| s.len() != dims) {
            return Err(Error::DimensionMismatch("nominal: ragged slope vectors".into()));
        }
        Ok(Self::Nominal { slopes, intercepts })
    }

    pub fn latent_class(disc: f64, easiness: f64, trait_index: usize) -> Self {
        Self::LatentClass { disc, easiness, trait_index }
    }

    pub fn n_categories(&self) -> usize {
        match self {
            Self::Binary { .. } | Self::LatentClass { .. } => 2,
            Self::Graded { intercepts, .. } => intercepts.len() + 1,
            Self::Nominal { intercepts, .. } => intercepts.len(),
        }
    }

    /// Item difficulty of a latent-class item (`-easiness/disc`).
    pub fn difficulty(&self) -> Option<f64> {
        match self {
            Self::LatentClass { disc, easiness, .. } if *disc != 0.0 => Some(-easiness / disc),
            _ => None,
        }
    }

    /// Log-probability of category `k` at trait value `theta`.
    pub fn log_prob(&self, theta: &[f64], k: u16) -> f64 {
        match self {
            Self::Binary { slopes, intercept } => {
                let eta = dot(slopes, theta) + intercept;
                if k == 1 {
                    log_sigmoid(eta)
                } else {
                    log_sigmoid(-eta)
                }
            }
            Self::Graded { slopes, intercepts } => {
                let eta = dot(slopes, theta);
                let upper = cumulative(eta, intercepts, k as usize);
                let lower = cumulative(eta, intercepts, k as usize + 1);
                let p = upper - lower;
                if p > 0.0 {
                    p.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::Nominal { slopes, intercepts } => {
                let logits: Vec<f64> = slopes
                    .iter()
                    .zip(intercepts)
                    .map(|(a, d)| dot(a, theta) + d)
                    .collect();
                logits[k as usize] - logsumexp(&logits)
            }
            Self::LatentClass { disc, easiness, trait_index } => {
                let eta = disc * theta[*trait_index] + easiness;
                if k == 1 {
                    log_sigmoid(eta)
                } else {
                    log_sigmoid(-eta)
                }
            }
        }
    }

    pub fn prob(&self, theta: &[f64], k: u16) -> f64 {
        self.log_prob(theta, k).exp()
    }

    /// Posterior-free expected numeric score `sum_k k P(Y=k | theta)`.
    pub fn expected_score(&self, theta: &[f64]) -> f64 {
        (0..self.n_categories())
            .map(|k| k as f64 * self.prob(theta, k as u16))
            .sum()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `P(Y >= k | eta)` for the graded model, with the boundary conventions
/// `P(Y >= 0) = 1` and `P(Y >= K) = 0`.
fn cumulative(eta: f64, intercepts: &[f64], k: usize) -> f64 {
    if k == 0 {
        1.0
    } else if k > intercepts.len() {
        0.0
    } else {
        sigmoid(eta + intercepts[k - 1])
    }
}

/// Latent-trait distribution: multivariate Normal or a discrete distribution
/// on `C` support points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentSpec {
    Normal { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Discrete { support: Vec<Vec<f64>>, prior: Vec<f64> },
}

impl LatentSpec {
    pub fn standard_normal(dims: usize) -> Self {
        let cov = (0..dims)
            .map(|r| (0..dims).map(|c| if r == c { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::Normal { mean: vec![0.0; dims], cov }
    }

    pub fn discrete(support: Vec<Vec<f64>>, prior: Vec<f64>) -> Result<Self> {
        if support.len() != prior.len() || support.is_empty() {
            return Err(Error::DimensionMismatch(
                "discrete latent: one prior weight per support point".into(),
            ));
        }
        let dims = support[0].len();
        if support.iter().any(|s| s.len() != dims) {
            return Err(Error::DimensionMismatch("discrete latent: ragged support".into()));
        }
        if prior.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidParameter("discrete latent: negative prior weight".into()));
        }
        let total: f64 = prior.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "discrete latent: prior sums to {total}, expected 1"
            )));
        }
        Ok(Self::Discrete { support, prior })
    }

    pub fn dims(&self) -> usize {
        match self {
            Self::Normal { mean, .. } => mean.len(),
            Self::Discrete { support, .. } => support.first().map_or(0, Vec::len),
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            Self::Normal { .. } => None,
            Self::Discrete { support, .. } => Some(support.len()),
        }
    }

    /// Validate shape and, for the Normal variant, symmetry and positive
    /// definiteness of the covariance.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Normal { mean, cov } => {
                let s = mean.len();
                if cov.len() != s || cov.iter().any(|r| r.len() != s) {
                    return Err(Error::DimensionMismatch("covariance must be S x S".into()));
                }
                for r in 0..s {
                    for c in 0..s {
                        if (cov[r][c] - cov[c][r]).abs() > 1e-10 {
                            return Err(Error::InvalidParameter(
                                "covariance must be symmetric".into(),
                            ));
                        }
                    }
                }
                let m = DMatrix::from_fn(s, s, |r, c| cov[r][c]);
                if m.cholesky().is_none() {
                    return Err(Error::NotPositiveDefinite);
                }
                Ok(())
            }
            Self::Discrete { .. } => {
                // Construction already validated the simplex.
                Ok(())
            }
        }
    }
}

/// How the latent scale is pinned down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentificationScheme {
    /// Scheme 1: unit-diagonal covariance and zero mean; with several traits
    /// the exploratory convention additionally zeroes the upper-echelon
    /// slopes to remove rotational freedom.
    StandardizedTraits,
    /// Scheme 2: per trait, the first allocated item's discrimination is
    /// pinned at 1 and its difficulty at 0.
    AnchoredItems,
}

/// Constraint applied to discrimination parameters during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeConstraint {
    #[default]
    Free,
    /// Non-negative slopes via a softplus reparameterization (exploratory
    /// Normal-trait fits).
    NonNegative,
    /// Slopes held at their initial values (Rasch-style fits).
    Fixed,
}

/// A complete model: item parameters, latent distribution, optional
/// structural model and the identification scheme in force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub items: Vec<ItemParams>,
    pub latent: LatentSpec,
    pub structural: Option<StructuralModel>,
    pub identification: IdentificationScheme,
    #[serde(default)]
    pub slope_constraint: SlopeConstraint,
    /// Items excluded from free parameters (degenerate items pinned at their
    /// observed margins).
    #[serde(default)]
    pub fixed_items: Vec<usize>,
}

impl ModelSpec {
    pub fn new(items: Vec<ItemParams>, latent: LatentSpec) -> Self {
        Self {
            items,
            latent,
            structural: None,
            identification: IdentificationScheme::StandardizedTraits,
            slope_constraint: SlopeConstraint::Free,
            fixed_items: Vec::new(),
        }
    }

    pub fn dims(&self) -> usize {
        self.latent.dims()
    }

    /// Check item/category agreement against declared item specs.
    pub fn check_items(&self, specs: &[ItemSpec]) -> Result<()> {
        if self.items.len() != specs.len() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} items, data has {}",
                self.items.len(),
                specs.len()
            )));
        }
        for (params, spec) in self.items.iter().zip(specs) {
            if params.n_categories() != spec.n_categories {
                return Err(Error::DimensionMismatch(format!(
                    "item '{}': model has {} categories, data has {}",
                    spec.id,
                    params.n_categories(),
                    spec.n_categories
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Item probability operations
// ---------------------------------------------------------------------------

/// Two-parameter logistic response probability in slope/easiness form:
/// `exp(a theta + d) / (1 + exp(a theta + d))`.
pub fn prob_2pl(a: f64, d: f64, theta: f64) -> f64 {
    sigmoid(a * theta + d)
}

/// Graded-model category probability
/// `P(Y = k) = P(Y >= k) - P(Y >= k + 1)`; rejects non-decreasing
/// intercepts, which would make some category probability negative.
pub fn prob_graded(a: f64, intercepts: &[f64], theta: f64, k: usize) -> Result<f64> {
    if intercepts.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter(
            "graded intercepts must be strictly decreasing".into(),
        ));
    }
    if k > intercepts.len() {
        return Err(Error::InvalidParameter(format!(
            "category {k} outside 0..={}",
            intercepts.len()
        )));
    }
    let eta = a * theta;
    Ok(cumulative(eta, intercepts, k) - cumulative(eta, intercepts, k + 1))
}

/// Nominal-model category probability: softmax of `a^k theta + d^k` with
/// category 0 pinned at zero logits.
pub fn prob_nominal(slopes: &[f64], intercepts: &[f64], theta: f64, k: usize) -> f64 {
    let logits: Vec<f64> = slopes.iter().zip(intercepts).map(|(a, d)| a * theta + d).collect();
    (logits[k] - logsumexp(&logits)).exp()
}

/// Trait value at which adjacent nominal categories `k-1` and `k` are
/// equally likely: `(d_{k-1} - d_k) / (a_k - a_{k-1})`.
pub fn nominal_crossing_point(slopes: &[f64], intercepts: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k >= slopes.len() {
        return Err(Error::InvalidParameter(format!("category {k} has no lower neighbour")));
    }
    let da = slopes[k] - slopes[k - 1];
    if da == 0.0 {
        return Err(Error::UndefinedCrossing(k - 1, k));
    }
    Ok((intercepts[k - 1] - intercepts[k]) / da)
}

/// Compensatory multidimensional 2PL: logistic of
/// `sum_s a_s theta_s + d`.
pub fn prob_m2pl(slopes: &[f64], d: f64, theta: &[f64]) -> Result<f64> {
    if slopes.len() != theta.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} slopes for {} trait values",
            slopes.len(),
            theta.len()
        )));
    }
    Ok(sigmoid(dot(slopes, theta) + d))
}

/// Latent-class item probability `logistic(a (xi[s*] - b))` where `s*` is
/// the single allocated trait; `delta` must be one-hot.
pub fn prob_lc_item(a: f64, b: f64, delta: &[bool], xi: &[f64]) -> Result<f64> {
    if delta.len() != xi.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} allocation flags for {} support coordinates",
            delta.len(),
            xi.len()
        )));
    }
    let hot: Vec<usize> = delta
        .iter()
        .enumerate()
        .filter_map(|(s, &on)| on.then_some(s))
        .collect();
    if hot.len() != 1 {
        return Err(Error::InvalidParameter(format!(
            "allocation must select exactly one trait, got {}",
            hot.len()
        )));
    }
    Ok(sigmoid(a * (xi[hot[0]] - b)))
}

/// Sum over eligible items of the log item probability at `theta`;
/// ineligible cells (code [`MISSING`]) contribute nothing.
pub fn conditional_loglik(responses: &[i16], items: &[ItemParams], theta: &[f64]) -> f64 {
    let mut total = 0.0;
    for (code, item) in responses.iter().zip(items) {
        if *code != MISSING {
            total += item.log_prob(theta, *code as u16);
        }
    }
    total
}

/// Integration strategy for the marginal likelihood.
pub enum Integrator<'a> {
    /// Numeric quadrature over a Normal latent distribution.
    Quadrature(&'a QuadratureRule),
    /// Exact summation over the support points of a discrete latent
    /// distribution.
    ClassSum,
}

/// Total marginal log-likelihood of the data under the model.
///
/// With a structural model present, `design` must supply one covariate row
/// per individual (latent-regression offsets for the Normal variant, class
/// priors for the discrete variant).
pub fn marginal_loglik(
    data: &ResponseMatrix,
    model: &ModelSpec,
    design: Option<&DMatrix<f64>>,
    integrator: &Integrator,
) -> Result<f64> {
    model.latent.validate()?;
    if model.structural.is_some() && design.is_none() {
        return Err(Error::InvalidParameter(
            "structural model present but no design matrix supplied".into(),
        ));
    }
    if let Some(w) = design {
        if w.nrows() != data.n() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows for {} individuals",
                w.nrows(),
                data.n()
            )));
        }
    }
    let per_row: Vec<f64> = match (&model.latent, integrator) {
        (LatentSpec::Normal { .. }, Integrator::Quadrature(rule)) => {
            if rule.dims() != model.dims() {
                return Err(Error::DimensionMismatch(format!(
                    "rule has {} dims, model has {}",
                    rule.dims(),
                    model.dims()
                )));
            }
            crate::par::par_map_range(data.n(), |j| {
                let offset = structural_offset(model, design, j);
                row_loglik_quadrature(data.row(j), &model.items, rule, offset.as_deref())
            })
        }
        (LatentSpec::Discrete { support, prior }, Integrator::ClassSum) => {
            crate::par::par_map_range(data.n(), |j| {
                let prior_j = class_prior(model, prior, design, j);
                row_loglik_classes(data.row(j), &model.items, support, &prior_j)
            })
        }
        _ => {
            return Err(Error::InvalidParameter(
                "integrator does not match the latent variant".into(),
            ))
        }
    };
    let mut total = 0.0;
    for (j, ll) in per_row.iter().enumerate() {
        if !ll.is_finite() {
            return Err(Error::Numerical(format!(
                "individual {} has zero marginal probability (log-likelihood -inf)",
                data.ids()[j]
            )));
        }
        total += ll;
    }
    Ok(total)
}

pub(crate) fn structural_offset(
    model: &ModelSpec,
    design: Option<&DMatrix<f64>>,
    j: usize,
) -> Option<Vec<f64>> {
    match (&model.structural, design) {
        (Some(m @ StructuralModel::LatentRegression { .. }), Some(w)) => {
            let row: Vec<f64> = (0..w.ncols()).map(|c| w[(j, c)]).collect();
            Some(m.latent_offset(&row).expect("validated design"))
        }
        _ => None,
    }
}

pub(crate) fn class_prior(
    model: &ModelSpec,
    prior: &[f64],
    design: Option<&DMatrix<f64>>,
    j: usize,
) -> Vec<f64> {
    match (&model.structural, design) {
        (Some(m), Some(w)) if !matches!(m, StructuralModel::LatentRegression { .. }) => {
            let row: Vec<f64> = (0..w.ncols()).map(|c| w[(j, c)]).collect();
            prior_class_probs(m, &row).expect("validated design")
        }
        _ => prior.to_vec(),
    }
}

pub(crate) fn row_loglik_quadrature(
    responses: &[i16],
    items: &[ItemParams],
    rule: &QuadratureRule,
    offset: Option<&[f64]>,
) -> f64 {
    let mut terms = Vec::with_capacity(rule.len());
    let mut shifted = vec![0.0; rule.dims()];
    for q in 0..rule.len() {
        let node = rule.node(q);
        let theta = match offset {
            Some(off) => {
                for (t, (n, o)) in shifted.iter_mut().zip(node.iter().zip(off)) {
                    *t = n + o;
                }
                &shifted[..]
            }
            None => node,
        };
        terms.push(rule.log_weight(q) + conditional_loglik(responses, items, theta));
    }
    logsumexp(&terms)
}

pub(crate) fn row_loglik_classes(
    responses: &[i16],
    items: &[ItemParams],
    support: &[Vec<f64>],
    prior: &[f64],
) -> f64 {
    let terms: Vec<f64> = support
        .iter()
        .zip(prior)
        .map(|(xi, p)| {
            if *p > 0.0 {
                p.ln() + conditional_loglik(responses, items, xi)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    logsumexp(&terms)
}
