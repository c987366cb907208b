//! Canonical enumeration of a model's free parameters.
//!
//! The layout is the single source of truth for the free-parameter count,
//! for flattening a model into a vector (standard errors, oracle
//! comparisons, convergence checks) and for rebuilding a model from a
//! perturbed vector. Identification pins, echelon zeros, fixed slopes and
//! degenerate items are excluded.

use crate::model::{
    IdentificationScheme, ItemParams, LatentSpec, ModelSpec, SlopeConstraint,
};
use crate::structural::StructuralModel;

/// Address of one free parameter inside a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamRef {
    ItemSlope { item: usize, dim: usize },
    /// Intercept `which` of an item (0 for binary, `k-1` for graded
    /// category k).
    ItemIntercept { item: usize, which: usize },
    NominalSlope { item: usize, cat: usize, dim: usize },
    NominalIntercept { item: usize, cat: usize },
    LcDisc { item: usize },
    LcEasiness { item: usize },
    Support { class: usize, dim: usize },
    /// Log-odds of class `class` (2-based) against class 1.
    PriorLogit { class: usize },
    LatRegCoef { cov: usize, dim: usize },
    /// Multinomial-logit coefficient of class `class` (2-based).
    MnlCoef { class: usize, cov: usize },
    CumIntercept { which: usize },
    CumCoef { cov: usize },
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    entries: Vec<ParamRef>,
}

impl ParamLayout {
    pub fn for_model(model: &ModelSpec) -> Self {
        let mut entries = Vec::new();
        let dims = model.dims();
        let slopes_free = model.slope_constraint != SlopeConstraint::Fixed;
        let single_class = matches!(model.latent.n_classes(), Some(1));
        let mut anchored = vec![false; dims];
        for (i, item) in model.items.iter().enumerate() {
            if model.fixed_items.contains(&i) {
                continue;
            }
            match item {
                ItemParams::Binary { slopes, .. } => {
                    if slopes_free {
                        for s in 0..slopes.len() {
                            if !super::echelon_fixed(model, i, s) {
                                entries.push(ParamRef::ItemSlope { item: i, dim: s });
                            }
                        }
                    }
                    entries.push(ParamRef::ItemIntercept { item: i, which: 0 });
                }
                ItemParams::Graded { slopes, intercepts } => {
                    if slopes_free {
                        for s in 0..slopes.len() {
                            if !super::echelon_fixed(model, i, s) {
                                entries.push(ParamRef::ItemSlope { item: i, dim: s });
                            }
                        }
                    }
                    for k in 0..intercepts.len() {
                        entries.push(ParamRef::ItemIntercept { item: i, which: k });
                    }
                }
                ItemParams::Nominal { slopes, intercepts } => {
                    for cat in 1..intercepts.len() {
                        if slopes_free {
                            for s in 0..slopes[cat].len() {
                                if !super::echelon_fixed(model, i, s) {
                                    entries.push(ParamRef::NominalSlope { item: i, cat, dim: s });
                                }
                            }
                        }
                        entries.push(ParamRef::NominalIntercept { item: i, cat });
                    }
                }
                ItemParams::LatentClass { trait_index, .. } => {
                    if single_class {
                        // Only the marginal rate is identified; the
                        // discrimination and support are pinned.
                        entries.push(ParamRef::LcEasiness { item: i });
                    } else if model.identification == IdentificationScheme::AnchoredItems
                        && !anchored[*trait_index]
                    {
                        anchored[*trait_index] = true;
                    } else {
                        if slopes_free {
                            entries.push(ParamRef::LcDisc { item: i });
                        }
                        entries.push(ParamRef::LcEasiness { item: i });
                    }
                }
            }
        }
        if let LatentSpec::Discrete { support, .. } = &model.latent {
            let c = support.len();
            if c > 1 {
                for (cls, xi) in support.iter().enumerate() {
                    for s in 0..xi.len() {
                        entries.push(ParamRef::Support { class: cls, dim: s });
                    }
                }
                if model.structural.is_none() {
                    for cls in 2..=c {
                        entries.push(ParamRef::PriorLogit { class: cls });
                    }
                }
            }
        }
        match &model.structural {
            None => {}
            Some(StructuralModel::LatentRegression { coef, .. }) => {
                for (cov, row) in coef.iter().enumerate() {
                    for dim in 0..row.len() {
                        entries.push(ParamRef::LatRegCoef { cov, dim });
                    }
                }
            }
            Some(StructuralModel::MultinomialLogit { coef, .. }) => {
                for (ci, row) in coef.iter().enumerate() {
                    for cov in 0..row.len() {
                        entries.push(ParamRef::MnlCoef { class: ci + 2, cov });
                    }
                }
            }
            Some(StructuralModel::CumulativeLogit { intercepts, coef, .. }) => {
                for which in 0..intercepts.len() {
                    entries.push(ParamRef::CumIntercept { which });
                }
                for cov in 0..coef.len() {
                    entries.push(ParamRef::CumCoef { cov });
                }
            }
        }
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamRef] {
        &self.entries
    }

    pub fn position(&self, target: &ParamRef) -> Option<usize> {
        self.entries.iter().position(|e| e == target)
    }

    /// Human-readable parameter names; covariate names come from the
    /// structural model when present.
    pub fn names(&self, model: &ModelSpec) -> Vec<String> {
        let cov_name = |cov: usize| -> String {
            model
                .structural
                .as_ref()
                .and_then(|s| s.covariate_names().get(cov).cloned())
                .unwrap_or_else(|| format!("w{cov}"))
        };
        self.entries
            .iter()
            .map(|e| match e {
                ParamRef::ItemSlope { item, dim } => format!("item{item}.a{}", dim + 1),
                ParamRef::ItemIntercept { item, which } => format!("item{item}.d{}", which + 1),
                ParamRef::NominalSlope { item, cat, dim } => {
                    format!("item{item}.a{cat}_{}", dim + 1)
                }
                ParamRef::NominalIntercept { item, cat } => format!("item{item}.d{cat}"),
                ParamRef::LcDisc { item } => format!("item{item}.a"),
                ParamRef::LcEasiness { item } => format!("item{item}.d"),
                ParamRef::Support { class, dim } => format!("class{}.xi{}", class + 1, dim + 1),
                ParamRef::PriorLogit { class } => format!("prior.logit{class}"),
                ParamRef::LatRegCoef { cov, dim } => {
                    format!("gamma.{}.trait{}", cov_name(*cov), dim + 1)
                }
                ParamRef::MnlCoef { class, cov } => {
                    format!("gamma.{}.class{class}", cov_name(*cov))
                }
                ParamRef::CumIntercept { which } => format!("phi{}", which + 1),
                ParamRef::CumCoef { cov } => format!("gammastar.{}", cov_name(*cov)),
            })
            .collect()
    }

    /// Flatten the model's free parameters.
    pub fn extract(&self, model: &ModelSpec) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| match e {
                ParamRef::ItemSlope { item, dim } => match &model.items[*item] {
                    ItemParams::Binary { slopes, .. } | ItemParams::Graded { slopes, .. } => {
                        slopes[*dim]
                    }
                    _ => unreachable!("slope ref on non-slope item"),
                },
                ParamRef::ItemIntercept { item, which } => match &model.items[*item] {
                    ItemParams::Binary { intercept, .. } => *intercept,
                    ItemParams::Graded { intercepts, .. } => intercepts[*which],
                    _ => unreachable!("intercept ref on mismatched item"),
                },
                ParamRef::NominalSlope { item, cat, dim } => match &model.items[*item] {
                    ItemParams::Nominal { slopes, .. } => slopes[*cat][*dim],
                    _ => unreachable!(),
                },
                ParamRef::NominalIntercept { item, cat } => match &model.items[*item] {
                    ItemParams::Nominal { intercepts, .. } => intercepts[*cat],
                    _ => unreachable!(),
                },
                ParamRef::LcDisc { item } => match &model.items[*item] {
                    ItemParams::LatentClass { disc, .. } => *disc,
                    _ => unreachable!(),
                },
                ParamRef::LcEasiness { item } => match &model.items[*item] {
                    ItemParams::LatentClass { easiness, .. } => *easiness,
                    _ => unreachable!(),
                },
                ParamRef::Support { class, dim } => match &model.latent {
                    LatentSpec::Discrete { support, .. } => support[*class][*dim],
                    _ => unreachable!(),
                },
                ParamRef::PriorLogit { class } => match &model.latent {
                    LatentSpec::Discrete { prior, .. } => {
                        (prior[*class - 1].max(1e-300) / prior[0].max(1e-300)).ln()
                    }
                    _ => unreachable!(),
                },
                ParamRef::LatRegCoef { cov, dim } => match &model.structural {
                    Some(StructuralModel::LatentRegression { coef, .. }) => coef[*cov][*dim],
                    _ => unreachable!(),
                },
                ParamRef::MnlCoef { class, cov } => match &model.structural {
                    Some(StructuralModel::MultinomialLogit { coef, .. }) => {
                        coef[*class - 2][*cov]
                    }
                    _ => unreachable!(),
                },
                ParamRef::CumIntercept { which } => match &model.structural {
                    Some(StructuralModel::CumulativeLogit { intercepts, .. }) => {
                        intercepts[*which]
                    }
                    _ => unreachable!(),
                },
                ParamRef::CumCoef { cov } => match &model.structural {
                    Some(StructuralModel::CumulativeLogit { coef, .. }) => coef[*cov],
                    _ => unreachable!(),
                },
            })
            .collect()
    }

    /// Rebuild a model with the free parameters replaced by `values`.
    pub fn apply(&self, model: &ModelSpec, values: &[f64]) -> ModelSpec {
        assert_eq!(values.len(), self.entries.len());
        let mut out = model.clone();
        let mut prior_logits: Vec<(usize, f64)> = Vec::new();
        for (e, &v) in self.entries.iter().zip(values) {
            match e {
                ParamRef::ItemSlope { item, dim } => match &mut out.items[*item] {
                    ItemParams::Binary { slopes, .. } | ItemParams::Graded { slopes, .. } => {
                        slopes[*dim] = v;
                    }
                    _ => unreachable!(),
                },
                ParamRef::ItemIntercept { item, which } => match &mut out.items[*item] {
                    ItemParams::Binary { intercept, .. } => *intercept = v,
                    ItemParams::Graded { intercepts, .. } => intercepts[*which] = v,
                    _ => unreachable!(),
                },
                ParamRef::NominalSlope { item, cat, dim } => match &mut out.items[*item] {
                    ItemParams::Nominal { slopes, .. } => slopes[*cat][*dim] = v,
                    _ => unreachable!(),
                },
                ParamRef::NominalIntercept { item, cat } => match &mut out.items[*item] {
                    ItemParams::Nominal { intercepts, .. } => intercepts[*cat] = v,
                    _ => unreachable!(),
                },
                ParamRef::LcDisc { item } => match &mut out.items[*item] {
                    ItemParams::LatentClass { disc, .. } => *disc = v,
                    _ => unreachable!(),
                },
                ParamRef::LcEasiness { item } => match &mut out.items[*item] {
                    ItemParams::LatentClass { easiness, .. } => *easiness = v,
                    _ => unreachable!(),
                },
                ParamRef::Support { class, dim } => match &mut out.latent {
                    LatentSpec::Discrete { support, .. } => support[*class][*dim] = v,
                    _ => unreachable!(),
                },
                ParamRef::PriorLogit { class } => prior_logits.push((*class, v)),
                ParamRef::LatRegCoef { cov, dim } => match &mut out.structural {
                    Some(StructuralModel::LatentRegression { coef, .. }) => coef[*cov][*dim] = v,
                    _ => unreachable!(),
                },
                ParamRef::MnlCoef { class, cov } => match &mut out.structural {
                    Some(StructuralModel::MultinomialLogit { coef, .. }) => {
                        coef[*class - 2][*cov] = v;
                    }
                    _ => unreachable!(),
                },
                ParamRef::CumIntercept { which } => match &mut out.structural {
                    Some(StructuralModel::CumulativeLogit { intercepts, .. }) => {
                        intercepts[*which] = v;
                    }
                    _ => unreachable!(),
                },
                ParamRef::CumCoef { cov } => match &mut out.structural {
                    Some(StructuralModel::CumulativeLogit { coef, .. }) => coef[*cov] = v,
                    _ => unreachable!(),
                },
            }
        }
        if !prior_logits.is_empty() {
            if let LatentSpec::Discrete { prior, .. } = &mut out.latent {
                let mut logits = vec![0.0; prior.len()];
                for (class, v) in prior_logits {
                    logits[class - 1] = v;
                }
                let lse = crate::math::logsumexp(&logits);
                for (p, l) in prior.iter_mut().zip(&logits) {
                    *p = (l - lse).exp();
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ItemParams, LatentSpec, ModelSpec};

    #[test]
    fn extract_apply_round_trip() {
        let items = vec![
            ItemParams::binary(vec![1.2], -0.4),
            ItemParams::graded(vec![0.8], vec![0.9, -0.7]).unwrap(),
            ItemParams::nominal(vec![vec![0.0], vec![0.5], vec![1.3]], vec![0.0, 0.2, -0.1])
                .unwrap(),
        ];
        let model = ModelSpec::new(items, LatentSpec::standard_normal(1));
        let layout = ParamLayout::for_model(&model);
        // slopes: 1 + 1 + 2; intercepts: 1 + 2 + 2.
        assert_eq!(layout.len(), 9);
        let values = layout.extract(&model);
        let rebuilt = layout.apply(&model, &values);
        assert_eq!(rebuilt, model);
        let mut bumped = values.clone();
        bumped[0] += 0.5;
        let changed = layout.apply(&model, &bumped);
        assert_eq!(layout.extract(&changed)[0], values[0] + 0.5);
    }

    #[test]
    fn prior_logits_round_trip_through_softmax() {
        let items = vec![
            ItemParams::latent_class(1.0, 0.0, 0),
            ItemParams::latent_class(0.7, 0.2, 0),
            ItemParams::latent_class(1.4, -0.2, 0),
        ];
        let latent =
            LatentSpec::discrete(vec![vec![-1.0], vec![0.5], vec![2.0]], vec![0.2, 0.3, 0.5])
                .unwrap();
        let model = ModelSpec::new(items, latent);
        let layout = ParamLayout::for_model(&model);
        let values = layout.extract(&model);
        let rebuilt = layout.apply(&model, &values);
        let LatentSpec::Discrete { prior, .. } = &rebuilt.latent else { unreachable!() };
        assert!((prior[0] - 0.2).abs() < 1e-12);
        assert!((prior[1] - 0.3).abs() < 1e-12);
        assert!((prior[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fixed_items_are_excluded() {
        let items = vec![ItemParams::binary(vec![1.0], 0.0), ItemParams::binary(vec![1.0], 0.0)];
        let mut model = ModelSpec::new(items, LatentSpec::standard_normal(1));
        model.fixed_items = vec![1];
        assert_eq!(ParamLayout::for_model(&model).len(), 2);
    }
}
