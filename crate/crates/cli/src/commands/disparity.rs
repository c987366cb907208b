//! Disparity estimation on the matched sample: the observed-score
//! regression baseline and the structural latent-class model, emitted side
//! by side, plus per-group class distributions and per-class response
//! profiles.

use quirt::data::{apply_scoring_rules, load_model, save_model, ScoredResponses};
use quirt::estimation::{em_fit_latent_class, standard_errors, LcStructural};
use quirt::model::{ItemParams, LatentSpec};
use quirt::scoring::{
    class_distribution_by_group, class_posteriors_all, common_regression, opportunity_scores,
};
use quirt::structural::{disparity_from_class_model, group_design, StructuralModel};

use crate::commands::{fit_options, load_dir, matched_rows};
use crate::config::{Config, StructuralKind};
use crate::outputs::{ensure_dir, num, opt_num, Csv};
use crate::CliError;

pub fn run(config: &Config) -> Result<(), CliError> {
    let dir = config.disparity_dir();
    ensure_dir(&dir)?;
    let reference = &config.disparity.reference_group;
    let mut disparity_csv =
        Csv::new(&["approach", "group", "contrast", "estimate", "se"]);

    // Observed-score baseline: raw responses scored by the original rules,
    // restricted to the matched sample.
    let (raw, raw_table, raw_rules) = load_dir(&config.cohort_dir())?;
    let rows = matched_rows(config, raw.ids())?;
    let scored_all = apply_scoring_rules(&raw, &raw_rules)?;
    let scored = ScoredResponses::new(
        rows.iter().map(|&j| scored_all.ids[j].clone()).collect(),
        rows.iter().map(|&j| scored_all.row(j).to_vec()).collect(),
    );
    let scores = opportunity_scores(&scored)?;
    // Groups of the retained (scored) individuals.
    let id_to_group: std::collections::BTreeMap<&String, &String> =
        raw_table.ids.iter().zip(&raw_table.groups).collect();
    let score_groups: Vec<String> =
        scores.ids.iter().map(|id| id_to_group[id].clone()).collect();
    let (w, wnames) = group_design(&score_groups, reference, false)?;
    for row in common_regression(&scores.z, (&w, &wnames), None)? {
        disparity_csv.row(&[
            "observed_score".into(),
            row.name,
            "linear".into(),
            num(row.estimate),
            num(row.se),
        ]);
    }

    // Structural latent-class model on the processed matched sample.
    let (processed, table, _) = load_dir(&config.processed_dir())?;
    let rows = matched_rows(config, processed.ids())?;
    let sample = processed.select_rows(&rows);
    let groups: Vec<String> = rows.iter().map(|&j| table.groups[j].clone()).collect();
    let (fit_data, _) = sample
        .split_item(&config.preprocess.heldout_item)
        .map_err(|e| CliError::Data(format!("held-out item: {e}")))?;
    let (lc_fit, _warnings) = load_model(&config.fit_dir().join("model_lc.json"))?;
    let LatentSpec::Discrete { support, .. } = &lc_fit.model.latent else {
        return Err(CliError::Usage(
            "disparity needs a latent-class fit (run `fit` with family latent_class)".into(),
        ));
    };
    let n_classes = support.len();
    let allocation: Vec<usize> = lc_fit
        .model
        .items
        .iter()
        .map(|item| match item {
            ItemParams::LatentClass { trait_index, .. } => Ok(*trait_index),
            _ => Err(CliError::Usage("fitted model is not a latent-class model".into())),
        })
        .collect::<Result<_, _>>()?;
    if allocation.len() != fit_data.n_items() {
        return Err(CliError::Data(format!(
            "fitted model has {} items, processed matched data has {}",
            allocation.len(),
            fit_data.n_items()
        )));
    }
    let opts = fit_options(config);
    let (design, structural) = match config.disparity.structural {
        StructuralKind::Multinomial => {
            let (design, names) = group_design(&groups, reference, true)?;
            (design, NamedStructural::Multinomial(names))
        }
        StructuralKind::Cumulative => {
            let (design, names) = group_design(&groups, reference, false)?;
            (design, NamedStructural::Cumulative(names))
        }
    };
    let lc_structural = match &structural {
        NamedStructural::Multinomial(names) => LcStructural::Multinomial {
            design: &design,
            covariate_names: names.clone(),
        },
        NamedStructural::Cumulative(names) => LcStructural::Cumulative {
            design: &design,
            covariate_names: names.clone(),
        },
    };
    let fit = em_fit_latent_class(&fit_data, n_classes, &allocation, lc_structural, &opts)?;
    let (ses, warnings) = standard_errors(&fit, &fit_data, Some(&design))?;
    let mut fit = fit;
    fit.std_errors = Some(ses);
    fit.warnings.extend(warnings);
    save_model(&dir.join("model_structural.json"), &fit)?;

    match &fit.model.structural {
        Some(StructuralModel::MultinomialLogit { .. }) => {
            for row in disparity_from_class_model(&fit)? {
                disparity_csv.row(&[
                    "latent_class".into(),
                    row.group,
                    row.contrast,
                    num(row.estimate),
                    opt_num(row.se),
                ]);
            }
        }
        Some(StructuralModel::CumulativeLogit { intercepts, coef, covariate_names }) => {
            for (k, phi) in intercepts.iter().enumerate() {
                disparity_csv.row(&[
                    "latent_class".into(),
                    reference.clone(),
                    format!("cumulative intercept {}", k + 1),
                    num(*phi),
                    "NA".into(),
                ]);
            }
            for (name, value) in covariate_names.iter().zip(coef) {
                disparity_csv.row(&[
                    "latent_class".into(),
                    name.clone(),
                    "cumulative log-odds".into(),
                    num(*value),
                    "NA".into(),
                ]);
            }
        }
        _ => {}
    }
    disparity_csv.write(&dir.join("disparity.csv"))?;

    // Per-group class distribution (figure data).
    let posts = class_posteriors_all(&fit_data, &fit.model, Some(&design))?;
    let mut dist_csv =
        Csv::new(&["group", "class", "mean_probability", "map_share", "n"]);
    for row in class_distribution_by_group(&posts, &groups)? {
        dist_csv.row(&[
            row.group,
            row.class.to_string(),
            num(row.mean_prob),
            num(row.map_share),
            row.n.to_string(),
        ]);
    }
    dist_csv.write(&dir.join("class_distribution.csv"))?;

    // Conditional response-probability profiles per class (figure data).
    let LatentSpec::Discrete { support, .. } = &fit.model.latent else { unreachable!() };
    let mut prof_csv = Csv::new(&["class", "item_id", "probability"]);
    for (c, xi) in support.iter().enumerate() {
        for (i, item) in fit.model.items.iter().enumerate() {
            prof_csv.row(&[
                (c + 1).to_string(),
                fit_data.items()[i].id.clone(),
                num(item.prob(xi, 1)),
            ]);
        }
    }
    prof_csv.write(&dir.join("profiles.csv"))?;
    println!(
        "disparity tables written ({} structural model) -> {}",
        match config.disparity.structural {
            StructuralKind::Multinomial => "multinomial",
            StructuralKind::Cumulative => "cumulative",
        },
        dir.display()
    );
    Ok(())
}

enum NamedStructural {
    Multinomial(Vec<String>),
    Cumulative(Vec<String>),
}
