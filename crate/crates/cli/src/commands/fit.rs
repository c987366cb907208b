//! Model fitting: exploratory Normal-trait fits per trait count, or the
//! latent-class workflow (class scan, dimensionality test, final fit with
//! standard errors, held-out validation).

use quirt::data::save_model;
use quirt::diagnostics::{
    class_scan, likelihood_ratio_test, qq_data, residual_item_correlations, rmsea_m2,
    slopes_to_loadings, validate_heldout, varimax_rotate, FitStatistics,
};
use quirt::estimation::{
    default_normal_init, em_fit_latent_class, em_fit_normal, standard_errors, FitOptions,
    FitResult, LcStructural, ParamLayout, ParamRef,
};
use quirt::model::{ItemParams, LatentSpec, ResponseMatrix};
use quirt::scoring::eap_all;

use crate::commands::{fit_options, fitting_sample, load_dir, rule_for};
use crate::config::{Config, Family};
use crate::outputs::{ensure_dir, num, opt_num, Csv};
use crate::CliError;

pub fn run(config: &Config) -> Result<(), CliError> {
    let (data, table, _) = load_dir(&config.processed_dir())?;
    let (sample, _groups) = fitting_sample(config, &data, &table)?;
    let heldout_id = &config.preprocess.heldout_item;
    let (fit_data, heldout) = sample.split_item(heldout_id).map_err(|e| {
        CliError::Data(format!("held-out item: {e}"))
    })?;
    // The held-out item must never enter a fitted model.
    assert!(fit_data.item_index(heldout_id).is_none());
    let dir = config.fit_dir();
    ensure_dir(&dir)?;
    let opts = fit_options(config);
    match config.model.family {
        Family::Normal => run_normal(config, &dir, &fit_data, &heldout, &opts),
        Family::LatentClass => run_latent_class(config, &dir, &fit_data, &heldout, &opts),
    }
}

fn run_normal(
    config: &Config,
    dir: &std::path::Path,
    data: &ResponseMatrix,
    heldout: &[i16],
    opts: &FitOptions,
) -> Result<(), CliError> {
    let mut stats_csv = Csv::new(&[
        "dims", "loglik", "n_params", "aic", "bic", "rmsea", "m2", "m2_df", "converged",
    ]);
    let mut last_fit: Option<FitResult> = None;
    for &dims in &config.model.dims {
        let init = default_normal_init(data, dims)?;
        let fit = em_fit_normal(data, &init, None, opts)?;
        let mut stats = FitStatistics::from_fit(&fit);
        match rmsea_m2(data, &fit) {
            Ok(report) => {
                stats.rmsea = Some(report.rmsea);
                stats.m2 = Some(report.m2);
                stats.m2_df = Some(report.df);
            }
            Err(quirt::Error::Unsupported(_)) => {}
            Err(e) => return Err(e.into()),
        }
        stats_csv.row(&[
            dims.to_string(),
            num(stats.loglik),
            stats.n_params.to_string(),
            num(stats.aic),
            num(stats.bic),
            opt_num(stats.rmsea),
            opt_num(stats.m2),
            stats.m2_df.map_or("NA".into(), |d| d.to_string()),
            fit.converged.to_string(),
        ]);

        // Loadings in rotated form (varimax beyond one factor), with the
        // cumulative-variance footer row of the published table shape.
        let unrotated = slopes_to_loadings(&fit.model.items, dims);
        let rotated = if dims >= 2 { varimax_rotate(&unrotated) } else { unrotated };
        let header: Vec<String> = std::iter::once("item_id".to_string())
            .chain((1..=dims).map(|s| format!("loading_{s}")))
            .chain(std::iter::once("communality".to_string()))
            .collect();
        let mut loadings =
            Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
        for (i, spec) in data.items().iter().enumerate() {
            let row = &rotated.loadings[i];
            let communality: f64 = row.iter().map(|v| v * v).sum();
            let mut cells = vec![spec.id.clone()];
            cells.extend(row.iter().map(|v| num(*v)));
            cells.push(num(communality));
            loadings.row(&cells);
        }
        let mut footer = vec!["cumulative_variance_pct".to_string()];
        footer.extend(rotated.cumulative_variance_pct.iter().map(|v| num(*v)));
        footer.push("NA".into());
        loadings.row(&footer);
        loadings.write(&dir.join(format!("loadings_s{dims}.csv")))?;

        let rule = rule_for(&fit.model, opts)?;
        let corr = residual_item_correlations(data, &fit, None, Some(&rule))?;
        let mut corr_csv = Csv::new(&["item_a", "item_b", "residual_correlation"]);
        for a in 0..data.n_items() {
            for b in (a + 1)..data.n_items() {
                corr_csv.row(&[
                    data.items()[a].id.clone(),
                    data.items()[b].id.clone(),
                    opt_num(Some(corr[a][b])),
                ]);
            }
        }
        corr_csv.write(&dir.join(format!("residual_correlations_s{dims}.csv")))?;

        let posts = eap_all(data, &fit.model, None, &rule)?;
        let mut qq_csv = Csv::new(&["trait", "theoretical", "empirical"]);
        for s in 0..dims {
            let estimates: Vec<f64> = posts.iter().map(|p| p.means[s]).collect();
            for (theo, emp) in qq_data(&estimates)? {
                qq_csv.row(&[(s + 1).to_string(), num(theo), num(emp)]);
            }
        }
        qq_csv.write(&dir.join(format!("qq_s{dims}.csv")))?;
        save_model(&dir.join(format!("model_normal_s{dims}.json")), &fit)?;
        last_fit = Some(fit);
    }
    stats_csv.write(&dir.join("fit_stats.csv"))?;
    if let Some(fit) = &last_fit {
        let rule = rule_for(&fit.model, opts)?;
        let summary = validate_heldout(data, fit, None, Some(&rule), heldout)?;
        write_validation(&dir.join("validation.csv"), &summary)?;
    }
    println!("fitted {} Normal-trait models -> {}", config.model.dims.len(), dir.display());
    Ok(())
}

/// Trait of each item: the factor with the largest absolute loading in a
/// two-factor exploratory fit.
fn allocation_from_efa(
    data: &ResponseMatrix,
    opts: &FitOptions,
) -> Result<Vec<usize>, CliError> {
    let init = default_normal_init(data, 2)?;
    let fit = em_fit_normal(data, &init, None, opts)?;
    let rotated = varimax_rotate(&slopes_to_loadings(&fit.model.items, 2));
    Ok(rotated
        .loadings
        .iter()
        .map(|row| {
            let mut best = 0;
            for (s, v) in row.iter().enumerate() {
                if v.abs() > row[best].abs() {
                    best = s;
                }
            }
            best
        })
        .collect())
}

/// Renumber trait indices to consecutive 0.. order of first appearance (an
/// EFA allocation can leave a factor empty).
fn compact_allocation(allocation: &[usize]) -> Vec<usize> {
    let mut map: Vec<usize> = Vec::new();
    allocation
        .iter()
        .map(|&s| {
            if let Some(pos) = map.iter().position(|&m| m == s) {
                pos
            } else {
                map.push(s);
                map.len() - 1
            }
        })
        .collect()
}

fn run_latent_class(
    config: &Config,
    dir: &std::path::Path,
    data: &ResponseMatrix,
    heldout: &[i16],
    opts: &FitOptions,
) -> Result<(), CliError> {
    let allocation = if config.model.allocation.is_empty() {
        compact_allocation(&allocation_from_efa(data, opts)?)
    } else {
        if config.model.allocation.len() != data.n_items() {
            return Err(CliError::Usage(format!(
                "model.allocation names {} items, processed data has {}",
                config.model.allocation.len(),
                data.n_items()
            )));
        }
        compact_allocation(&config.model.allocation)
    };
    let dims = allocation.iter().copied().max().map_or(1, |m| m + 1);
    let mut alloc_csv = Csv::new(&["item_id", "trait"]);
    for (spec, &s) in data.items().iter().zip(&allocation) {
        alloc_csv.row(&[spec.id.clone(), (s + 1).to_string()]);
    }
    alloc_csv.write(&dir.join("allocation.csv"))?;

    // Class-count scan (unidimensional, as the scan precedes the
    // dimensionality test).
    let uni_allocation = vec![0usize; data.n_items()];
    let scan = class_scan(data, config.model.classes[0]..=config.model.classes[1],
        &uni_allocation, opts)?;
    let mut scan_csv =
        Csv::new(&["n_classes", "loglik", "n_params", "aic", "bic", "converged"]);
    for row in &scan.rows {
        scan_csv.row(&[
            row.n_classes.to_string(),
            num(row.stats.loglik),
            row.stats.n_params.to_string(),
            num(row.stats.aic),
            num(row.stats.bic),
            row.converged.to_string(),
        ]);
    }
    scan_csv.write(&dir.join("class_scan.csv"))?;
    let chosen = if config.model.selected_classes > 0 {
        config.model.selected_classes
    } else {
        scan.best_bic
    };

    // Dimensionality at the chosen class count.
    let uni_fit = scan
        .fits
        .iter()
        .find(|f| matches!(&f.model.latent, LatentSpec::Discrete { support, .. } if support.len() == chosen))
        .cloned()
        .ok_or_else(|| CliError::Usage(format!("class scan did not cover C = {chosen}")))?;
    let final_fit = if dims >= 2 {
        let multi = em_fit_latent_class(data, chosen, &allocation, LcStructural::None, opts)?;
        let lrt = likelihood_ratio_test(&uni_fit, &multi)?;
        let mut dim_csv = Csv::new(&[
            "model", "loglik", "n_params", "aic", "bic", "lrt_statistic", "lrt_dof",
            "lrt_p_value",
        ]);
        let stats_u = FitStatistics::from_fit(&uni_fit);
        let stats_m = FitStatistics::from_fit(&multi);
        dim_csv.row(&[
            "unidimensional".into(),
            num(stats_u.loglik),
            stats_u.n_params.to_string(),
            num(stats_u.aic),
            num(stats_u.bic),
            String::new(),
            String::new(),
            String::new(),
        ]);
        dim_csv.row(&[
            format!("{dims}-dimensional"),
            num(stats_m.loglik),
            stats_m.n_params.to_string(),
            num(stats_m.aic),
            num(stats_m.bic),
            num(lrt.statistic),
            lrt.dof.to_string(),
            num(lrt.p_value),
        ]);
        dim_csv.write(&dir.join("dimension_test.csv"))?;
        multi
    } else {
        uni_fit
    };

    let (ses, warnings) = standard_errors(&final_fit, data, None)?;
    let mut final_fit = final_fit;
    final_fit.std_errors = Some(ses);
    final_fit.warnings.extend(warnings);
    write_lc_tables(dir, data, &final_fit)?;
    save_model(&dir.join("model_lc.json"), &final_fit)?;

    let summary = validate_heldout(data, &final_fit, None, None, heldout)?;
    write_validation(&dir.join("validation.csv"), &summary)?;
    println!(
        "latent-class fit: C = {chosen}, {dims} trait(s), loglik {:.3} -> {}",
        final_fit.loglik,
        dir.display()
    );
    Ok(())
}

/// Support points with SEs, prior shares, and per-item parameters.
fn write_lc_tables(
    dir: &std::path::Path,
    data: &ResponseMatrix,
    fit: &FitResult,
) -> Result<(), CliError> {
    let LatentSpec::Discrete { support, prior } = &fit.model.latent else {
        return Err(CliError::Usage("latent-class tables need a discrete latent".into()));
    };
    let layout = ParamLayout::for_model(&fit.model);
    let ses = fit.std_errors.as_deref();
    let se_of = |target: &ParamRef| -> Option<f64> {
        ses.and_then(|s| layout.position(target).map(|k| s[k]))
    };
    let dims = fit.model.dims();
    let mut header = vec!["class".to_string(), "prior".to_string()];
    for s in 1..=dims {
        header.push(format!("xi{s}"));
        header.push(format!("se_xi{s}"));
    }
    let mut support_csv = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for (c, (xi, p)) in support.iter().zip(prior).enumerate() {
        let mut cells = vec![(c + 1).to_string(), num(*p)];
        for (s, v) in xi.iter().enumerate() {
            cells.push(num(*v));
            cells.push(opt_num(se_of(&ParamRef::Support { class: c, dim: s })));
        }
        support_csv.row(&cells);
    }
    support_csv.write(&dir.join("support_points.csv"))?;

    let mut items_csv =
        Csv::new(&["item_id", "trait", "disc", "se_disc", "easiness", "se_easiness"]);
    for (i, item) in fit.model.items.iter().enumerate() {
        let ItemParams::LatentClass { disc, easiness, trait_index } = item else {
            continue;
        };
        items_csv.row(&[
            data.items()[i].id.clone(),
            (trait_index + 1).to_string(),
            num(*disc),
            opt_num(se_of(&ParamRef::LcDisc { item: i })),
            num(*easiness),
            opt_num(se_of(&ParamRef::LcEasiness { item: i })),
        ]);
    }
    items_csv.write(&dir.join("item_params.csv"))
}

fn write_validation(
    path: &std::path::Path,
    summary: &quirt::diagnostics::ValidationSummary,
) -> Result<(), CliError> {
    let mut csv = Csv::new(&["metric", "value"]);
    csv.row(&["n_heldout".into(), summary.n_heldout.to_string()]);
    csv.row(&["heldout_varies".into(), summary.heldout_varies.to_string()]);
    if let Some(diff) = summary.eap_difference {
        csv.row(&["eap_difference".into(), num(diff)]);
    }
    if let Some(rates) = &summary.class_success_rates {
        for (c, rate) in rates.iter().enumerate() {
            csv.row(&[format!("class{}_success_rate", c + 1), opt_num(Some(*rate))]);
        }
    }
    csv.write(path)
}
