//! Template draw and per-group cardinality matching, with pre- and
//! post-match balance tables.

use quirt::matching::{
    balance_table, cardinality_match, draw_template, BalanceRow, ConstraintMode, CovariateTable,
    MatchProblem,
};

use crate::commands::load_dir;
use crate::config::Config;
use crate::outputs::{ensure_dir, num, Csv};
use crate::CliError;

pub fn run(config: &Config) -> Result<(), CliError> {
    let (_, mut table, _) = load_dir(&config.cohort_dir())?;
    for name in &config.matching.quartile {
        table.discretize_numeric(name)?;
    }
    let cov_indices: Vec<usize> = config
        .matching
        .covariates
        .iter()
        .map(|name| {
            table.covariate_index(name).ok_or_else(|| {
                CliError::Usage(format!("matching covariate '{name}' not in the cohort"))
            })
        })
        .collect::<Result<_, _>>()?;

    let template = draw_template(&table, config.matching.template_size, config.seed)?;
    let mut selected = vec![false; table.n()];
    let mut summary = Csv::new(&["group", "n_candidates", "target", "total_slack", "optimal"]);
    for group in table.group_levels() {
        let (problem, members) = MatchProblem::for_group(
            &table,
            &template,
            &cov_indices,
            &group,
            config.matching.per_group_size as u32,
            ConstraintMode::Soft,
        )?;
        let result = cardinality_match(&problem)?;
        for (m, sel) in members.iter().zip(&result.selected) {
            selected[*m] = *sel;
        }
        summary.row(&[
            group.clone(),
            members.len().to_string(),
            config.matching.per_group_size.to_string(),
            result.total_slack.to_string(),
            result.optimal.to_string(),
        ]);
    }

    let dir = config.match_dir();
    ensure_dir(&dir)?;
    summary.write(&dir.join("match_summary.csv"))?;

    let mut matched = Csv::new(&["individual_id", "group", "selected"]);
    for j in 0..table.n() {
        matched.row(&[
            table.ids[j].clone(),
            table.groups[j].clone(),
            u8::from(selected[j]).to_string(),
        ]);
    }
    matched.write(&dir.join("matched.csv"))?;

    let mut template_csv = Csv::new(&["individual_id"]);
    for &j in &template {
        template_csv.row(&[table.ids[j].clone()]);
    }
    template_csv.write(&dir.join("template.csv"))?;

    let all_rows: Vec<usize> = (0..table.n()).collect();
    let matched_rows: Vec<usize> = (0..table.n()).filter(|&j| selected[j]).collect();
    write_balance(
        &dir.join("balance_pre.csv"),
        &table,
        &all_rows,
        &template,
        &cov_indices,
    )?;
    write_balance(
        &dir.join("balance_post.csv"),
        &table,
        &matched_rows,
        &template,
        &cov_indices,
    )?;
    println!(
        "matched {} individuals per group against a template of {} -> {}",
        config.matching.per_group_size,
        template.len(),
        dir.display()
    );
    Ok(())
}

/// Balance table: one column block per group plus the template itself.
fn write_balance(
    path: &std::path::Path,
    table: &CovariateTable,
    rows: &[usize],
    template: &[usize],
    covariates: &[usize],
) -> Result<(), CliError> {
    let mut csv = Csv::new(&["covariate", "category", "column", "percent", "count", "n"]);
    let template_counts = table.category_counts(template, covariates);
    let t = template.len() as f64;
    for (k, &cov) in covariates.iter().enumerate() {
        for (p, label) in table.categories[cov].iter().enumerate() {
            csv.row(&[
                table.covariates[cov].clone(),
                label.clone(),
                "template".into(),
                num(100.0 * template_counts[k][p] as f64 / t),
                template_counts[k][p].to_string(),
                template.len().to_string(),
            ]);
        }
    }
    for row in balance_table(table, rows, covariates) {
        let BalanceRow { covariate, category, group, percent, count, group_n } = row;
        csv.row(&[
            covariate,
            category,
            group,
            num(percent),
            count.to_string(),
            group_n.to_string(),
        ]);
    }
    csv.write(path)
}
