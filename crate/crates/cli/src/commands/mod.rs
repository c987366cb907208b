pub mod disparity;
pub mod fit;
pub mod matching;
pub mod preprocess;
pub mod report;
pub mod simulate;

use quirt::data::{load_cohort, load_scoring_rules, CohortPaths, ScoringRule};
use quirt::matching::CovariateTable;
use quirt::model::ResponseMatrix;

use crate::config::Config;
use crate::CliError;

/// Load the cohort (raw or processed) from a conventional directory that
/// also holds its scoring_rules.csv.
pub fn load_dir(
    dir: &std::path::Path,
) -> Result<(ResponseMatrix, CovariateTable, Vec<ScoringRule>), CliError> {
    let rules = load_scoring_rules(&dir.join("scoring_rules.csv"))?;
    let paths = CohortPaths::in_dir(dir);
    let (data, table) = load_cohort(&paths, &rules)?;
    Ok((data, table, rules))
}

/// Row indices of the matched individuals, from the match output.
pub fn matched_rows(config: &Config, ids: &[String]) -> Result<Vec<usize>, CliError> {
    let path = config.match_dir().join("matched.csv");
    let text = crate::outputs::read_file(&path)?;
    let mut selected = std::collections::BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            continue;
        }
        let mut cells = line.split(',');
        let id = cells.next().unwrap_or("");
        let _group = cells.next();
        let flag = cells.next().unwrap_or("0");
        if flag == "1" {
            selected.insert(id.to_string());
        }
    }
    let rows: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter_map(|(j, id)| selected.contains(id).then_some(j))
        .collect();
    if rows.is_empty() {
        return Err(CliError::Data(format!(
            "{} selects no individuals present in the cohort",
            path.display()
        )));
    }
    Ok(rows)
}

/// The fitting sample: matched subset when configured, full cohort
/// otherwise.
pub fn fitting_sample(
    config: &Config,
    data: &ResponseMatrix,
    table: &CovariateTable,
) -> Result<(ResponseMatrix, Vec<String>), CliError> {
    if config.model.use_matched {
        let rows = matched_rows(config, data.ids())?;
        let groups = rows.iter().map(|&j| table.groups[j].clone()).collect();
        Ok((data.select_rows(&rows), groups))
    } else {
        Ok((data.clone(), table.groups.clone()))
    }
}

pub fn fit_options(config: &Config) -> quirt::estimation::FitOptions {
    quirt::estimation::FitOptions {
        quad_points_per_dim: (config.model.quad_points > 0).then_some(config.model.quad_points),
        qmc_points: config.model.qmc_points,
        n_random_starts: config.model.random_starts,
        max_em_iters: config.model.max_em_iters,
        seed: config.seed,
        ..quirt::estimation::FitOptions::default()
    }
}

/// Quadrature rule matching a fitted Normal-trait model and the options it
/// was fitted with.
pub fn rule_for(
    model: &quirt::model::ModelSpec,
    opts: &quirt::estimation::FitOptions,
) -> Result<quirt::quadrature::QuadratureRule, CliError> {
    let quirt::model::LatentSpec::Normal { mean, cov } = &model.latent else {
        return Err(CliError::Usage("quadrature rules apply to Normal-trait models".into()));
    };
    let dims = mean.len();
    let rule = if dims <= 3 {
        let pts = opts
            .quad_points_per_dim
            .unwrap_or_else(|| quirt::estimation::default_quad_points(dims));
        quirt::quadrature::gauss_hermite_rule(pts, dims, mean, cov)?
    } else {
        quirt::quadrature::qmc_rule(opts.qmc_points, dims, mean, cov, opts.seed)?
    };
    Ok(rule)
}

