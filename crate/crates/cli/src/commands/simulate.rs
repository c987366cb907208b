//! Synthetic desk-scale cohort: eight binary quality indicators on two
//! constructs (ambulatory and acute care), a ninth held-out indicator, two
//! health-status covariates that confound group comparisons, and a
//! three-class truth. Group disparity effects come from the configuration
//! (zero by default).

use quirt::data::{
    identity_rules, simulate_cohort, write_cohort, write_scoring_rules, CohortPaths,
    CovariateSim, GroupSpec, SimulationSpec,
};
use quirt::model::{ItemParams, ItemSpec, LatentSpec, ModelSpec};

use crate::config::Config;
use crate::outputs::{ensure_dir, write_file};
use crate::CliError;

/// (id, label, trait index, discrimination, easiness, NA probability)
const ITEMS: [(&str, &str, usize, f64, f64, f64); 9] = [
    ("clozapine", "Any clozapine use", 0, 1.1, -1.6, 0.0),
    ("adherence_80", "Antipsychotic adherence >= 80%", 0, 1.3, -0.2, 0.0),
    ("ambulatory_quarterly", "Quarterly ambulatory MH visits", 0, 2.0, 0.3, 0.0),
    ("psychosocial_any", "Any psychosocial services", 0, 0.9, 0.8, 0.0),
    ("schizo_followup_30d", "Follow-up within 30 days of discharge", 1, 1.2, 0.0, 0.5),
    ("ed_followup_30d", "Follow-up within 30 days of an ED visit", 1, 1.0, 0.4, 0.3),
    ("no_excess_acute", "No excessive acute care", 1, 1.8, 1.2, 0.0),
    ("no_readmit", "No 30-day readmission", 1, 1.6, 1.0, 0.0),
    ("psychosocial_quarterly", "Quarterly psychosocial services", 0, 1.4, -0.3, 0.0),
];

// The first construct is deliberately non-monotone across classes (the
// middle class sits lowest), so the two traits are genuinely distinct.
const SUPPORT: [[f64; 2]; 3] = [[-1.2, -1.2], [-2.0, 0.8], [0.6, 2.4]];
const PRIOR: [f64; 3] = [0.15, 0.35, 0.50];

pub fn build_spec(config: &Config) -> Result<SimulationSpec, CliError> {
    let items: Vec<ItemSpec> =
        ITEMS.iter().map(|(id, label, ..)| ItemSpec::binary(id, label)).collect();
    let params: Vec<ItemParams> = ITEMS
        .iter()
        .map(|&(_, _, trait_index, disc, easiness, _)| {
            ItemParams::latent_class(disc, easiness, trait_index)
        })
        .collect();
    let latent = LatentSpec::discrete(
        SUPPORT.iter().map(|xi| xi.to_vec()).collect(),
        PRIOR.to_vec(),
    )?;
    let groups: Vec<GroupSpec> = config
        .simulate
        .groups
        .iter()
        .map(|g| {
            if !g.effect.is_empty() && g.effect.len() != PRIOR.len() - 1 {
                return Err(CliError::Usage(format!(
                    "group '{}': effect needs {} entries (classes 2..C)",
                    g.label,
                    PRIOR.len() - 1
                )));
            }
            Ok(GroupSpec { label: g.label.clone(), weight: g.weight, effect: g.effect.clone() })
        })
        .collect::<Result<_, _>>()?;
    let covariates = vec![
        CovariateSim {
            name: "age_q".into(),
            categories: vec!["q1".into(), "q2".into(), "q3".into(), "q4".into()],
            probs_by_group: config
                .simulate
                .groups
                .iter()
                .map(|g| match g.label.as_str() {
                    "black" => vec![0.28, 0.26, 0.24, 0.22],
                    "latinx" => vec![0.35, 0.28, 0.22, 0.15],
                    _ => vec![0.22, 0.24, 0.26, 0.28],
                })
                .collect(),
            effects: vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![-0.1, -0.2], vec![-0.2, -0.4]],
        },
        CovariateSim {
            name: "comorbidity".into(),
            categories: vec!["none".into(), "present".into()],
            probs_by_group: config
                .simulate
                .groups
                .iter()
                .map(|g| match g.label.as_str() {
                    "black" => vec![0.50, 0.50],
                    "latinx" => vec![0.62, 0.38],
                    _ => vec![0.55, 0.45],
                })
                .collect(),
            effects: vec![vec![0.0, 0.0], vec![-0.5, -1.0]],
        },
    ];
    Ok(SimulationSpec {
        model: ModelSpec::new(params, latent),
        items,
        n: config.simulate.n,
        groups,
        covariates,
        na_probs: ITEMS.iter().map(|it| it.5).collect(),
        seed: config.seed,
    })
}

pub fn run(config: &Config) -> Result<(), CliError> {
    let spec = build_spec(config)?;
    let (data, table, truth) = simulate_cohort(&spec)?;
    let dir = config.cohort_dir();
    ensure_dir(&dir)?;
    let rules = identity_rules(data.items());
    write_cohort(&CohortPaths::in_dir(&dir), &data, &table, &rules)?;
    write_scoring_rules(&dir.join("scoring_rules.csv"), &rules)?;
    let truth_json = serde_json::to_string_pretty(&truth)
        .map_err(|e| CliError::Data(format!("truth record: {e}")))?;
    write_file(&dir.join("truth.json"), &truth_json)?;
    println!(
        "simulated {} individuals, {} items -> {}",
        data.n(),
        data.n_items(),
        dir.display()
    );
    Ok(())
}
