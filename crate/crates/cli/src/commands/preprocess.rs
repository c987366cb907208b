//! Rare-category collapsing; writes the processed cohort with identity
//! rules and the transform log.

use quirt::data::{
    collapse_rare, identity_rules, write_cohort, write_scoring_rules, CohortPaths,
    TransformAction,
};

use crate::commands::load_dir;
use crate::config::Config;
use crate::outputs::{ensure_dir, Csv};
use crate::CliError;

pub fn run(config: &Config) -> Result<(), CliError> {
    let (data, table, _) = load_dir(&config.cohort_dir())?;
    let (processed, log) = collapse_rare(&data, config.preprocess.rare_threshold)?;
    if processed.item_index(&config.preprocess.heldout_item).is_none() {
        return Err(CliError::Data(format!(
            "held-out item '{}' was eliminated by preprocessing; validation impossible",
            config.preprocess.heldout_item
        )));
    }
    let dir = config.processed_dir();
    ensure_dir(&dir)?;
    let rules = identity_rules(processed.items());
    write_cohort(&CohortPaths::in_dir(&dir), &processed, &table, &rules)?;
    write_scoring_rules(&dir.join("scoring_rules.csv"), &rules)?;
    let mut csv = Csv::new(&["item_id", "action", "from", "into", "reason"]);
    for action in &log {
        match action {
            TransformAction::MergedCategory { item_id, from, into } => {
                csv.row(&[
                    item_id.clone(),
                    "merged_category".into(),
                    from.clone(),
                    into.clone(),
                    String::new(),
                ]);
            }
            TransformAction::EliminatedItem { item_id, reason } => {
                csv.row(&[
                    item_id.clone(),
                    "eliminated_item".into(),
                    String::new(),
                    String::new(),
                    reason.clone(),
                ]);
            }
        }
    }
    csv.write(&dir.join("transform_log.csv"))?;
    println!(
        "preprocessed: {} items kept, {} transform actions -> {}",
        processed.n_items(),
        log.len(),
        dir.display()
    );
    Ok(())
}
