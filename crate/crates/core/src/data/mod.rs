//! Data ingestion, scoring rules, preprocessing transforms,
//! synthetic-cohort simulation and model serialization.

mod cohort;
mod model_file;
mod preprocess;
mod rules;
mod simulate;

pub use cohort::{apply_scoring_rules, load_cohort, write_cohort, CohortPaths};
pub use model_file::{load_model, save_model, SCHEMA_VERSION};
pub use preprocess::{collapse_rare, TransformAction};
pub use rules::{
    default_scoring_rules, identity_rules, load_scoring_rules, parse_scoring_rules,
    rules_to_item_specs, write_scoring_rules, RuleEntry, ScoringRule,
};
pub use simulate::{
    simulate_cohort, CovariateSim, GroupSpec, SimulationSpec, TruthRecord,
};

use serde::{Deserialize, Serialize};

/// Numeric scores per (individual, item), `NaN` for ineligible cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponses {
    pub ids: Vec<String>,
    values: Vec<f64>,
    n_items: usize,
}

impl ScoredResponses {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Self {
        let n_items = rows.first().map_or(0, Vec::len);
        let values = rows.into_iter().flatten().collect();
        Self { ids, values, n_items }
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_items..(j + 1) * self.n_items]
    }
}

/// Full-precision float formatting for output files (17 significant
/// digits).
pub fn fmt_full(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{x}")
    } else {
        format!("{x:.16e}")
    }
}
