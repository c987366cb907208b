//! Scoring rules: the mapping from raw response codes to numeric scores (or
//! not-applicable) that defines both the observed-score pipeline and the
//! model category coding.
//!
//! Rules ship as an editable CSV data file (`item_id,kind,label,code,score`)
//! because they are study policy, not code. A raw code with score `NA`
//! marks the cell ineligible; the scored codes, in declaration order, are
//! the model categories `0..K-1`.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{ItemKind, ItemSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleEntry {
    pub code: String,
    /// Numeric score, or `None` for not-applicable.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringRule {
    pub item_id: String,
    pub kind: ItemKind,
    pub label: String,
    pub entries: Vec<RuleEntry>,
}

impl ScoringRule {
    /// Scored (non-NA) codes in declaration order — the model categories.
    pub fn categories(&self) -> Vec<String> {
        self.entries.iter().filter(|e| e.score.is_some()).map(|e| e.code.clone()).collect()
    }

    /// Category index of a raw code: `Ok(None)` marks not-applicable.
    pub fn category_of(&self, code: &str) -> Result<Option<u16>> {
        let mut idx = 0u16;
        for e in &self.entries {
            if e.code == code {
                return Ok(e.score.map(|_| idx));
            }
            if e.score.is_some() {
                idx += 1;
            }
        }
        Err(Error::Data(format!(
            "item '{}': response code '{code}' not covered by its scoring rule",
            self.item_id
        )))
    }

    /// Numeric score of a category index.
    pub fn score_of(&self, category: u16) -> Option<f64> {
        self.entries.iter().filter_map(|e| e.score).nth(category as usize)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.code.as_str()) {
                return Err(Error::Data(format!(
                    "item '{}': duplicate code '{}'",
                    self.item_id, e.code
                )));
            }
        }
        let scores: Vec<f64> = self.entries.iter().filter_map(|e| e.score).collect();
        if scores.len() < 2 {
            return Err(Error::Data(format!(
                "item '{}': needs at least 2 scored codes",
                self.item_id
            )));
        }
        if self.kind == ItemKind::Binary && scores.len() != 2 {
            return Err(Error::Data(format!(
                "item '{}': binary items need exactly 2 scored codes",
                self.item_id
            )));
        }
        if self.kind == ItemKind::Ordinal && scores.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "item '{}': ordinal scores must be strictly increasing in declaration order",
                self.item_id
            )));
        }
        Ok(())
    }
}

fn parse_kind(s: &str) -> Result<ItemKind> {
    match s {
        "binary" => Ok(ItemKind::Binary),
        "ordinal" => Ok(ItemKind::Ordinal),
        "nominal" => Ok(ItemKind::Nominal),
        other => Err(Error::Parse(format!("unknown item kind '{other}'"))),
    }
}

/// Parse rules from CSV with columns `item_id,kind,label,code,score`.
/// Rows of one item must be contiguous; `NA` (or empty) score means
/// not-applicable.
pub fn parse_scoring_rules<R: Read>(reader: R) -> Result<Vec<ScoringRule>> {
    let mut csv_reader = csv::ReaderBuilder::new().from_reader(reader);
    let mut rules: Vec<ScoringRule> = Vec::new();
    for record in csv_reader.records() {
        let record = record.map_err(|e| Error::Parse(format!("scoring rules: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 5 {
            return Err(Error::Parse(format!(
                "scoring rules line {line}: expected 5 columns, got {}",
                record.len()
            )));
        }
        let item_id = record[0].to_string();
        let kind = parse_kind(&record[1])?;
        let label = record[2].to_string();
        let code = record[3].to_string();
        let score_raw = record[4].trim();
        let score = if score_raw.is_empty() || score_raw.eq_ignore_ascii_case("na") {
            None
        } else {
            Some(score_raw.parse::<f64>().map_err(|_| {
                Error::Parse(format!("scoring rules line {line}: bad score '{score_raw}'"))
            })?)
        };
        match rules.last_mut() {
            Some(rule) if rule.item_id == item_id => {
                rule.entries.push(RuleEntry { code, score });
            }
            _ => {
                if rules.iter().any(|r| r.item_id == item_id) {
                    return Err(Error::Parse(format!(
                        "scoring rules line {line}: rows of item '{item_id}' must be contiguous"
                    )));
                }
                rules.push(ScoringRule {
                    item_id,
                    kind,
                    label,
                    entries: vec![RuleEntry { code, score }],
                });
            }
        }
    }
    if rules.is_empty() {
        return Err(Error::Data("scoring rules file declares no items".into()));
    }
    for rule in &rules {
        rule.validate()?;
    }
    Ok(rules)
}

pub fn load_scoring_rules(path: &Path) -> Result<Vec<ScoringRule>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    parse_scoring_rules(file)
}

pub fn write_scoring_rules(path: &Path, rules: &[ScoringRule]) -> Result<()> {
    let mut out = String::from("item_id,kind,label,code,score\n");
    for rule in rules {
        let kind = match rule.kind {
            ItemKind::Binary => "binary",
            ItemKind::Ordinal => "ordinal",
            ItemKind::Nominal => "nominal",
        };
        for e in &rule.entries {
            let score = e.score.map_or("NA".to_string(), |s| super::fmt_full(s));
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                rule.item_id, kind, rule.label, e.code, score
            ));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// The default rule set: one row per quality metric of the reference study
/// design, scores as published.
pub fn default_scoring_rules() -> Vec<ScoringRule> {
    parse_scoring_rules(include_str!("../../data/default_scoring_rules.csv").as_bytes())
        .expect("embedded default rules are valid")
}

/// Item declarations implied by a rule set.
pub fn rules_to_item_specs(rules: &[ScoringRule]) -> Result<Vec<ItemSpec>> {
    rules
        .iter()
        .map(|r| ItemSpec::new(&r.item_id, r.kind, r.categories(), &r.label))
        .collect()
}

/// Identity rules for already-coded items: each category label maps to its
/// own index as the score. Used for preprocessed cohorts.
pub fn identity_rules(specs: &[ItemSpec]) -> Vec<ScoringRule> {
    specs
        .iter()
        .map(|s| ScoringRule {
            item_id: s.id.clone(),
            kind: s.kind,
            label: s.label.clone(),
            entries: s
                .categories
                .iter()
                .enumerate()
                .map(|(k, code)| RuleEntry { code: code.clone(), score: Some(k as f64) })
                .collect(),
        })
        .collect()
}
