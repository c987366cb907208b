//! Long-format cohort files.
//!
//! Three CSVs: responses (`individual_id,item_id,response`), covariates
//! (`individual_id,covariate,value`) and groups (`individual_id,group`).
//! The long format represents eligibility sparsity naturally: a missing
//! (individual, item) row — or a rule-mapped not-applicable code — is an
//! ineligible cell. Individuals are ordered by id, so loading is
//! order-independent over rows.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Path, PathBuf};

use super::rules::{rules_to_item_specs, ScoringRule};
use super::ScoredResponses;
use crate::matching::CovariateTable;
use crate::model::{ResponseMatrix, MISSING};
use crate::{Error, Result};

/// Locations of the three cohort files.
#[derive(Debug, Clone)]
pub struct CohortPaths {
    pub responses: PathBuf,
    pub covariates: PathBuf,
    pub groups: PathBuf,
}

impl CohortPaths {
    /// Conventional file names inside a directory.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            responses: dir.join("responses.csv"),
            covariates: dir.join("covariates.csv"),
            groups: dir.join("groups.csv"),
        }
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

/// Load a cohort. Raw response codes are mapped through the scoring rules:
/// a code scored `NA` becomes an ineligible cell. Errors carry line
/// numbers.
pub fn load_cohort(
    paths: &CohortPaths,
    rules: &[ScoringRule],
) -> Result<(ResponseMatrix, CovariateTable)> {
    let items = rules_to_item_specs(rules)?;
    let item_index: BTreeMap<&str, usize> =
        rules.iter().enumerate().map(|(i, r)| (r.item_id.as_str(), i)).collect();

    // individual -> item -> (category-or-missing, line)
    let mut responses: BTreeMap<String, BTreeMap<usize, (i16, u64)>> = BTreeMap::new();
    let mut reader = csv::Reader::from_reader(open(&paths.responses)?);
    expect_headers(&mut reader, &["individual_id", "item_id", "response"], &paths.responses)?;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(format!("responses: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(Error::Data(format!(
                "responses line {line}: expected 3 columns, got {}",
                record.len()
            )));
        }
        let id = record[0].to_string();
        let item_id = &record[1];
        let &item = item_index.get(item_id).ok_or_else(|| {
            Error::Data(format!("responses line {line}: unknown item '{item_id}'"))
        })?;
        let code = rules[item]
            .category_of(&record[2])
            .map_err(|e| Error::Data(format!("responses line {line}: {e}")))?;
        let cell = code.map_or(MISSING, |c| c as i16);
        let row = responses.entry(id).or_default();
        if let Some((_, first_line)) = row.get(&item) {
            return Err(Error::Data(format!(
                "duplicate response for (individual, item) at lines {first_line} and {line}"
            )));
        }
        row.insert(item, (cell, line));
    }

    let ids: Vec<String> = responses.keys().cloned().collect();
    if ids.is_empty() {
        return Err(Error::Data("responses file contains no rows".into()));
    }
    let rows: Vec<Vec<i16>> = ids
        .iter()
        .map(|id| {
            let row_map = &responses[id];
            (0..items.len())
                .map(|i| row_map.get(&i).map_or(MISSING, |(c, _)| *c))
                .collect()
        })
        .collect();
    let matrix = ResponseMatrix::from_rows(items, ids.clone(), rows)?;
    let table = load_covariates(paths, &ids)?;
    Ok((matrix, table))
}

fn load_covariates(paths: &CohortPaths, ids: &[String]) -> Result<CovariateTable> {
    let id_pos: BTreeMap<&str, usize> =
        ids.iter().enumerate().map(|(j, id)| (id.as_str(), j)).collect();

    // covariate name -> individual -> raw value
    let mut values: BTreeMap<String, BTreeMap<usize, String>> = BTreeMap::new();
    let mut reader = csv::Reader::from_reader(open(&paths.covariates)?);
    expect_headers(&mut reader, &["individual_id", "covariate", "value"], &paths.covariates)?;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(format!("covariates: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(Error::Data(format!(
                "covariates line {line}: expected 3 columns, got {}",
                record.len()
            )));
        }
        if let Some(&j) = id_pos.get(&record[0]) {
            values.entry(record[1].to_string()).or_default().insert(j, record[2].to_string());
        }
    }

    let mut groups = vec![String::new(); ids.len()];
    let mut seen = vec![false; ids.len()];
    let mut reader = csv::Reader::from_reader(open(&paths.groups)?);
    expect_headers(&mut reader, &["individual_id", "group"], &paths.groups)?;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(format!("groups: {e}")))?;
        if let Some(&j) = id_pos.get(&record[0]) {
            groups[j] = record[1].to_string();
            seen[j] = true;
        }
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!("individual '{}' has no group", ids[j])));
    }

    let covariates: Vec<String> = values.keys().cloned().collect();
    let mut categories = Vec::with_capacity(covariates.len());
    let mut codes = vec![0u16; ids.len() * covariates.len()];
    let mut raw = vec![vec![String::new(); covariates.len()]; ids.len()];
    for (k, name) in covariates.iter().enumerate() {
        let per_ind = &values[name];
        let mut levels: BTreeSet<String> = per_ind.values().cloned().collect();
        if per_ind.len() < ids.len() {
            // Explicit "missing" level for individuals without the covariate.
            levels.insert("missing".to_string());
        }
        let levels: Vec<String> = levels.into_iter().collect();
        for j in 0..ids.len() {
            let value = per_ind.get(&j).cloned().unwrap_or_else(|| "missing".to_string());
            let code = levels.iter().position(|l| *l == value).expect("level present");
            codes[j * covariates.len() + k] = code as u16;
            raw[j][k] = value;
        }
        categories.push(levels);
    }
    CovariateTable::new(ids.to_vec(), groups, covariates, categories, codes, raw)
}

fn expect_headers<R: Read>(
    reader: &mut csv::Reader<R>,
    expected: &[&str],
    path: &Path,
) -> Result<()> {
    let headers = reader.headers().map_err(|e| Error::Parse(format!("{e}")))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::Data(format!(
            "{}: expected header {expected:?}, got {got:?}",
            path.display()
        )));
    }
    Ok(())
}

/// Numeric score matrix for the observed-score pipeline: each category is
/// replaced by its rule score, ineligible cells by NaN.
pub fn apply_scoring_rules(
    data: &ResponseMatrix,
    rules: &[ScoringRule],
) -> Result<ScoredResponses> {
    if data.n_items() != rules.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} items in data, {} rules",
            data.n_items(),
            rules.len()
        )));
    }
    for (spec, rule) in data.items().iter().zip(rules) {
        if spec.id != rule.item_id || spec.n_categories != rule.categories().len() {
            return Err(Error::Data(format!(
                "rule for '{}' does not cover item '{}' with {} categories",
                rule.item_id, spec.id, spec.n_categories
            )));
        }
    }
    let rows: Vec<Vec<f64>> = (0..data.n())
        .map(|j| {
            (0..data.n_items())
                .map(|i| match data.response(j, i) {
                    Some(c) => rules[i].score_of(c).expect("category covered"),
                    None => f64::NAN,
                })
                .collect()
        })
        .collect();
    Ok(ScoredResponses::new(data.ids().to_vec(), rows))
}

/// Write a cohort back to the three CSVs, raw codes recovered from the
/// rules. Ineligible cells are written only when the rule has an explicit
/// NA code (otherwise the row is simply absent).
pub fn write_cohort(
    paths: &CohortPaths,
    data: &ResponseMatrix,
    table: &CovariateTable,
    rules: &[ScoringRule],
) -> Result<()> {
    let mut resp = String::from("individual_id,item_id,response\n");
    for j in 0..data.n() {
        for (i, rule) in rules.iter().enumerate() {
            match data.response(j, i) {
                Some(c) => {
                    let cats = rule.categories();
                    resp.push_str(&format!(
                        "{},{},{}\n",
                        data.ids()[j],
                        rule.item_id,
                        cats[c as usize]
                    ));
                }
                None => {
                    if let Some(na) = rule.entries.iter().find(|e| e.score.is_none()) {
                        resp.push_str(&format!(
                            "{},{},{}\n",
                            data.ids()[j],
                            rule.item_id,
                            na.code
                        ));
                    }
                }
            }
        }
    }
    std::fs::write(&paths.responses, resp)?;

    let mut cov = String::from("individual_id,covariate,value\n");
    for j in 0..table.n() {
        for (k, name) in table.covariates.iter().enumerate() {
            cov.push_str(&format!("{},{},{}\n", table.ids[j], name, table.raw[j][k]));
        }
    }
    std::fs::write(&paths.covariates, cov)?;

    let mut grp = String::from("individual_id,group\n");
    for j in 0..table.n() {
        grp.push_str(&format!("{},{}\n", table.ids[j], table.groups[j]));
    }
    std::fs::write(&paths.groups, grp)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::rules::parse_scoring_rules;

    fn two_item_rules() -> Vec<ScoringRule> {
        let csv = "item_id,kind,label,code,score\n\
                   visit,binary,Any visit,no,0\n\
                   visit,binary,Any visit,yes,1\n\
                   followup,binary,Follow-up,no_discharge,NA\n\
                   followup,binary,Follow-up,late,0\n\
                   followup,binary,Follow-up,on_time,1\n";
        parse_scoring_rules(csv.as_bytes()).unwrap()
    }

    fn write_cohort_files(dir: &Path, responses: &str, covariates: &str, groups: &str) -> CohortPaths {
        let paths = CohortPaths::in_dir(dir);
        std::fs::write(&paths.responses, responses).unwrap();
        std::fs::write(&paths.covariates, covariates).unwrap();
        std::fs::write(&paths.groups, groups).unwrap();
        paths
    }

    #[test]
    fn minimal_cohort_loads() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_cohort_files(
            dir.path(),
            "individual_id,item_id,response\np1,visit,yes\np1,followup,on_time\np2,visit,no\np2,followup,late\n",
            "individual_id,covariate,value\np1,age,old\np2,age,young\n",
            "individual_id,group\np1,white\np2,black\n",
        );
        let (data, table) = load_cohort(&paths, &two_item_rules()).unwrap();
        assert_eq!(data.n(), 2);
        assert_eq!(data.n_items(), 2);
        assert_eq!(data.response(0, 0), Some(1));
        assert_eq!(data.response(1, 1), Some(0));
        assert_eq!(table.groups, vec!["white", "black"]);
        assert_eq!(table.covariates, vec!["age"]);
    }

    #[test]
    fn na_code_marks_ineligible_and_decrements_count() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_cohort_files(
            dir.path(),
            "individual_id,item_id,response\np1,visit,yes\np1,followup,no_discharge\n",
            "individual_id,covariate,value\np1,age,old\n",
            "individual_id,group\np1,white\n",
        );
        let (data, _) = load_cohort(&paths, &two_item_rules()).unwrap();
        assert_eq!(data.n_eligible(0), 1);
        assert!(!data.eligible(0, 1));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        // Unknown item at line 3.
        let paths = write_cohort_files(
            dir.path(),
            "individual_id,item_id,response\np1,visit,yes\np1,mystery,yes\n",
            "individual_id,covariate,value\n",
            "individual_id,group\np1,white\n",
        );
        let err = load_cohort(&paths, &two_item_rules()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(err.to_string().contains("mystery"));
        // Duplicate rows report both lines.
        let paths = write_cohort_files(
            dir.path(),
            "individual_id,item_id,response\np1,visit,yes\np1,visit,no\n",
            "individual_id,covariate,value\n",
            "individual_id,group\np1,white\n",
        );
        let err = load_cohort(&paths, &two_item_rules()).unwrap_err();
        assert!(err.to_string().contains("lines 2 and 3"), "{err}");
    }

    #[test]
    fn load_is_row_order_independent() {
        let dir = tempfile::tempdir().unwrap();
        let fwd = write_cohort_files(
            dir.path(),
            "individual_id,item_id,response\np2,visit,no\np1,visit,yes\np1,followup,late\n",
            "individual_id,covariate,value\np2,age,young\np1,age,old\n",
            "individual_id,group\np2,black\np1,white\n",
        );
        let (d1, t1) = load_cohort(&fwd, &two_item_rules()).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let rev = write_cohort_files(
            dir2.path(),
            "individual_id,item_id,response\np1,followup,late\np1,visit,yes\np2,visit,no\n",
            "individual_id,covariate,value\np1,age,old\np2,age,young\n",
            "individual_id,group\np1,white\np2,black\n",
        );
        let (d2, t2) = load_cohort(&rev, &two_item_rules()).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn scoring_and_write_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_cohort_files(
            dir.path(),
            "individual_id,item_id,response\np1,visit,yes\np1,followup,no_discharge\np2,visit,no\np2,followup,on_time\n",
            "individual_id,covariate,value\np1,age,old\np2,age,young\n",
            "individual_id,group\np1,white\np2,black\n",
        );
        let rules = two_item_rules();
        let (data, table) = load_cohort(&paths, &rules).unwrap();
        let scored = apply_scoring_rules(&data, &rules).unwrap();
        assert_eq!(scored.row(0)[0], 1.0);
        assert!(scored.row(0)[1].is_nan());
        assert_eq!(scored.row(1)[1], 1.0);
        // Round trip through files.
        let dir2 = tempfile::tempdir().unwrap();
        let out = CohortPaths::in_dir(dir2.path());
        write_cohort(&out, &data, &table, &rules).unwrap();
        let (data2, table2) = load_cohort(&out, &rules).unwrap();
        assert_eq!(data, data2);
        assert_eq!(table, table2);
    }
}
