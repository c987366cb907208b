//! Collapsing individuals onto unique response patterns.
//!
//! The E-step cost scales with the number of distinct patterns, not N.
//! Patterns are keyed by the full response row (the `MISSING` code carries
//! the eligibility mask) and, when a covariate design is present, by the
//! design row as well. Pattern order is canonical (sorted keys), so fits and
//! likelihood sums do not depend on the row order of the data.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::model::ResponseMatrix;

/// Unique response patterns with multiplicities.
#[derive(Debug, Clone)]
pub struct UniquePatterns {
    /// Distinct rows in canonical (sorted-key) order.
    pub rows: Vec<Vec<i16>>,
    /// Multiplicity of each pattern; sums to N.
    pub counts: Vec<usize>,
    /// Pattern index of each individual.
    pub index_map: Vec<usize>,
    /// Covariate row shared by each pattern, when grouping included a design.
    pub designs: Option<Vec<Vec<f64>>>,
}

impl UniquePatterns {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn design_row(&self, u: usize) -> Option<&[f64]> {
        self.designs.as_ref().map(|d| d[u].as_slice())
    }

    /// Design rows as a matrix, one row per pattern.
    pub(crate) fn design_matrix(&self) -> Option<DMatrix<f64>> {
        self.designs.as_ref().map(|rows| {
            let q = rows.first().map_or(0, Vec::len);
            DMatrix::from_fn(rows.len(), q, |r, c| rows[r][c])
        })
    }
}

/// Collapse the data onto unique `(responses, eligibility)` patterns.
pub fn unique_patterns(data: &ResponseMatrix) -> UniquePatterns {
    unique_patterns_grouped(data, None)
}

/// Collapse onto unique `(responses, eligibility, covariate-row)` patterns.
/// With covariates present two individuals only share a pattern if their
/// design rows agree bit for bit.
pub fn unique_patterns_grouped(
    data: &ResponseMatrix,
    design: Option<&DMatrix<f64>>,
) -> UniquePatterns {
    let n = data.n();
    let mut groups: BTreeMap<(Vec<i16>, Vec<u64>), Vec<usize>> = BTreeMap::new();
    for j in 0..n {
        let key_design: Vec<u64> = match design {
            Some(w) => (0..w.ncols()).map(|c| w[(j, c)].to_bits()).collect(),
            None => Vec::new(),
        };
        groups.entry((data.row(j).to_vec(), key_design)).or_default().push(j);
    }
    let mut rows = Vec::with_capacity(groups.len());
    let mut counts = Vec::with_capacity(groups.len());
    let mut designs = design.map(|_| Vec::with_capacity(groups.len()));
    let mut index_map = vec![0usize; n];
    for (u, ((row, wbits), members)) in groups.into_iter().enumerate() {
        rows.push(row);
        counts.push(members.len());
        if let Some(d) = designs.as_mut() {
            d.push(wbits.iter().map(|b| f64::from_bits(*b)).collect());
        }
        for j in members {
            index_map[j] = u;
        }
    }
    UniquePatterns { rows, counts, index_map, designs }
}
