//! Rare-category collapsing.
//!
//! Categories held by less than a threshold share of the cohort are merged
//! with a neighbouring option (ordinal: the adjacent category with the
//! higher frequency; binary/nominal: the modal other category). Items left
//! with a single category — including items with no variation at all — are
//! eliminated. Every action is logged. Applying the transform twice is a
//! no-op.

use serde::{Deserialize, Serialize};

use crate::model::{ItemSpec, ResponseMatrix, MISSING};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum TransformAction {
    MergedCategory { item_id: String, from: String, into: String },
    EliminatedItem { item_id: String, reason: String },
}

struct WorkItem {
    spec: ItemSpec,
    codes: Vec<i16>,
}

/// Collapse rare categories. The frequency denominator is the whole cohort
/// (N), so categories of low-eligibility items are measured against
/// everyone, not just eligible responders.
pub fn collapse_rare(
    data: &ResponseMatrix,
    threshold: f64,
) -> Result<(ResponseMatrix, Vec<TransformAction>)> {
    assert!(threshold > 0.0 && threshold < 1.0, "threshold must be in (0, 1)");
    let n = data.n();
    let mut log = Vec::new();
    let mut items: Vec<WorkItem> = (0..data.n_items())
        .map(|i| WorkItem {
            spec: data.items()[i].clone(),
            codes: (0..n).map(|j| data.code(j, i)).collect(),
        })
        .collect();

    loop {
        let mut acted = false;
        let mut keep: Vec<bool> = vec![true; items.len()];
        for (idx, item) in items.iter_mut().enumerate() {
            let k = item.spec.n_categories;
            let mut counts = vec![0usize; k];
            for &c in &item.codes {
                if c != MISSING {
                    counts[c as usize] += 1;
                }
            }
            // Lowest-frequency rare category, ties to the lowest index.
            let rare = (0..k)
                .filter(|&c| (counts[c] as f64) < threshold * n as f64)
                .min_by_key(|&c| (counts[c], c));
            let Some(from) = rare else { continue };
            acted = true;
            if k == 2 {
                // Merging a binary category leaves a constant item.
                log.push(TransformAction::EliminatedItem {
                    item_id: item.spec.id.clone(),
                    reason: format!(
                        "category '{}' below threshold left a single category",
                        item.spec.categories[from]
                    ),
                });
                keep[idx] = false;
                continue;
            }
            let into = match item.spec.kind {
                crate::model::ItemKind::Ordinal => {
                    // Adjacent neighbour with the higher frequency.
                    match (from.checked_sub(1), (from + 1 < k).then_some(from + 1)) {
                        (Some(lo), Some(hi)) => {
                            if counts[lo] >= counts[hi] {
                                lo
                            } else {
                                hi
                            }
                        }
                        (Some(lo), None) => lo,
                        (None, Some(hi)) => hi,
                        (None, None) => unreachable!("k >= 3"),
                    }
                }
                _ => {
                    // Modal category among the others.
                    (0..k)
                        .filter(|&c| c != from)
                        .max_by_key(|&c| (counts[c], usize::MAX - c))
                        .expect("k >= 3")
                }
            };
            log.push(TransformAction::MergedCategory {
                item_id: item.spec.id.clone(),
                from: item.spec.categories[from].clone(),
                into: item.spec.categories[into].clone(),
            });
            merge_category(item, from, into);
        }
        items = items
            .into_iter()
            .zip(keep)
            .filter_map(|(it, k)| k.then_some(it))
            .collect();
        if !acted {
            break;
        }
    }

    if items.is_empty() {
        return Err(crate::Error::Data(
            "rare-category collapsing eliminated every item".into(),
        ));
    }
    let specs: Vec<ItemSpec> = items.iter().map(|it| it.spec.clone()).collect();
    let rows: Vec<Vec<i16>> =
        (0..n).map(|j| items.iter().map(|it| it.codes[j]).collect()).collect();
    let out = ResponseMatrix::from_rows(specs, data.ids().to_vec(), rows)?;
    Ok((out, log))
}

fn merge_category(item: &mut WorkItem, from: usize, into: usize) {
    let k = item.spec.n_categories;
    // New code for each old code after removing `from`.
    let remap: Vec<i16> = (0..k)
        .map(|c| {
            let target = if c == from { into } else { c };
            (target - usize::from(target > from)) as i16
        })
        .collect();
    for code in item.codes.iter_mut() {
        if *code != MISSING {
            *code = remap[*code as usize];
        }
    }
    let mut categories = Vec::with_capacity(k - 1);
    for c in 0..k {
        if c == from {
            continue;
        }
        if c == into {
            categories.push(format!(
                "{}|{}",
                item.spec.categories[into], item.spec.categories[from]
            ));
        } else {
            categories.push(item.spec.categories[c].clone());
        }
    }
    item.spec = ItemSpec::new(&item.spec.id, item.spec.kind, categories, &item.spec.label)
        .expect("merge keeps at least 2 categories");
}
