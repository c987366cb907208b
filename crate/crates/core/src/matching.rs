//! Template sampling and cardinality matching.
//!
//! A template is a simple random sample of the cohort. For each
//! race/ethnicity group the solver selects exactly `T` candidates whose
//! discretized covariate counts match the template's, minimizing the total
//! absolute imbalance over all (covariate, category) cells. The solver is
//! an exact branch-and-bound over candidates in index order: the bound is
//! the sum over covariates of each covariate's minimum achievable slack
//! given the remaining availability, and a greedy-swap warm start supplies
//! the initial incumbent. The first optimal leaf in depth-first order is
//! the lexicographically-preferred optimum (lowest candidate indices
//! selected first).

use rand::seq::index::sample as index_sample;
use serde::{Deserialize, Serialize};

use crate::rng::derive_rng;
use crate::{Error, Result};

/// Discretized covariates, group labels and retained raw values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateTable {
    pub ids: Vec<String>,
    pub groups: Vec<String>,
    /// Covariate names, in column order.
    pub covariates: Vec<String>,
    /// Category labels per covariate, in code order.
    pub categories: Vec<Vec<String>>,
    /// Category code per (individual, covariate), row-major.
    codes: Vec<u16>,
    /// Raw values as read, for reporting.
    pub raw: Vec<Vec<String>>,
}

impl CovariateTable {
    pub fn new(
        ids: Vec<String>,
        groups: Vec<String>,
        covariates: Vec<String>,
        categories: Vec<Vec<String>>,
        codes: Vec<u16>,
        raw: Vec<Vec<String>>,
    ) -> Result<Self> {
        let n = ids.len();
        let v = covariates.len();
        if groups.len() != n || codes.len() != n * v || raw.len() != n {
            return Err(Error::DimensionMismatch("covariate table shape mismatch".into()));
        }
        for j in 0..n {
            for (k, cats) in categories.iter().enumerate() {
                if codes[j * v + k] as usize >= cats.len() {
                    return Err(Error::Data(format!(
                        "individual {} covariate '{}': code outside declared categories",
                        ids[j], covariates[k]
                    )));
                }
            }
        }
        Ok(Self { ids, groups, covariates, categories, codes, raw })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn code(&self, j: usize, cov: usize) -> u16 {
        self.codes[j * self.covariates.len() + cov]
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c == name)
    }

    /// Indices of the members of one group, ascending.
    pub fn group_members(&self, group: &str) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.groups[j] == group).collect()
    }

    /// Distinct group labels, sorted.
    pub fn group_levels(&self) -> Vec<String> {
        let mut levels = self.groups.clone();
        levels.sort();
        levels.dedup();
        levels
    }

    /// Re-discretize a numeric covariate at its quartiles (the raw values
    /// must parse as numbers).
    pub fn discretize_numeric(&mut self, name: &str) -> Result<()> {
        let k = self
            .covariate_index(name)
            .ok_or_else(|| Error::Data(format!("covariate '{name}' not present")))?;
        let values: Vec<f64> = (0..self.n())
            .map(|j| {
                self.raw[j][k].parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "individual {} covariate '{name}': '{}' is not numeric",
                        self.ids[j], self.raw[j][k]
                    ))
                })
            })
            .collect::<Result<_>>()?;
        let (labels, codes) = discretize_quartiles(&values)?;
        self.categories[k] = labels;
        let v = self.covariates.len();
        for (j, code) in codes.into_iter().enumerate() {
            self.codes[j * v + k] = code;
        }
        Ok(())
    }

    /// Per-covariate category counts over a subset of rows, restricted to
    /// the named covariates.
    pub fn category_counts(&self, rows: &[usize], covariates: &[usize]) -> Vec<Vec<u32>> {
        covariates
            .iter()
            .map(|&cov| {
                let mut counts = vec![0u32; self.categories[cov].len()];
                for &j in rows {
                    counts[self.code(j, cov) as usize] += 1;
                }
                counts
            })
            .collect()
    }
}

/// Cut numeric values at their quartiles, returning category labels
/// `q1..q4`. Values tied at a cut point fall in the lower quartile.
pub fn discretize_quartiles(values: &[f64]) -> Result<(Vec<String>, Vec<u16>)> {
    if values.is_empty() {
        return Err(Error::Data("no values to discretize".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    };
    let cuts = [q(0.25), q(0.5), q(0.75)];
    let labels = vec!["q1".to_string(), "q2".to_string(), "q3".to_string(), "q4".to_string()];
    let codes = values
        .iter()
        .map(|&v| {
            if v <= cuts[0] {
                0
            } else if v <= cuts[1] {
                1
            } else if v <= cuts[2] {
                2
            } else {
                3
            }
        })
        .collect();
    Ok((labels, codes))
}

/// Uniform random subset of `t` row indices (ascending), deterministic in
/// the seed.
pub fn draw_template(table: &CovariateTable, t: usize, seed: u64) -> Result<Vec<usize>> {
    if t > table.n() {
        return Err(Error::Infeasible(format!(
            "template size {t} exceeds cohort size {}",
            table.n()
        )));
    }
    let mut rng = derive_rng(seed, "template");
    let mut rows: Vec<usize> = index_sample(&mut rng, table.n(), t).into_iter().collect();
    rows.sort_unstable();
    Ok(rows)
}

/// How slack is constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintMode {
    /// Minimize total slack.
    Soft,
    /// Minimize total slack subject to every cell's slack at most the bound.
    Hard(u32),
}

/// A per-group matching instance.
#[derive(Debug, Clone)]
pub struct MatchProblem {
    /// Target counts per (covariate, category); each covariate's counts sum
    /// to the target size.
    pub template_counts: Vec<Vec<u32>>,
    /// Number of candidates to select.
    pub target: u32,
    /// Candidate category codes, row-major (n_candidates x n_covariates).
    candidate_codes: Vec<u16>,
    n_candidates: usize,
    pub mode: ConstraintMode,
    /// Search-node budget; exceeding it returns the incumbent flagged
    /// non-optimal.
    pub node_budget: u64,
}

impl MatchProblem {
    pub fn new(
        template_counts: Vec<Vec<u32>>,
        target: u32,
        candidate_codes: Vec<u16>,
        n_candidates: usize,
        mode: ConstraintMode,
    ) -> Result<Self> {
        let v = template_counts.len();
        if n_candidates * v != candidate_codes.len() {
            return Err(Error::DimensionMismatch("candidate code matrix shape mismatch".into()));
        }
        if (target as usize) > n_candidates {
            return Err(Error::Infeasible(format!(
                "target {target} exceeds group size {n_candidates}"
            )));
        }
        for (v_idx, counts) in template_counts.iter().enumerate() {
            let total: u32 = counts.iter().sum();
            if total != target {
                return Err(Error::InvalidParameter(format!(
                    "covariate {v_idx}: template counts sum to {total}, expected {target}"
                )));
            }
        }
        Ok(Self {
            template_counts,
            target,
            candidate_codes,
            n_candidates,
            mode,
            node_budget: 20_000_000,
        })
    }

    /// Build a per-group problem from a covariate table, a template row set
    /// and a per-group target size. Template counts are rescaled to the
    /// group target by largest remainders so each covariate's counts still
    /// sum to the target exactly.
    pub fn for_group(
        table: &CovariateTable,
        template_rows: &[usize],
        covariates: &[usize],
        group: &str,
        group_target: u32,
        mode: ConstraintMode,
    ) -> Result<(Self, Vec<usize>)> {
        let members = table.group_members(group);
        if members.is_empty() {
            return Err(Error::Data(format!("group '{group}' has no members")));
        }
        let template_counts = table.category_counts(template_rows, covariates);
        let t_template: u32 = template_counts[0].iter().sum();
        let scaled: Vec<Vec<u32>> = template_counts
            .iter()
            .map(|counts| scale_counts(counts, t_template, group_target))
            .collect();
        let mut codes = Vec::with_capacity(members.len() * covariates.len());
        for &j in &members {
            for &cov in covariates {
                codes.push(table.code(j, cov));
            }
        }
        let problem =
            Self::new(scaled, group_target, codes, members.len(), mode)?;
        Ok((problem, members))
    }

    fn code(&self, s: usize, v: usize) -> usize {
        self.candidate_codes[s * self.template_counts.len() + v] as usize
    }
}

/// Rescale integer counts from total `from` to total `to`, largest
/// remainders, deterministic ties by lowest category index.
pub fn scale_counts(counts: &[u32], from: u32, to: u32) -> Vec<u32> {
    if from == to {
        return counts.to_vec();
    }
    let ratio = to as f64 / from as f64;
    let mut scaled: Vec<u32> = counts.iter().map(|&c| (c as f64 * ratio).floor() as u32).collect();
    let mut short = to - scaled.iter().sum::<u32>();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = counts[a] as f64 * ratio - (counts[a] as f64 * ratio).floor();
        let rb = counts[b] as f64 * ratio - (counts[b] as f64 * ratio).floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &k in &order {
        if short == 0 {
            break;
        }
        scaled[k] += 1;
        short -= 1;
    }
    scaled
}

/// Solution of a matching instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Selection indicator per candidate; exactly `target` are true.
    pub selected: Vec<bool>,
    /// Achieved counts per (covariate, category).
    pub achieved: Vec<Vec<u32>>,
    /// Total slack over all cells.
    pub total_slack: u32,
    /// False when the node budget ran out before optimality was proven.
    pub optimal: bool,
}

struct SearchState<'a> {
    problem: &'a MatchProblem,
    /// Remaining candidates with category `p` of covariate `v` at suffix
    /// position s: `avail[v][p*(n+1) + s]`.
    suffix_avail: Vec<Vec<u32>>,
    counts: Vec<Vec<u32>>,
    current: Vec<bool>,
    best_cost: u32,
    incumbent: Option<Vec<bool>>,
    nodes: u64,
    exhausted: bool,
}

/// Exact minimum-total-slack selection of `target` candidates.
///
/// Among optima the returned selection prefers lower candidate indices
/// (first optimal leaf of the select-first depth-first search). A hard
/// per-cell bound prunes branches that cannot respect it; if no selection
/// can, the instance is infeasible.
pub fn cardinality_match(problem: &MatchProblem) -> Result<MatchResult> {
    let n = problem.n_candidates;
    let v = problem.template_counts.len();
    // Suffix availability per (covariate, category).
    let mut suffix_avail: Vec<Vec<u32>> = Vec::with_capacity(v);
    for vi in 0..v {
        let cats = problem.template_counts[vi].len();
        let mut avail = vec![0u32; cats * (n + 1)];
        for s in (0..n).rev() {
            let code = problem.code(s, vi);
            for p in 0..cats {
                let inc = u32::from(p == code);
                avail[p * (n + 1) + s] = avail[p * (n + 1) + s + 1] + inc;
            }
        }
        suffix_avail.push(avail);
    }
    let warm = greedy_warm_start(problem);
    let warm_cost = warm.as_ref().map(|w| selection_cost(problem, w));
    let mut state = SearchState {
        problem,
        suffix_avail,
        counts: problem.template_counts.iter().map(|c| vec![0u32; c.len()]).collect(),
        current: vec![false; n],
        best_cost: warm_cost.unwrap_or(u32::MAX),
        incumbent: None,
        nodes: 0,
        exhausted: false,
    };
    dfs(&mut state, 0, problem.target);
    let optimal = !state.exhausted;
    let selected = match (state.incumbent, warm) {
        (Some(sel), _) => sel,
        // Node budget ran out before any DFS leaf: fall back to the warm
        // start, which is always feasible.
        (None, Some(w)) => w,
        (None, None) => {
            return Err(Error::Infeasible(
                "no selection satisfies the per-cell slack bound".into(),
            ))
        }
    };
    let achieved = achieved_counts(problem, &selected);
    let total_slack = selection_cost(problem, &selected);
    if let ConstraintMode::Hard(bound) = problem.mode {
        let violates = achieved
            .iter()
            .zip(&problem.template_counts)
            .any(|(a, t)| a.iter().zip(t).any(|(x, y)| x.abs_diff(*y) > bound));
        if violates {
            return Err(Error::Infeasible(format!(
                "no selection keeps every cell within slack bound {bound}"
            )));
        }
    }
    Ok(MatchResult { selected, achieved, total_slack, optimal })
}

fn dfs(state: &mut SearchState<'_>, s: usize, remaining: u32) {
    state.nodes += 1;
    if state.nodes > state.problem.node_budget {
        state.exhausted = true;
        return;
    }
    if remaining == 0 {
        leaf(state);
        return;
    }
    let n = state.problem.n_candidates;
    let left = n - s;
    if (left as u32) < remaining {
        return;
    }
    if let Some(lb) = lower_bound(state, s, remaining) {
        // Equal-cost leaves matter for the lexicographic tie-break, so only
        // strictly worse bounds prune.
        if lb > state.best_cost || (lb == state.best_cost && state.incumbent.is_some()) {
            return;
        }
    } else {
        return;
    }
    if state.exhausted {
        return;
    }
    // Select-first: realizes the lowest-index preference among optima.
    apply(state, s, 1);
    state.current[s] = true;
    dfs(state, s + 1, remaining - 1);
    state.current[s] = false;
    apply(state, s, -1);
    if state.exhausted {
        return;
    }
    if (left as u32) > remaining {
        dfs(state, s + 1, remaining);
    }
}

fn apply(state: &mut SearchState<'_>, s: usize, delta: i32) {
    for vi in 0..state.problem.template_counts.len() {
        let code = state.problem.code(s, vi);
        let c = &mut state.counts[vi][code];
        *c = (*c as i64 + delta as i64) as u32;
    }
}

fn leaf(state: &mut SearchState<'_>) {
    if let ConstraintMode::Hard(bound) = state.problem.mode {
        let ok = state
            .counts
            .iter()
            .zip(&state.problem.template_counts)
            .all(|(a, t)| a.iter().zip(t).all(|(x, y)| x.abs_diff(*y) <= bound));
        if !ok {
            return;
        }
    }
    let cost: u32 = state
        .counts
        .iter()
        .zip(&state.problem.template_counts)
        .map(|(a, t)| a.iter().zip(t).map(|(x, y)| x.abs_diff(*y)).sum::<u32>())
        .sum();
    if cost < state.best_cost || (cost == state.best_cost && state.incumbent.is_none()) {
        state.best_cost = cost;
        state.incumbent = Some(state.current.clone());
    }
}

/// Sum over covariates of the minimum achievable slack given current
/// counts, suffix availability at position `s` and `t` selections left.
/// `None` when a hard bound is provably violated.
fn lower_bound(state: &SearchState<'_>, s: usize, t: u32) -> Option<u32> {
    let n = state.problem.n_candidates;
    let mut total = 0u32;
    for vi in 0..state.problem.template_counts.len() {
        let targets = &state.problem.template_counts[vi];
        let counts = &state.counts[vi];
        let avail = &state.suffix_avail[vi];
        let mut s0 = 0u32;
        let mut fill = 0u32;
        for p in 0..targets.len() {
            let have = counts[p];
            let want = targets[p];
            let a = avail[p * (n + 1) + s];
            s0 += have.abs_diff(want);
            fill += a.min(want.saturating_sub(have));
            if let ConstraintMode::Hard(bound) = state.problem.mode {
                // Achievable count range for this cell.
                let lo = have;
                let hi = have + a;
                let best_gap = if want < lo {
                    lo - want
                } else if want > hi {
                    want - hi
                } else {
                    0
                };
                if best_gap > bound {
                    return None;
                }
            }
        }
        let used = fill.min(t);
        total += s0 - used + t.saturating_sub(fill);
    }
    Some(total)
}

fn achieved_counts(problem: &MatchProblem, selected: &[bool]) -> Vec<Vec<u32>> {
    let mut counts: Vec<Vec<u32>> =
        problem.template_counts.iter().map(|c| vec![0u32; c.len()]).collect();
    for (s, &on) in selected.iter().enumerate() {
        if on {
            for vi in 0..problem.template_counts.len() {
                counts[vi][problem.code(s, vi)] += 1;
            }
        }
    }
    counts
}

fn selection_cost(problem: &MatchProblem, selected: &[bool]) -> u32 {
    achieved_counts(problem, selected)
        .iter()
        .zip(&problem.template_counts)
        .map(|(a, t)| a.iter().zip(t).map(|(x, y)| x.abs_diff(*y)).sum::<u32>())
        .sum()
}

/// Greedy construction plus first-improvement swap passes. Always feasible
/// in cardinality; used as the initial incumbent bound.
fn greedy_warm_start(problem: &MatchProblem) -> Option<Vec<bool>> {
    let n = problem.n_candidates;
    let t = problem.target as usize;
    if t > n {
        return None;
    }
    let v = problem.template_counts.len();
    let mut counts: Vec<Vec<u32>> =
        problem.template_counts.iter().map(|c| vec![0u32; c.len()]).collect();
    let mut selected = vec![false; n];
    let delta_cost = |counts: &[Vec<u32>], s: usize, sign: i64| -> i64 {
        let mut d = 0i64;
        for vi in 0..v {
            let p = problem.code(s, vi);
            let have = counts[vi][p] as i64;
            let want = problem.template_counts[vi][p] as i64;
            d += (have + sign - want).abs() - (have - want).abs();
        }
        d
    };
    for _ in 0..t {
        let mut best: Option<(i64, usize)> = None;
        for s in 0..n {
            if selected[s] {
                continue;
            }
            let d = delta_cost(&counts, s, 1);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, s));
            }
        }
        let (_, s) = best?;
        selected[s] = true;
        for vi in 0..v {
            counts[vi][problem.code(s, vi)] += 1;
        }
    }
    // Swap passes.
    for _ in 0..20 {
        let mut improved = false;
        for out in 0..n {
            if !selected[out] {
                continue;
            }
            let gain_out = delta_cost(&counts, out, -1);
            for inn in 0..n {
                if selected[inn] {
                    continue;
                }
                // Remove `out`, then add `inn`.
                for vi in 0..v {
                    counts[vi][problem.code(out, vi)] -= 1;
                }
                let gain_in = delta_cost(&counts, inn, 1);
                if gain_out + gain_in < 0 {
                    selected[out] = false;
                    selected[inn] = true;
                    for vi in 0..v {
                        counts[vi][problem.code(inn, vi)] += 1;
                    }
                    improved = true;
                    break;
                }
                for vi in 0..v {
                    counts[vi][problem.code(out, vi)] += 1;
                }
            }
            if improved {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    Some(selected)
}

/// One row of a balance table: column percentages of a category within a
/// group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub category: String,
    pub group: String,
    pub percent: f64,
    pub count: u32,
    pub group_n: u32,
}

/// Column-percentage balance table over the given rows (for instance the
/// matched subset), one block per group. With zero slack everywhere the
/// group columns are identical.
pub fn balance_table(
    table: &CovariateTable,
    rows: &[usize],
    covariates: &[usize],
) -> Vec<BalanceRow> {
    let mut out = Vec::new();
    for level in table.group_levels() {
        let members: Vec<usize> =
            rows.iter().copied().filter(|&j| table.groups[j] == level).collect();
        let n = members.len() as u32;
        if n == 0 {
            continue;
        }
        let counts = table.category_counts(&members, covariates);
        for (k, &cov) in covariates.iter().enumerate() {
            for (p, label) in table.categories[cov].iter().enumerate() {
                out.push(BalanceRow {
                    covariate: table.covariates[cov].clone(),
                    category: label.clone(),
                    group: level.clone(),
                    percent: 100.0 * counts[k][p] as f64 / n as f64,
                    count: counts[k][p],
                    group_n: n,
                });
            }
        }
    }
    out
}
