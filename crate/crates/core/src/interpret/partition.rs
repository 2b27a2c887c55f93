use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::forest::{fit_random_forest, ForestOptions, ForestReport};
use super::table::build_table;
use super::TraceRow;
use crate::error::Result;

/// Result of splitting two-goal episodes by whether the navigator's first
/// symbol can tell their goals apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    /// Category groups, one per symbol that is the majority for some category.
    pub partition: Vec<PartitionGroup>,
    /// Fewer than two groups: nothing distinguishes categories.
    pub degenerate: bool,
    pub distinguishable_episodes: usize,
    pub indistinguishable_episodes: usize,
    /// Location → `sym2_ON` forests per group, absent when a group is too small.
    pub distinguishable: Option<ForestReport>,
    pub indistinguishable: Option<ForestReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionGroup {
    pub symbol: String,
    pub categories: Vec<u8>,
}

/// Category → majority `sym1_NO` symbol (ties to the lower symbol).
pub fn infer_partition(rows: &[TraceRow]) -> BTreeMap<u8, u8> {
    let mut votes: BTreeMap<u8, BTreeMap<u8, usize>> = BTreeMap::new();
    for r in rows {
        if let Some(s) = r.sym1_no {
            *votes.entry(r.goal_cat).or_default().entry(s).or_default() += 1;
        }
    }
    votes
        .into_iter()
        .map(|(cat, v)| {
            let best = v.values().copied().max().unwrap_or(0);
            (cat, v.into_iter().find(|&(_, c)| c == best).map(|(s, _)| s).unwrap())
        })
        .collect()
}

pub fn partition_analysis(rows: &[TraceRow], opts: &ForestOptions) -> Result<PartitionReport> {
    let part = infer_partition(rows);
    let mut groups: BTreeMap<u8, Vec<u8>> = BTreeMap::new();
    for (&cat, &sym) in &part {
        groups.entry(sym).or_default().push(cat);
    }
    let degenerate = groups.len() < 2;
    if degenerate {
        log::warn!("partition analysis is degenerate: every category maps to one symbol");
    }
    // goals of an episode in the order they were pursued
    let mut episodes: BTreeMap<usize, Vec<u8>> = BTreeMap::new();
    for r in rows {
        let goals = episodes.entry(r.episode_id).or_default();
        if goals.last() != Some(&r.goal_cat) {
            goals.push(r.goal_cat);
        }
    }
    let mut split: BTreeMap<usize, bool> = BTreeMap::new();
    for (ep, goals) in &episodes {
        // only episodes that reached their second goal reveal both categories
        if let [a, b, ..] = goals[..] {
            split.insert(*ep, part.get(&a) != part.get(&b));
        }
    }
    let pick = |want: bool| -> Vec<TraceRow> {
        rows.iter().filter(|r| split.get(&r.episode_id) == Some(&want)).cloned().collect()
    };
    let fit = |subset: &[TraceRow]| -> Option<ForestReport> {
        let table = build_table(subset, "rel", "sym2_ON").ok()?;
        fit_random_forest(&table, "rel", "sym2_ON", opts).ok()
    };
    let (d, i) = (pick(true), pick(false));
    Ok(PartitionReport {
        partition: groups
            .into_iter()
            .map(|(s, categories)| PartitionGroup { symbol: format!("D{s}"), categories })
            .collect(),
        degenerate,
        distinguishable_episodes: split.values().filter(|&&v| v).count(),
        indistinguishable_episodes: split.values().filter(|&&v| !v).count(),
        distinguishable: fit(&d),
        indistinguishable: fit(&i),
    })
}
