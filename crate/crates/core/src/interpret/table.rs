use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{angle_bins, AngleScheme, TraceRow};
use crate::error::{Error, Result};

/// Feature matrix and class labels drawn from traces.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    /// Class names, indexed by label.
    pub classes: Vec<String>,
}

impl Table {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<usize>, classes: Vec<String>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::dim("table", format!("{} feature rows for {} labels", x.len(), y.len())));
        }
        if let Some(w) = x.first().map(Vec::len) {
            if x.iter().any(|r| r.len() != w) {
                return Err(Error::Data("feature rows differ in width".into()));
            }
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= classes.len()) {
            return Err(Error::Data(format!("label {bad} has no class name")));
        }
        Ok(Table { x, y, classes })
    }

    /// Labels given as plain integers; classes are the sorted distinct values.
    pub fn from_labels(x: Vec<Vec<f64>>, labels: &[usize]) -> Result<Self> {
        let distinct: Vec<usize> = labels.iter().copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let y = labels.iter().map(|l| distinct.binary_search(l).unwrap()).collect();
        Table::new(x, y, distinct.iter().map(|c| c.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn features(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Classes that actually occur.
    pub fn present_classes(&self) -> usize {
        self.y.iter().collect::<std::collections::BTreeSet<_>>().len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes.len()];
        self.y.iter().for_each(|&l| c[l] += 1);
        c
    }

    pub fn subset(&self, idx: &[usize]) -> Table {
        Table {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes.clone(),
        }
    }
}

/// Seeded 3:1 train/validation split, stratified by class.
pub fn split_3_1(y: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in y.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_class {
        idx.shuffle(&mut rng);
        let cut = (idx.len() * 3).div_ceil(4);
        train.extend_from_slice(&idx[..cut]);
        val.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Per-class validation figures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: String,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
}

pub(crate) fn class_stats(classes: &[String], truth: &[usize], pred: &[usize]) -> (f64, Vec<ClassStats>) {
    let n = truth.len();
    let correct = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    let stats = (0..classes.len())
        .map(|c| {
            let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p == c).count();
            let predicted = pred.iter().filter(|&&p| p == c).count();
            let support = truth.iter().filter(|&&t| t == c).count();
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            ClassStats { class: classes[c].clone(), support, precision: ratio(tp, predicted), recall: ratio(tp, support) }
        })
        .collect();
    (if n == 0 { 0.0 } else { correct as f64 / n as f64 }, stats)
}

fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Features for one input name. `None` drops the row.
fn input_features(row: &TraceRow, name: &str, categories: usize) -> Result<Option<Vec<f64>>> {
    if let Some(m) = row.message(name) {
        return Ok(if m.is_empty() { None } else { Some(m.to_vec()) });
    }
    if let Some(s) = row.symbol(name) {
        return Ok(s.map(|d| one_hot(d as usize - 1, 6)));
    }
    Ok(match name {
        "goal_cat" => Some(one_hot(row.goal_cat as usize, categories)),
        "rel" => Some(vec![row.rel_x, row.rel_y]),
        "rel_x" => Some(vec![row.rel_x]),
        "rel_y" => Some(vec![row.rel_y]),
        "angle4" | "angle8" => {
            let (scheme, n) = if name == "angle4" { (AngleScheme::Abs4, 4) } else { (AngleScheme::Full8, 8) };
            angle_bins(row.rel_x, row.rel_y, scheme).ok().map(|b| one_hot(b, n))
        }
        "visible" => Some(vec![row.visible as u8 as f64]),
        "in_fov" => Some(vec![row.in_fov as u8 as f64]),
        "action" => Some(one_hot(row.action.index(), 4)),
        other => return Err(Error::Data(format!("unknown input column `{other}`"))),
    })
}

/// Class label (as text) for one target name. `None` drops the row.
fn target_label(row: &TraceRow, name: &str) -> Result<Option<String>> {
    if let Some(s) = row.symbol(name) {
        return Ok(s.map(|d| format!("D{d}")));
    }
    Ok(match name {
        "goal_cat" => Some(row.goal_cat.to_string()),
        "angle4" => angle_bins(row.rel_x, row.rel_y, AngleScheme::Abs4).ok().map(|b| b.to_string()),
        "angle8" => angle_bins(row.rel_x, row.rel_y, AngleScheme::Full8).ok().map(|b| b.to_string()),
        "visible" => Some((row.visible as u8).to_string()),
        "in_fov" => Some((row.in_fov as u8).to_string()),
        "action" => Some(row.action.name().to_string()),
        other => return Err(Error::Data(format!("unknown target column `{other}`"))),
    })
}

/// Builds a table from traces. `input` may list several comma-separated
/// columns, which are concatenated.
pub fn build_table(rows: &[TraceRow], input: &str, target: &str) -> Result<Table> {
    let categories = rows.iter().map(|r| r.goal_cat as usize + 1).max().unwrap_or(1);
    let names: Vec<&str> = input.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err(Error::Data("no input columns given".into()));
    }
    let mut x = Vec::new();
    let mut labels = Vec::new();
    'rows: for row in rows {
        let Some(label) = target_label(row, target)? else { continue };
        let mut feats = Vec::new();
        for n in &names {
            match input_features(row, n, categories)? {
                Some(f) => feats.extend(f),
                None => continue 'rows,
            }
        }
        x.push(feats);
        labels.push(label);
    }
    let mut classes: Vec<String> = labels.iter().cloned().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    // numeric labels sort numerically
    if classes.iter().all(|c| c.parse::<i64>().is_ok()) {
        classes.sort_by_key(|c| c.parse::<i64>().unwrap());
    }
    let y = labels.iter().map(|l| classes.iter().position(|c| c == l).unwrap()).collect();
    Table::new(x, y, classes)
}
