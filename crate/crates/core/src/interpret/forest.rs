use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::table::{class_stats, split_3_1, ClassStats, Table};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestOptions {
    pub trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestOptions {
    fn default() -> Self {
        ForestOptions { trees: 100, max_depth: 8, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestReport {
    pub input: String,
    pub target: String,
    pub seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub accuracy: f64,
    pub chance: f64,
    pub classes: Vec<ClassStats>,
    pub trees: usize,
    pub max_depth: usize,
    /// Rows per class after balancing.
    pub class_counts: Vec<usize>,
}

#[derive(Clone, Debug)]
enum Node {
    Leaf(usize),
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    fn predict(&self, x: &[f64]) -> usize {
        match self {
            Node::Leaf(c) => *c,
            Node::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

/// Bagged Gini trees with √F candidate features per split.
#[derive(Clone, Debug)]
pub struct RandomForest {
    trees: Vec<Node>,
    classes: usize,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|&c| (c as f64 / n as f64).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    // first class with the highest count
    let best = *counts.iter().max().unwrap_or(&0);
    counts.iter().position(|&c| c == best).unwrap_or(0)
}

struct Builder<'a, R: Rng> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    classes: usize,
    max_depth: usize,
    mtry: usize,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn grow(&mut self, idx: &mut [usize], depth: usize) -> Node {
        let mut counts = vec![0; self.classes];
        idx.iter().for_each(|&i| counts[self.y[i]] += 1);
        let n = idx.len();
        if depth >= self.max_depth || n < 2 || counts.iter().filter(|&&c| c > 0).count() < 2 {
            return Node::Leaf(majority(&counts));
        }
        let parent = gini(&counts, n);
        let features = self.x[0].len();
        let candidates = index::sample(self.rng, features, self.mtry.min(features));
        let mut best: Option<(f64, usize, f64)> = None;
        for f in candidates.iter() {
            idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = vec![0; self.classes];
            for k in 0..n - 1 {
                left[self.y[idx[k]]] += 1;
                let (v, next) = (self.x[idx[k]][f], self.x[idx[k + 1]][f]);
                if v == next {
                    continue;
                }
                let right: Vec<usize> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
                let (nl, nr) = (k + 1, n - k - 1);
                let score = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
                if best.is_none_or(|(s, _, _)| score < s) {
                    best = Some((score, f, 0.5 * (v + next)));
                }
            }
        }
        match best {
            Some((score, feature, threshold)) if score < parent - 1e-12 => {
                let mut l: Vec<usize> = idx.iter().copied().filter(|&i| self.x[i][feature] <= threshold).collect();
                let mut r: Vec<usize> = idx.iter().copied().filter(|&i| self.x[i][feature] > threshold).collect();
                let left = Box::new(self.grow(&mut l, depth + 1));
                let right = Box::new(self.grow(&mut r, depth + 1));
                Node::Split { feature, threshold, left, right }
            }
            _ => Node::Leaf(majority(&counts)),
        }
    }
}

impl RandomForest {
    pub fn fit(t: &Table, trees: usize, max_depth: usize, seed: u64) -> Result<Self> {
        if t.is_empty() || t.features() == 0 {
            return Err(Error::Data("forest needs at least one row and one feature".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mtry = ((t.features() as f64).sqrt().floor() as usize).max(1);
        let mut out = Vec::with_capacity(trees);
        for _ in 0..trees {
            let mut bag: Vec<usize> = (0..t.len()).map(|_| rng.random_range(0..t.len())).collect();
            let mut b = Builder { x: &t.x, y: &t.y, classes: t.classes.len(), max_depth, mtry, rng: &mut rng };
            out.push(b.grow(&mut bag, 0));
        }
        Ok(RandomForest { trees: out, classes: t.classes.len() })
    }

    /// Majority vote; ties go to the lowest class.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut votes = vec![0; self.classes];
        self.trees.iter().for_each(|t| votes[t.predict(x)] += 1);
        majority(&votes)
    }
}

/// Downsamples every class to the minority count (seeded).
pub fn balance_classes(t: &Table, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = t.class_counts();
    let min = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0);
    let mut keep = Vec::new();
    for c in 0..t.classes.len() {
        let mut idx: Vec<usize> = (0..t.len()).filter(|&i| t.y[i] == c).collect();
        idx.shuffle(&mut rng);
        keep.extend_from_slice(&idx[..min.min(idx.len())]);
    }
    keep.sort_unstable();
    let mut b = t.subset(&keep);
    // drop classes that never occur so chance reflects the balanced set
    let present: Vec<usize> = (0..t.classes.len()).filter(|&c| counts[c] > 0).collect();
    b.y.iter_mut().for_each(|y| *y = present.binary_search(y).unwrap());
    b.classes = present.iter().map(|&c| t.classes[c].clone()).collect();
    b
}

/// Balance, split 3:1, fit, score.
pub fn fit_random_forest(table: &Table, input: &str, target: &str, opts: &ForestOptions) -> Result<ForestReport> {
    if table.present_classes() < 2 {
        return Err(Error::Degenerate(format!("target `{target}` has fewer than two classes")));
    }
    let balanced = balance_classes(table, opts.seed);
    let (train, val) = split_3_1(&balanced.y, opts.seed);
    let (tr, va) = (balanced.subset(&train), balanced.subset(&val));
    let forest = RandomForest::fit(&tr, opts.trees, opts.max_depth, opts.seed)?;
    let pred: Vec<usize> = va.x.iter().map(|x| forest.predict(x)).collect();
    let (accuracy, classes) = class_stats(&balanced.classes, &va.y, &pred);
    Ok(ForestReport {
        input: input.to_string(),
        target: target.to_string(),
        seed: opts.seed,
        train_size: tr.len(),
        val_size: va.len(),
        accuracy,
        chance: 1.0 / balanced.classes.len() as f64,
        classes,
        trees: opts.trees,
        max_depth: opts.max_depth,
        class_counts: balanced.class_counts(),
    })
}
