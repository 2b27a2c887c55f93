use serde::{Deserialize, Serialize};

use super::table::{class_stats, split_3_1, ClassStats, Table};
use crate::error::{Error, Result};
use crate::tensor::{adam_step, AdamConfig, Graph, Init, Linear, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub seed: u64,
    pub iterations: usize,
    pub lr: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions { seed: 0, iterations: 2000, lr: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub input: String,
    pub target: String,
    pub seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub accuracy: f64,
    /// One over the number of classes.
    pub chance: f64,
    pub classes: Vec<ClassStats>,
    pub iterations: usize,
}

/// Softmax regression trained full-batch with Adam from zero weights,
/// scored on a held-out quarter.
pub fn fit_linear_probe(table: &Table, input: &str, target: &str, opts: &ProbeOptions) -> Result<ProbeReport> {
    if table.present_classes() < 2 {
        return Err(Error::Degenerate(format!("target `{target}` has fewer than two classes")));
    }
    let (train, val) = split_3_1(&table.y, opts.seed);
    let (tr, va) = (table.subset(&train), table.subset(&val));
    let (f, c) = (table.features(), table.classes.len());
    let mut store = ParamStore::new();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(opts.seed);
    let layer = Linear::register(&mut store, "probe", f, c, Init::Zeros, &mut rng)?;
    let adam = AdamConfig { lr: opts.lr, ..AdamConfig::default() };
    let xs: Vec<f64> = tr.x.concat();
    for _ in 0..opts.iterations {
        let grads = {
            let mut g = Graph::new();
            let x = g.constant(&[tr.len(), f], xs.clone())?;
            let logits = layer.forward(&mut g, &store, x)?;
            let loss = g.cross_entropy(logits, &tr.y)?;
            g.backward(loss)?
        };
        store.accumulate(&grads);
        adam_step(&mut store, &adam);
    }
    let pred = predict(&store, &layer, &va)?;
    let (accuracy, classes) = class_stats(&table.classes, &va.y, &pred);
    Ok(ProbeReport {
        input: input.to_string(),
        target: target.to_string(),
        seed: opts.seed,
        train_size: tr.len(),
        val_size: va.len(),
        accuracy,
        chance: 1.0 / c as f64,
        classes,
        iterations: opts.iterations,
    })
}

fn predict(store: &ParamStore, layer: &Linear, t: &Table) -> Result<Vec<usize>> {
    if t.is_empty() {
        return Ok(Vec::new());
    }
    let f = t.features();
    let mut g = Graph::no_grad();
    let x = g.constant(&[t.len(), f], t.x.concat())?;
    let logits = layer.forward(&mut g, store, x)?;
    let c = g.shape(logits)[1];
    let v = g.value(logits);
    Ok((0..t.len())
        .map(|r| {
            let row = &v[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.iter().position(|&x| x == max).unwrap()
        })
        .collect())
}
