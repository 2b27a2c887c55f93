use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::TraceRow;
use crate::env::Action;
use crate::error::{Error, Result};

/// Action percentages per received symbol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub column: String,
    /// Row labels `D1`…
    pub symbols: Vec<String>,
    pub actions: Vec<String>,
    pub counts: Vec<[usize; 4]>,
    /// Percent of each action given the symbol; `None` marks an EMPTY row.
    pub percent: Vec<Option<[f64; 4]>>,
    /// Pearson χ² independence statistic over non-empty rows and columns.
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Tabulates actions against the binned symbol in `column` (normally `sym2_ON`).
pub fn action_symbol_table(rows: &[TraceRow], column: &str) -> Result<ContingencyTable> {
    let mut counts: BTreeMap<u8, [usize; 4]> = BTreeMap::new();
    let mut any = false;
    for r in rows {
        let s = r.symbol(column).ok_or_else(|| Error::Data(format!("`{column}` is not a symbol column")))?;
        if let Some(s) = s {
            counts.entry(s).or_insert([0; 4])[r.action.index()] += 1;
            any = true;
        }
    }
    if !any {
        return Err(Error::Data(format!("no binned `{column}` symbols in the trace")));
    }
    let top = if counts.keys().any(|&s| s > 3) { 6 } else { 3 };
    let symbols: Vec<String> = (1..=top).map(|d| format!("D{d}")).collect();
    let table: Vec<[usize; 4]> = (1..=top as u8).map(|d| counts.get(&d).copied().unwrap_or([0; 4])).collect();
    let percent = table
        .iter()
        .map(|row| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row.map(|c| 100.0 * c as f64 / n as f64))
        })
        .collect();
    let (chi_square, dof) = chi_square(&table);
    let p_value = if dof > 0 { ChiSquared::new(dof as f64).map(|d| d.sf(chi_square)).unwrap_or(f64::NAN) } else { 1.0 };
    Ok(ContingencyTable {
        column: column.to_string(),
        symbols,
        actions: Action::ALL.iter().map(|a| a.name().to_string()).collect(),
        counts: table,
        percent,
        chi_square,
        dof,
        p_value,
    })
}

fn chi_square(table: &[[usize; 4]]) -> (f64, usize) {
    let rows: Vec<&[usize; 4]> = table.iter().filter(|r| r.iter().sum::<usize>() > 0).collect();
    let cols: Vec<usize> = (0..4).filter(|&j| rows.iter().any(|r| r[j] > 0)).collect();
    let n: usize = rows.iter().map(|r| r.iter().sum::<usize>()).sum();
    if rows.len() < 2 || cols.len() < 2 {
        return (0.0, 0);
    }
    let col_tot: Vec<f64> = cols.iter().map(|&j| rows.iter().map(|r| r[j]).sum::<usize>() as f64).collect();
    let mut chi = 0.0;
    for r in &rows {
        let row_tot = r.iter().sum::<usize>() as f64;
        for (k, &j) in cols.iter().enumerate() {
            let e = row_tot * col_tot[k] / n as f64;
            chi += (r[j] as f64 - e).powi(2) / e;
        }
    }
    (chi, (rows.len() - 1) * (cols.len() - 1))
}

/// Plug-in mutual information between two discrete sequences, in nats.
pub fn mutual_information(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Data("mutual information needs two equally long, non-empty sequences".into()));
    }
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *pa.entry(x).or_default() += 1.0;
        *pb.entry(y).or_default() += 1.0;
    }
    Ok(joint.iter().map(|(&(x, y), &c)| (c / n) * (c * n / (pa[&x] * pb[&y])).ln()).sum::<f64>().max(0.0))
}

/// Positive-signalling summary: MI between the symbols of `column` and the goal category.
pub fn signaling_mi(rows: &[TraceRow], column: &str) -> Result<f64> {
    let mut sym = Vec::new();
    let mut cat = Vec::new();
    for r in rows {
        let s = r.symbol(column).ok_or_else(|| Error::Data(format!("`{column}` is not a symbol column")))?;
        if let Some(s) = s {
            sym.push(s as usize);
            cat.push(r.goal_cat as usize);
        }
    }
    mutual_information(&sym, &cat)
}
