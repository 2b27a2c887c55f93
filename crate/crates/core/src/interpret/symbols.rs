use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discretised S-Comm message: `symbol` is the 1-based Δ index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolBin {
    pub symbol: u8,
    pub d: Vec<f64>,
}

/// Bins a probability vector over a vocabulary of 2 or 3 words.
///
/// K=2 keys on p1: below 0.2 is Δ1 (d=[0,1]), above 0.8 is Δ3 (d=[1,0]), the
/// closed middle is Δ2. K=3: p_i > 0.75 gives Δi with d = e_i; otherwise the
/// strictly smallest coordinate i selects Δ(3+i) with d = 0.5 on the other
/// two (lowest index wins a tie).
pub fn bin_symbols(p: &[f64], k: usize) -> Result<SymbolBin> {
    if k != 2 && k != 3 {
        return Err(Error::Parameter(format!("symbol binning needs K of 2 or 3, got {k}")));
    }
    if p.len() != k {
        return Err(Error::Data(format!("message has {} entries, vocabulary has {k}", p.len())));
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !v.is_finite() || *v < -1e-6) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Data(format!("message {p:?} is not a probability vector")));
    }
    let bin = |symbol: u8, d: &[f64]| Ok(SymbolBin { symbol, d: d.to_vec() });
    if k == 2 {
        return if p[0] < 0.2 {
            bin(1, &[0.0, 1.0])
        } else if p[0] > 0.8 {
            bin(3, &[1.0, 0.0])
        } else {
            bin(2, &[0.5, 0.5])
        };
    }
    if let Some(i) = p.iter().position(|&v| v > 0.75) {
        let mut d = vec![0.0; 3];
        d[i] = 1.0;
        return bin(i as u8 + 1, &d);
    }
    let mut low = 0;
    for i in 1..3 {
        if p[i] < p[low] {
            low = i;
        }
    }
    let mut d = vec![0.5; 3];
    d[low] = 0.0;
    bin(low as u8 + 4, &d)
}
