use std::collections::BTreeMap;
use std::fmt::Write;

use super::TraceRow;
use crate::error::{Error, Result};

const SIZE: f64 = 400.0;
const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// One scatter plot of egocentric goal positions per symbol of `column`,
/// with the field-of-view edges drawn in red. Returns `(symbol, svg text)`.
pub fn symbol_scatter(rows: &[TraceRow], column: &str, fov_deg: f64) -> Result<Vec<(String, String)>> {
    let mut groups: BTreeMap<u8, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let s = r.symbol(column).ok_or_else(|| Error::Data(format!("`{column}` is not a symbol column")))?;
        if let Some(s) = s {
            groups.entry(s).or_default().push((r.rel_x, r.rel_y));
        }
    }
    if groups.is_empty() {
        return Err(Error::Data(format!("no binned `{column}` symbols in the trace")));
    }
    let extent = rows.iter().map(|r| r.rel_x.abs().max(r.rel_y.abs())).fold(1.0, f64::max) * 1.05;
    let to_px = |x: f64, y: f64| (SIZE / 2.0 + x / extent * SIZE / 2.0, SIZE / 2.0 - y / extent * SIZE / 2.0);
    let mut out = Vec::new();
    for (sym, points) in groups {
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#);
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let half = (fov_deg / 2.0).to_radians();
        for side in [-1.0, 1.0] {
            let (x, y) = to_px(side * half.sin() * extent * 1.5, half.cos() * extent * 1.5);
            let (ox, oy) = to_px(0.0, 0.0);
            let _ = writeln!(s, r#"<line x1="{ox:.2}" y1="{oy:.2}" x2="{x:.2}" y2="{y:.2}" stroke="red" stroke-width="1.5"/>"#);
        }
        let color = COLORS[(sym as usize - 1) % COLORS.len()];
        for (x, y) in points {
            let (px, py) = to_px(x, y);
            let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="1.5" fill="{color}" fill-opacity="0.5"/>"#);
        }
        let _ = writeln!(s, r#"<text x="8" y="18" font-family="sans-serif" font-size="14">{column} = D{sym}</text>"#);
        s.push_str("</svg>\n");
        out.push((format!("D{sym}"), s));
    }
    Ok(out)
}
