use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::error::{Error, Result};

/// Exact column order of trace files.
pub const TRACE_HEADER: [&str; 18] = [
    "episode_id", "step", "variant", "goal_cat", "rel_x", "rel_y", "in_fov", "visible", "m1_NO", "m1_ON", "m2_NO",
    "m2_ON", "sym1_NO", "sym1_ON", "sym2_NO", "sym2_ON", "action", "reward",
];

/// One environment step as seen by the interpretation tools.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode_id: usize,
    pub step: usize,
    pub variant: String,
    pub goal_cat: u8,
    /// Current goal in the navigator's frame.
    pub rel_x: f64,
    pub rel_y: f64,
    pub in_fov: bool,
    pub visible: bool,
    pub m1_no: Vec<f64>,
    pub m1_on: Vec<f64>,
    pub m2_no: Vec<f64>,
    pub m2_on: Vec<f64>,
    pub sym1_no: Option<u8>,
    pub sym1_on: Option<u8>,
    pub sym2_no: Option<u8>,
    pub sym2_on: Option<u8>,
    pub action: Action,
    pub reward: f64,
}

impl TraceRow {
    /// Payload by column name (`m1_NO` …).
    pub fn message(&self, column: &str) -> Option<&[f64]> {
        match column {
            "m1_NO" => Some(&self.m1_no),
            "m1_ON" => Some(&self.m1_on),
            "m2_NO" => Some(&self.m2_no),
            "m2_ON" => Some(&self.m2_on),
            _ => None,
        }
    }

    /// Binned symbol by column name (`sym1_NO` …).
    pub fn symbol(&self, column: &str) -> Option<Option<u8>> {
        match column {
            "sym1_NO" => Some(self.sym1_no),
            "sym1_ON" => Some(self.sym1_on),
            "sym2_NO" => Some(self.sym2_no),
            "sym2_ON" => Some(self.sym2_on),
            _ => None,
        }
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn sym(s: Option<u8>) -> String {
    s.map(|d| format!("D{d}")).unwrap_or_default()
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_traces<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.episode_id.to_string(),
            r.step.to_string(),
            r.variant.clone(),
            r.goal_cat.to_string(),
            r.rel_x.to_string(),
            r.rel_y.to_string(),
            flag(r.in_fov).into(),
            flag(r.visible).into(),
            join(&r.m1_no),
            join(&r.m1_on),
            join(&r.m2_no),
            join(&r.m2_on),
            sym(r.sym1_no),
            sym(r.sym1_on),
            sym(r.sym2_no),
            sym(r.sym2_on),
            r.action.name().into(),
            r.reward.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing traces: {e}")))?;
    Ok(())
}

pub fn save_traces(rows: &[TraceRow], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_traces(rows, std::io::BufWriter::new(f))
}

pub fn read_traces<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    let mut col = std::collections::HashMap::new();
    for name in TRACE_HEADER {
        let i = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("trace file has no `{name}` column")))?;
        col.insert(name, i);
    }
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let get = |name: &str| rec.get(col[name]).unwrap_or("");
        let bad = |name: &str| Error::Data(format!("trace row {}: bad `{name}` value `{}`", line + 1, get(name)));
        let num = |name: &str| get(name).parse::<f64>().map_err(|_| bad(name));
        let int = |name: &str| get(name).parse::<usize>().map_err(|_| bad(name));
        let payload = |name: &str| -> Result<Vec<f64>> {
            let s = get(name);
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(';').map(|v| v.parse::<f64>().map_err(|_| bad(name))).collect()
        };
        let symbol = |name: &str| -> Result<Option<u8>> {
            match get(name) {
                "" => Ok(None),
                s => match s.strip_prefix('D').and_then(|d| d.parse::<u8>().ok()) {
                    Some(d @ 1..=6) => Ok(Some(d)),
                    _ => Err(bad(name)),
                },
            }
        };
        let boolean = |name: &str| match get(name) {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(bad(name)),
        };
        let action = Action::ALL.into_iter().find(|a| a.name() == get("action")).ok_or_else(|| bad("action"))?;
        rows.push(TraceRow {
            episode_id: int("episode_id")?,
            step: int("step")?,
            variant: get("variant").to_string(),
            goal_cat: int("goal_cat")?.try_into().map_err(|_| bad("goal_cat"))?,
            rel_x: num("rel_x")?,
            rel_y: num("rel_y")?,
            in_fov: boolean("in_fov")?,
            visible: boolean("visible")?,
            m1_no: payload("m1_NO")?,
            m1_on: payload("m1_ON")?,
            m2_no: payload("m2_NO")?,
            m2_on: payload("m2_ON")?,
            sym1_no: symbol("sym1_NO")?,
            sym1_on: symbol("sym1_ON")?,
            sym2_no: symbol("sym2_NO")?,
            sym2_on: symbol("sym2_ON")?,
            action,
            reward: num("reward")?,
        });
    }
    Ok(rows)
}

pub fn load_traces(path: &Path) -> Result<Vec<TraceRow>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_traces(std::io::BufReader::new(f))
}
