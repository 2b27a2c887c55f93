//! Interpretation tools for learned messages: step traces, symbol binning,
//! egocentric goal geometry, probes, forests, contingency tables and
//! evaluation-time interventions.

mod contingency;
mod forest;
mod frame;
mod intervene;
mod partition;
mod probe;
mod scripted;
mod svg;
mod symbols;
mod table;
mod trace;

pub use contingency::{action_symbol_table, mutual_information, signaling_mi, ContingencyTable};
pub use forest::{balance_classes, fit_random_forest, ForestOptions, ForestReport, RandomForest};
pub use frame::{angle_bins, relative_goal_frame, AngleScheme};
pub use intervene::{decoy_objects, intervene, Intervention, InterventionReport, PairedEpisode};
pub use partition::{infer_partition, partition_analysis, PartitionGroup, PartitionReport};
pub use probe::{fit_linear_probe, ProbeOptions, ProbeReport};
pub use scripted::ScriptedPolicy;
pub use svg::symbol_scatter;
pub use symbols::{bin_symbols, SymbolBin};
pub use table::{build_table, split_3_1, ClassStats, Table};
pub use trace::{load_traces, read_traces, save_traces, write_traces, TraceRow, TRACE_HEADER};

use crate::agent::MessageStats;
use crate::env::{EnvConfig, LoadedDataset};
use crate::error::Result;
use crate::train::{run_episodes, Controller, EvalOptions};

/// ARGMAX rollouts of `indices`, one trace row per step.
pub fn log_traces(
    ctrl: Controller,
    env: &EnvConfig,
    data: &LoadedDataset,
    indices: &[usize],
    opts: &EvalOptions,
) -> Result<Vec<TraceRow>> {
    if let Controller::Model { model, .. } = ctrl {
        if model.variant().message_kind().is_none() {
            log::warn!("{} sends no messages; message columns will be empty", model.variant().name());
        }
    }
    let opts = EvalOptions { trace: true, ..opts.clone() };
    Ok(run_episodes(ctrl, env, data, indices, &opts)?.trace)
}

/// Per-slot Gaussian statistics of the logged messages, used to draw random
/// U-Comm payloads that match the real ones in scale.
pub fn message_stats(rows: &[TraceRow]) -> Result<MessageStats> {
    // slot order: m1 O→N, m1 N→O, m2 O→N, m2 N→O
    let slots: Vec<Vec<Vec<f64>>> = ["m1_ON", "m1_NO", "m2_ON", "m2_NO"]
        .iter()
        .map(|c| rows.iter().filter_map(|r| r.message(c)).filter(|m| !m.is_empty()).map(<[f64]>::to_vec).collect())
        .collect();
    MessageStats::from_messages(&slots)
}
