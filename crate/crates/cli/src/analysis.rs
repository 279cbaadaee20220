//! Mixing and cost report behind the `analyze` subcommand.

use serde_json::{json, Value};

use dimix_core::mixing::{build_mixing_graph, check_complete_mixing, cost_report};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::model::Model;

/// Builds the model, checks its mixing structure, and walks its costs with a
/// single-sample forward pass so MAC figures are per sample.
pub fn analyze(cfg: &ExperimentConfig) -> Result<Value> {
    let model = Model::build(cfg)?;
    let schedule = model.mixing_schedule(cfg)?;
    let graph = build_mixing_graph(schedule);
    let mixing = check_complete_mixing(&graph);

    let inputs = model.dummy_input(1);
    let costs = cost_report(&model, || model.forward(&inputs))?;

    let reach_min = mixing.per_input_reach_counts.iter().copied().min();
    let reach_max = mixing.per_input_reach_counts.iter().copied().max();
    Ok(json!({
        "family": cfg.family.to_string(),
        "mixing_width": mixing.per_input_reach_counts.len(),
        "complete": mixing.complete,
        "missing_pairs": mixing.missing_pairs,
        "per_input_reach_min": reach_min,
        "per_input_reach_max": reach_max,
        "params": costs.params,
        "macs_per_sample": costs.macs,
        "score_macs_per_sample": costs.score_macs,
        "permutations_per_forward": costs.permutations,
        "modules": costs
            .modules
            .iter()
            .map(|m| json!({"name": m.name, "params": m.params}))
            .collect::<Vec<_>>(),
    }))
}
