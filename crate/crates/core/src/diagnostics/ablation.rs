use std::path::Path;

use super::sweep::median;
use crate::agent::{train, AgentConfig, Collection, PlanningMethod, TrainSummary};
use crate::error::Result;
use crate::models::Family;

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub name: String,
    pub config: AgentConfig,
    pub summary: TrainSummary,
    pub median_test_return: f64,
}

pub fn ablation_name(family: Family, collection: Collection, planning: PlanningMethod) -> String {
    format!("{family}-{collection}-{planning}")
}

/// Trains `base` with the model family, collection mode and planner swapped
/// in; outputs go to `out_dir/diagnostics/ablation/<name>/` with the usual
/// training layout.
pub fn ablation_run(
    base: &AgentConfig,
    family: Family,
    collection: Collection,
    planning: PlanningMethod,
    out_dir: &Path,
) -> Result<AblationResult> {
    let mut config = base.clone();
    config.model.family = family;
    config.collection = collection;
    config.planning = planning;
    let name = ablation_name(family, collection, planning);
    let dir = super::diagnostics_dir(out_dir)?.join("ablation").join(&name);
    let summary = train(&config, &dir)?;
    Ok(AblationResult {
        median_test_return: median(&summary.test_returns),
        name,
        config: config.resolve()?,
        summary,
    })
}
