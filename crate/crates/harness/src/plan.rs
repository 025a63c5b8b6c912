//! One-shot planning from a serialized posterior.

use bldp_core::allocation::PlanRecord;
use bldp_core::model::{ContextSet, ModelSpec};
use bldp_core::objectives::ObjectiveSpec;
use bldp_core::planner::{solve_plan, OptimizerConfig};
use bldp_core::posterior::{HorizonSpec, PosteriorState};
use serde::{Deserialize, Serialize};

use crate::config::toml_error;
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub model: ModelSpec<f64>,
    pub contexts: ContextSet<f64>,
    pub horizon: HorizonSpec,
    #[serde(default = "ObjectiveSpec::simple_regret")]
    pub objective: ObjectiveSpec<f64>,
    #[serde(default)]
    pub optimizer: OptimizerConfig<f64>,
}

impl PlanConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(text, &e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanOutput {
    pub epoch: usize,
    pub objective: f64,
    /// Allocation for every remaining epoch; the first is deployed next.
    pub plan: Vec<PlanRecord<f64>>,
}

pub fn parse_posterior(json: &str) -> Result<PosteriorState<f64>> {
    let state: PosteriorState<f64> = serde_json::from_str(json)?;
    state.validate()?;
    Ok(state)
}

pub fn run_plan(state: &PosteriorState<f64>, cfg: &PlanConfig) -> Result<PlanOutput> {
    cfg.horizon.validate()?;
    cfg.contexts.validate_horizon(cfg.horizon.epochs())?;
    if state.epoch >= cfg.horizon.epochs() {
        return Err(HarnessError::config("horizon", "posterior epoch is past the horizon"));
    }
    let design = cfg.model.design(&cfg.contexts)?;
    let out = solve_plan(state, &cfg.horizon, &design, &cfg.contexts, &cfg.objective, &cfg.optimizer)?;
    Ok(PlanOutput {
        epoch: state.epoch,
        objective: out.objective,
        plan: out.plan.to_records(cfg.contexts.len()),
    })
}
