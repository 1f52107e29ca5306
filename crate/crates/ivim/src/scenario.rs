//! Scripted scenario runner: a sequence of integration requests, failure
//! injections, and clock ticks against one in-process manager.
//!
//! Scenario document:
//! ```json
//! {
//!   "topology": "poc_topology.json",
//!   "steps": [
//!     { "action": "optimize", "model": "poc_step1.json" },
//!     { "action": "configure", "model": "done.json", "dry_run": true },
//!     { "action": "fail", "ccp": "ccp0" },
//!     { "action": "tick", "count": 1 }
//!   ]
//! }
//! ```
//! Paths are resolved relative to the scenario file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Deserialize;

use ivim_core::model::parse_instance_model;
use ivim_core::plangen::ActionPlan;

use crate::manager::{IntegrationRequest, Manager};

#[derive(Debug, Deserialize)]
pub struct ScenarioDoc {
    pub topology: String,
    #[serde(default)]
    pub steps: Vec<StepDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum StepDoc {
    Configure {
        model: String,
        #[serde(default)]
        constraints: Option<String>,
        #[serde(default)]
        dry_run: bool,
    },
    Optimize {
        model: String,
        #[serde(default)]
        constraints: Option<String>,
        #[serde(default)]
        dry_run: bool,
    },
    Fail {
        ccp: String,
    },
    Tick {
        #[serde(default = "one")]
        count: u64,
    },
}

fn one() -> u64 {
    1
}

#[derive(Debug)]
pub struct StepResult {
    pub label: String,
    pub status: u16,
    pub plan: Option<ActionPlan>,
}

impl StepResult {
    pub fn ok(&self) -> bool {
        self.status == 200
    }
}

pub struct ScenarioOutcome {
    pub steps: Vec<StepResult>,
    pub manager: Manager,
}

impl ScenarioOutcome {
    pub fn all_ok(&self) -> bool {
        self.steps.iter().all(|s| s.ok())
    }
}

fn load_json(dir: &Path, rel: &str) -> Result<serde_json::Value> {
    let path: PathBuf = dir.join(rel);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn run_scenario(scenario_path: &Path) -> Result<ScenarioOutcome> {
    let text = fs::read_to_string(scenario_path)
        .with_context(|| format!("reading {}", scenario_path.display()))?;
    let doc: ScenarioDoc = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", scenario_path.display()))?;
    let dir = scenario_path.parent().unwrap_or(Path::new("."));

    let topology_text = fs::read_to_string(dir.join(&doc.topology))
        .with_context(|| format!("reading topology {}", doc.topology))?;
    let topology = parse_instance_model(&topology_text)
        .map_err(|e| anyhow!("topology {}: {e}", doc.topology))?;
    let mut manager = Manager::new(&topology);

    let mut steps = Vec::new();
    for (i, step) in doc.steps.iter().enumerate() {
        let result = match step {
            StepDoc::Configure {
                model,
                constraints,
                dry_run,
            }
            | StepDoc::Optimize {
                model,
                constraints,
                dry_run,
            } => {
                let request = IntegrationRequest {
                    model: load_json(dir, model)?,
                    constraints: constraints
                        .as_deref()
                        .map(|c| load_json(dir, c))
                        .transpose()?,
                    dry_run: *dry_run,
                };
                let is_configure = matches!(step, StepDoc::Configure { .. });
                let outcome = if is_configure {
                    manager.handle_configure(&request)
                } else {
                    manager.handle_optimize(&request)
                }
                .map_err(|e| anyhow!("step {i}: http {} {}", e.status, e.message))?;
                StepResult {
                    label: format!(
                        "{} {model}",
                        if is_configure { "configure" } else { "optimize" }
                    ),
                    status: outcome.status,
                    plan: outcome.plan,
                }
            }
            StepDoc::Fail { ccp } => {
                manager
                    .inject_failure(ccp)
                    .map_err(|e| anyhow!("step {i}: {}", e.message))?;
                StepResult {
                    label: format!("fail {ccp}"),
                    status: 200,
                    plan: None,
                }
            }
            StepDoc::Tick { count } => {
                for _ in 0..*count {
                    manager.tick();
                }
                StepResult {
                    label: format!("tick {count}"),
                    status: 200,
                    plan: None,
                }
            }
        };
        steps.push(result);
    }

    Ok(ScenarioOutcome { steps, manager })
}
