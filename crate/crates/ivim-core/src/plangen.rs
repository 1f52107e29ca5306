//! Model-to-text generation of the declarative desired state from a
//! complete instance model, plus reconciliation of desired state against
//! current platform state into an ordered action plan.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{is_complete, InstanceModel, ResourceVector, VmRole};
use crate::platform::{PlatformState, VmPhase, WorkloadPhase};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("instance model is incomplete; cannot derive a desired state")]
    IncompleteModel,
    #[error("desired state references vm {0:?} absent from the platform")]
    UnknownTopology(String),
    #[error("unparseable plan line {line}: {text:?}")]
    Unparseable { line: usize, text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesiredVm {
    pub vm_id: String,
    pub ccp_id: String,
    pub capacity: ResourceVector,
    pub running: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesiredWorkload {
    pub app_id: String,
    pub replica_index: u32,
    pub vm_id: String,
    pub image_ref: String,
    pub demand: ResourceVector,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesiredState {
    pub vms: Vec<DesiredVm>,
    pub workloads: Vec<DesiredWorkload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DeploymentAction {
    EnsureVmRunning {
        vm_id: String,
    },
    StopVm {
        vm_id: String,
    },
    PullImage {
        ccp_id: String,
        image_ref: String,
    },
    StartWorkload {
        app_id: String,
        replica_index: u32,
        vm_id: String,
        image_ref: String,
        demand: ResourceVector,
        active: bool,
    },
    StopWorkload {
        app_id: String,
        replica_index: u32,
        vm_id: String,
    },
    PromoteActive {
        app_id: String,
        replica_index: u32,
    },
}

impl DeploymentAction {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DeploymentAction::EnsureVmRunning { .. } => "EnsureVmRunning",
            DeploymentAction::StopVm { .. } => "StopVm",
            DeploymentAction::PullImage { .. } => "PullImage",
            DeploymentAction::StartWorkload { .. } => "StartWorkload",
            DeploymentAction::StopWorkload { .. } => "StopWorkload",
            DeploymentAction::PromoteActive { .. } => "PromoteActive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionPlan {
    pub actions: Vec<DeploymentAction>,
}

impl ActionPlan {
    pub fn from_actions(actions: Vec<DeploymentAction>) -> Self {
        ActionPlan { actions }
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.actions.iter().filter(|a| a.kind_name() == kind).count()
    }

    /// Action counts per kind, in kind order.
    pub fn summary(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for action in &self.actions {
            *out.entry(action.kind_name()).or_insert(0) += 1;
        }
        out
    }
}

/// Derives the declarative desired state from a complete model: one
/// workload per allocation, VMs with workloads marked running, service
/// VMs always running.
pub fn generate_desired_state(model: &InstanceModel) -> Result<DesiredState, PlanError> {
    if !is_complete(model) {
        return Err(PlanError::IncompleteModel);
    }
    let mut workloads = Vec::new();
    for alloc in &model.allocations {
        let app = model
            .application(&alloc.app_id)
            .ok_or(PlanError::IncompleteModel)?;
        workloads.push(DesiredWorkload {
            app_id: alloc.app_id.clone(),
            replica_index: alloc.replica_index,
            vm_id: alloc.vm_id.clone(),
            image_ref: app.image_ref.clone(),
            demand: app.demand,
            active: alloc.active,
        });
    }
    workloads.sort_by(|a, b| (&a.app_id, a.replica_index).cmp(&(&b.app_id, b.replica_index)));

    let occupied: BTreeSet<&str> = workloads.iter().map(|w| w.vm_id.as_str()).collect();
    let mut vms: Vec<DesiredVm> = model
        .vms()
        .map(|vm| DesiredVm {
            vm_id: vm.id.clone(),
            ccp_id: vm.ccp_id.clone(),
            capacity: vm.capacity,
            running: vm.role == VmRole::Service || occupied.contains(vm.id.as_str()),
        })
        .collect();
    vms.sort_by(|a, b| a.vm_id.cmp(&b.vm_id));

    Ok(DesiredState { vms, workloads })
}

/// Computes the minimal ordered diff that moves `current` to `desired`.
///
/// Ordering: workload stops, VM stops, VM starts, image pulls, workload
/// starts, promotions. Pulls are emitted only for images absent from the
/// owning CCP's cache.
pub fn reconcile(desired: &DesiredState, current: &PlatformState) -> Result<ActionPlan, PlanError> {
    for vm in &desired.vms {
        if current.vm(&vm.vm_id).is_none() {
            return Err(PlanError::UnknownTopology(vm.vm_id.clone()));
        }
    }

    // current workloads keyed by (app, replica)
    let mut current_workloads: BTreeMap<(String, u32), (String, String, bool, WorkloadPhase)> =
        BTreeMap::new();
    for (_, vm, w) in current.workloads() {
        current_workloads.insert(
            (w.app_id.clone(), w.replica_index),
            (vm.vm_id.clone(), w.image_ref.clone(), w.active, w.phase),
        );
    }
    let desired_keys: BTreeSet<(String, u32)> = desired
        .workloads
        .iter()
        .map(|w| (w.app_id.clone(), w.replica_index))
        .collect();

    let mut stops: Vec<DeploymentAction> = Vec::new();
    let mut starts: Vec<DeploymentAction> = Vec::new();
    let mut promotions: Vec<DeploymentAction> = Vec::new();

    for (key, (vm_id, _, _, _)) in &current_workloads {
        if !desired_keys.contains(key) {
            stops.push(DeploymentAction::StopWorkload {
                app_id: key.0.clone(),
                replica_index: key.1,
                vm_id: vm_id.clone(),
            });
        }
    }

    for w in &desired.workloads {
        let key = (w.app_id.clone(), w.replica_index);
        match current_workloads.get(&key) {
            Some((vm_id, image, active, phase))
                if *vm_id == w.vm_id && *image == w.image_ref && *phase == WorkloadPhase::Running =>
            {
                if *active != w.active && w.active {
                    promotions.push(DeploymentAction::PromoteActive {
                        app_id: w.app_id.clone(),
                        replica_index: w.replica_index,
                    });
                }
            }
            Some((vm_id, _, _, _)) => {
                // wrong placement, image, or failed: replace
                stops.push(DeploymentAction::StopWorkload {
                    app_id: w.app_id.clone(),
                    replica_index: w.replica_index,
                    vm_id: vm_id.clone(),
                });
                starts.push(DeploymentAction::StartWorkload {
                    app_id: w.app_id.clone(),
                    replica_index: w.replica_index,
                    vm_id: w.vm_id.clone(),
                    image_ref: w.image_ref.clone(),
                    demand: w.demand,
                    active: w.active,
                });
            }
            None => starts.push(DeploymentAction::StartWorkload {
                app_id: w.app_id.clone(),
                replica_index: w.replica_index,
                vm_id: w.vm_id.clone(),
                image_ref: w.image_ref.clone(),
                demand: w.demand,
                active: w.active,
            }),
        }
    }

    let mut vm_stops = Vec::new();
    let mut vm_starts = Vec::new();
    for vm in &desired.vms {
        let (_, state) = current.vm(&vm.vm_id).expect("checked above");
        if vm.running && state.phase != VmPhase::Running {
            vm_starts.push(DeploymentAction::EnsureVmRunning {
                vm_id: vm.vm_id.clone(),
            });
        }
        if !vm.running && state.phase == VmPhase::Running {
            vm_stops.push(DeploymentAction::StopVm {
                vm_id: vm.vm_id.clone(),
            });
        }
    }

    // images needed per ccp, minus what the cache already holds
    let ccp_of: BTreeMap<&str, &str> = desired
        .vms
        .iter()
        .map(|v| (v.vm_id.as_str(), v.ccp_id.as_str()))
        .collect();
    let mut pulls = Vec::new();
    let mut pulled: BTreeSet<(String, String)> = BTreeSet::new();
    for action in &starts {
        let DeploymentAction::StartWorkload { vm_id, image_ref, .. } = action else {
            continue;
        };
        let Some(ccp_id) = ccp_of.get(vm_id.as_str()) else {
            continue;
        };
        let cached = current
            .ccp(ccp_id)
            .map(|c| c.image_cache.contains(image_ref))
            .unwrap_or(false);
        if !cached && pulled.insert((ccp_id.to_string(), image_ref.clone())) {
            pulls.push(DeploymentAction::PullImage {
                ccp_id: ccp_id.to_string(),
                image_ref: image_ref.clone(),
            });
        }
    }

    let sort_key = |a: &DeploymentAction| -> (String, u32, String) {
        match a {
            DeploymentAction::EnsureVmRunning { vm_id } | DeploymentAction::StopVm { vm_id } => {
                (vm_id.clone(), 0, String::new())
            }
            DeploymentAction::PullImage { ccp_id, image_ref } => {
                (ccp_id.clone(), 0, image_ref.clone())
            }
            DeploymentAction::StartWorkload {
                app_id,
                replica_index,
                vm_id,
                ..
            }
            | DeploymentAction::StopWorkload {
                app_id,
                replica_index,
                vm_id,
            } => (app_id.clone(), *replica_index, vm_id.clone()),
            DeploymentAction::PromoteActive {
                app_id,
                replica_index,
            } => (app_id.clone(), *replica_index, String::new()),
        }
    };
    stops.sort_by_key(sort_key);
    vm_stops.sort_by_key(sort_key);
    vm_starts.sort_by_key(sort_key);
    pulls.sort_by_key(sort_key);
    starts.sort_by_key(sort_key);
    promotions.sort_by_key(sort_key);

    let mut actions = stops;
    actions.extend(vm_stops);
    actions.extend(vm_starts);
    actions.extend(pulls);
    actions.extend(starts);
    actions.extend(promotions);
    Ok(ActionPlan { actions })
}

/// Human-auditable rendering, one action per line with +/-/~ prefixes.
pub fn render_plan(plan: &ActionPlan) -> String {
    if plan.is_empty() {
        return "No changes. 0 to add, 0 to change, 0 to destroy.\n".to_string();
    }
    let mut add = 0usize;
    let mut change = 0usize;
    let mut destroy = 0usize;
    let mut lines = Vec::new();
    for action in &plan.actions {
        let line = match action {
            DeploymentAction::EnsureVmRunning { vm_id } => {
                add += 1;
                format!("+ vm {vm_id}")
            }
            DeploymentAction::StopVm { vm_id } => {
                destroy += 1;
                format!("- vm {vm_id}")
            }
            DeploymentAction::PullImage { ccp_id, image_ref } => {
                add += 1;
                format!("+ image {image_ref} on {ccp_id}")
            }
            DeploymentAction::StartWorkload {
                app_id,
                replica_index,
                vm_id,
                ..
            } => {
                add += 1;
                format!("+ workload {} on {vm_id}", slot_label(app_id, *replica_index))
            }
            DeploymentAction::StopWorkload {
                app_id,
                replica_index,
                vm_id,
            } => {
                destroy += 1;
                format!("- workload {} on {vm_id}", slot_label(app_id, *replica_index))
            }
            DeploymentAction::PromoteActive {
                app_id,
                replica_index,
            } => {
                change += 1;
                format!("~ promote {}", slot_label(app_id, *replica_index))
            }
        };
        lines.push(line);
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out.push_str(&format!(
        "Plan: {add} to add, {change} to change, {destroy} to destroy.\n"
    ));
    out
}

fn slot_label(app_id: &str, replica: u32) -> String {
    if replica == 0 {
        app_id.to_string()
    } else {
        format!("{app_id}#{replica}")
    }
}

fn parse_slot_label(label: &str) -> (String, u32) {
    match label.rsplit_once('#') {
        Some((app, r)) => match r.parse() {
            Ok(replica) => (app.to_string(), replica),
            Err(_) => (label.to_string(), 0),
        },
        None => (label.to_string(), 0),
    }
}

/// Structural element recovered from a rendered plan line; the textual
/// counterpart of [`render_plan`] used for round-trip checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedAction {
    EnsureVmRunning { vm_id: String },
    StopVm { vm_id: String },
    PullImage { ccp_id: String, image_ref: String },
    StartWorkload { app_id: String, replica_index: u32, vm_id: String },
    StopWorkload { app_id: String, replica_index: u32, vm_id: String },
    PromoteActive { app_id: String, replica_index: u32 },
}

impl ParsedAction {
    pub fn matches(&self, action: &DeploymentAction) -> bool {
        match (self, action) {
            (
                ParsedAction::EnsureVmRunning { vm_id: a },
                DeploymentAction::EnsureVmRunning { vm_id: b },
            ) => a == b,
            (ParsedAction::StopVm { vm_id: a }, DeploymentAction::StopVm { vm_id: b }) => a == b,
            (
                ParsedAction::PullImage { ccp_id: ac, image_ref: ai },
                DeploymentAction::PullImage { ccp_id: bc, image_ref: bi },
            ) => ac == bc && ai == bi,
            (
                ParsedAction::StartWorkload { app_id: aa, replica_index: ar, vm_id: av },
                DeploymentAction::StartWorkload { app_id: ba, replica_index: br, vm_id: bv, .. },
            ) => aa == ba && ar == br && av == bv,
            (
                ParsedAction::StopWorkload { app_id: aa, replica_index: ar, vm_id: av },
                DeploymentAction::StopWorkload { app_id: ba, replica_index: br, vm_id: bv },
            ) => aa == ba && ar == br && av == bv,
            (
                ParsedAction::PromoteActive { app_id: aa, replica_index: ar },
                DeploymentAction::PromoteActive { app_id: ba, replica_index: br },
            ) => aa == ba && ar == br,
            _ => false,
        }
    }
}

/// Parses a rendered plan back into its structural actions.
pub fn parse_plan(text: &str) -> Result<Vec<ParsedAction>, PlanError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let unparseable = || PlanError::Unparseable {
            line: i + 1,
            text: line.to_string(),
        };
        if line.starts_with("No changes.") || line.starts_with("Plan:") || line.is_empty() {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        let action = match words.as_slice() {
            ["+", "vm", vm_id] => ParsedAction::EnsureVmRunning { vm_id: vm_id.to_string() },
            ["-", "vm", vm_id] => ParsedAction::StopVm { vm_id: vm_id.to_string() },
            ["+", "image", image_ref, "on", ccp_id] => ParsedAction::PullImage {
                ccp_id: ccp_id.to_string(),
                image_ref: image_ref.to_string(),
            },
            ["+", "workload", label, "on", vm_id] => {
                let (app_id, replica_index) = parse_slot_label(label);
                ParsedAction::StartWorkload {
                    app_id,
                    replica_index,
                    vm_id: vm_id.to_string(),
                }
            }
            ["-", "workload", label, "on", vm_id] => {
                let (app_id, replica_index) = parse_slot_label(label);
                ParsedAction::StopWorkload {
                    app_id,
                    replica_index,
                    vm_id: vm_id.to_string(),
                }
            }
            ["~", "promote", label] => {
                let (app_id, replica_index) = parse_slot_label(label);
                ParsedAction::PromoteActive {
                    app_id,
                    replica_index,
                }
            }
            _ => return Err(unparseable()),
        };
        out.push(action);
    }
    Ok(out)
}
