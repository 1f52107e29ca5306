//! The verification engine: evaluates a constraint catalog against an
//! instance model and classifies requests into the workflow outcomes
//! (generate plan, solve, reject).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{
    is_complete, Allocation, Constraint, ConstraintKind, ConstraintSet, InstanceModel, VmRole,
};

/// Id used for the hard-wired rule that user applications never run on a
/// service VM.
pub const BUILTIN_SERVICE_VM: &str = "builtin:service_vm_exclusive";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    #[serde(rename = "constraint")]
    pub constraint_id: String,
    pub subjects: Vec<String>,
    pub message: String,
    #[serde(skip_serializing, default = "error_severity")]
    pub severity: Severity,
}

fn error_severity() -> Severity {
    Severity::Error
}

impl Violation {
    fn new(constraint_id: &str, subjects: Vec<String>, message: String) -> Self {
        Violation {
            constraint_id: constraint_id.to_string(),
            subjects,
            message,
            severity: Severity::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub complete: bool,
    pub violations: Vec<Violation>,
    pub evaluated_constraints: usize,
}

impl VerificationReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Disposition {
    GeneratePlan,
    Solve,
    Reject,
}

/// Evaluates every constraint in the set plus the built-in service-VM rule.
///
/// All violations are reported, in a deterministic order (constraint id,
/// then subjects); there is no short-circuit.
pub fn verify(model: &InstanceModel, constraints: &ConstraintSet) -> VerificationReport {
    let mut violations = Vec::new();
    let mut evaluated = 0usize;
    for constraint in constraints.iter() {
        violations.extend(evaluate_constraint(constraint, model));
        evaluated += 1;
    }
    violations.extend(check_service_vm_exclusive(model));
    evaluated += 1;
    violations.sort();
    violations.dedup();
    VerificationReport {
        complete: is_complete(model),
        violations,
        evaluated_constraints: evaluated,
    }
}

/// Per-kind constraint semantics over the model's allocations.
pub fn evaluate_constraint(constraint: &Constraint, model: &InstanceModel) -> Vec<Violation> {
    match constraint.kind {
        ConstraintKind::Capacity => check_capacity(constraint, model),
        ConstraintKind::SafetySegregation => check_safety_segregation(constraint, model),
        ConstraintKind::GpuAffinity => check_gpu_affinity(constraint, model),
        ConstraintKind::Pinning => check_pinning(constraint, model),
        ConstraintKind::RedundancyDistinctCcp => check_redundancy_distinct_ccp(constraint, model),
        ConstraintKind::RequireVm => check_require_vm(constraint, model, true),
        ConstraintKind::ForbidVm => check_require_vm(constraint, model, false),
    }
}

/// Workflow outcome per the three-way disposition: a clean complete model
/// goes straight to plan generation, a clean incomplete one to the solver,
/// and anything with violations needs manual intervention.
pub fn classify_request(model: &InstanceModel, report: &VerificationReport) -> Disposition {
    if !report.clean() {
        Disposition::Reject
    } else if is_complete(model) {
        Disposition::GeneratePlan
    } else {
        Disposition::Solve
    }
}

fn check_capacity(constraint: &Constraint, model: &InstanceModel) -> Vec<Violation> {
    let mut out = Vec::new();
    for vm in model.vms() {
        let mut cpu = 0u64;
        let mut ram = 0u64;
        for alloc in model.allocations_on(&vm.id) {
            if let Some(app) = model.application(&alloc.app_id) {
                cpu += app.demand.cpu_millicores;
                ram += app.demand.ram_mb;
            }
        }
        if cpu > vm.capacity.cpu_millicores || ram > vm.capacity.ram_mb {
            out.push(Violation::new(
                &constraint.id,
                vec![vm.id.clone()],
                format!(
                    "vm {} over capacity: {}mc/{}MB demanded, {}mc/{}MB available",
                    vm.id, cpu, ram, vm.capacity.cpu_millicores, vm.capacity.ram_mb
                ),
            ));
        }
    }
    out
}

fn check_safety_segregation(constraint: &Constraint, model: &InstanceModel) -> Vec<Violation> {
    let mut out = Vec::new();
    for alloc in &model.allocations {
        let (Some(app), Some(vm)) = (model.application(&alloc.app_id), model.vm(&alloc.vm_id))
        else {
            continue;
        };
        if vm.role == VmRole::Service {
            continue; // covered by the built-in rule
        }
        if app.safety != vm.safety {
            out.push(Violation::new(
                &constraint.id,
                vec![app.id.clone(), vm.id.clone()],
                format!(
                    "{} application {} allocated to {} vm {}",
                    label(app.safety),
                    app.id,
                    label(vm.safety),
                    vm.id
                ),
            ));
        }
    }
    out
}

fn label(safety: bool) -> &'static str {
    if safety {
        "safety"
    } else {
        "non-safety"
    }
}

fn check_gpu_affinity(constraint: &Constraint, model: &InstanceModel) -> Vec<Violation> {
    let mut out = Vec::new();
    for alloc in &model.allocations {
        let (Some(app), Some(vm)) = (model.application(&alloc.app_id), model.vm(&alloc.vm_id))
        else {
            continue;
        };
        if app.gpu && !vm.gpu_access {
            out.push(Violation::new(
                &constraint.id,
                vec![app.id.clone(), vm.id.clone()],
                format!("gpu application {} allocated to vm {} without gpu access", app.id, vm.id),
            ));
        }
    }
    out
}

/// The pinning baseline is taken from the constraint params
/// (`allocations: [{app, vm, replica}]`); with no explicit baseline the
/// model's own pinned allocations serve as the baseline, which is satisfied
/// by construction.
fn check_pinning(constraint: &Constraint, model: &InstanceModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let Some(baseline) = constraint.params.get("allocations").and_then(|v| v.as_array()) else {
        return out;
    };
    for entry in baseline {
        let app = entry.get("app").and_then(|v| v.as_str()).unwrap_or_default();
        let vm = entry.get("vm").and_then(|v| v.as_str()).unwrap_or_default();
        let replica = entry.get("replica").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        let present = model
            .allocations
            .iter()
            .any(|a| a.app_id == app && a.vm_id == vm && a.replica_index == replica);
        if !present {
            out.push(Violation::new(
                &constraint.id,
                vec![app.to_string(), vm.to_string()],
                format!("pinned allocation {app} replica {replica} on {vm} missing or moved"),
            ));
        }
    }
    out
}

fn check_redundancy_distinct_ccp(constraint: &Constraint, model: &InstanceModel) -> Vec<Violation> {
    let mut out = Vec::new();
    for app in &model.applications {
        if app.redundancy <= 1 {
            continue;
        }
        let mut by_ccp: BTreeMap<&str, Vec<&Allocation>> = BTreeMap::new();
        for alloc in model.allocations_of(&app.id) {
            if let Some(vm) = model.vm(&alloc.vm_id) {
                by_ccp.entry(vm.ccp_id.as_str()).or_default().push(alloc);
            }
        }
        for (ccp, allocs) in by_ccp {
            if allocs.len() > 1 {
                out.push(Violation::new(
                    &constraint.id,
                    vec![app.id.clone(), ccp.to_string()],
                    format!(
                        "{} replicas of redundant application {} share ccp {}",
                        allocs.len(),
                        app.id,
                        ccp
                    ),
                ));
            }
        }
    }
    out
}

fn check_require_vm(constraint: &Constraint, model: &InstanceModel, require: bool) -> Vec<Violation> {
    let Some(app_id) = constraint.param_str("app_id") else {
        return Vec::new();
    };
    let Some(vm_id) = constraint.param_str("vm_id") else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let allocs: Vec<_> = model.allocations_of(app_id).collect();
    if require {
        // only meaningful once the app is allocated at all
        if !allocs.is_empty() && !allocs.iter().any(|a| a.vm_id == vm_id) {
            out.push(Violation::new(
                &constraint.id,
                vec![app_id.to_string(), vm_id.to_string()],
                format!("application {app_id} must run on vm {vm_id}"),
            ));
        }
    } else {
        for alloc in allocs {
            if alloc.vm_id == vm_id {
                out.push(Violation::new(
                    &constraint.id,
                    vec![app_id.to_string(), vm_id.to_string()],
                    format!("application {app_id} must not run on vm {vm_id}"),
                ));
            }
        }
    }
    out
}

fn check_service_vm_exclusive(model: &InstanceModel) -> Vec<Violation> {
    let mut out = Vec::new();
    for alloc in &model.allocations {
        if let Some(vm) = model.vm(&alloc.vm_id) {
            if vm.role == VmRole::Service {
                out.push(Violation::new(
                    BUILTIN_SERVICE_VM,
                    vec![alloc.app_id.clone(), vm.id.clone()],
                    format!("application {} allocated to service vm {}", alloc.app_id, vm.id),
                ));
            }
        }
    }
    out
}
