//! The optimization engine: turns an instance model plus constraint
//! catalog into an assignment problem over (application, replica) slots
//! and VMs, solves it with deterministic branch-and-bound, and can export
//! the problem as an SMT-LIB script.
//!
//! The objective is a fixed lexicographic pair: minimize the maximum VM
//! load (permille, over CPU and RAM), then take the lexicographically
//! smallest assignment vector under the problem's slot and VM ordering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Allocation, ConstraintKind, ConstraintSet, InstanceModel, ResourceVector, VmRole,
};

pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("slot {app_id}[{replica}] has no candidate vm after pre-filtering")]
    EmptyDomain { app_id: String, replica: u32 },
    #[error("node budget of {budget} exhausted after {nodes} nodes")]
    Timeout { budget: u64, nodes: u64 },
    #[error("instance too large for exhaustive enumeration: {slots} slots x {vms} vms")]
    InstanceTooLarge { slots: usize, vms: usize },
    #[error("pinned allocation {app_id}[{replica}] targets vm {vm_id} outside its domain")]
    PinnedOutsideDomain {
        app_id: String,
        replica: u32,
        vm_id: String,
    },
}

/// One decision slot: a single replica of one application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotInfo {
    pub app_id: String,
    pub replica: u32,
    pub demand: ResourceVector,
    pub safety: bool,
    pub gpu: bool,
    pub redundancy: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VmInfo {
    pub vm_id: String,
    pub ccp_id: String,
    pub capacity: ResourceVector,
    pub safety: bool,
    pub gpu_access: bool,
    pub service: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentProblem {
    /// Slots ascending by (app id, replica index).
    pub slots: Vec<SlotInfo>,
    /// VMs ascending by vm id.
    pub vms: Vec<VmInfo>,
    /// Per-slot candidate VM indices, pre-filtered by the unary constraint
    /// kinds present in the catalog.
    pub domains: Vec<Vec<usize>>,
    /// Fixed slot -> vm decisions from pinned allocations.
    pub pinned: BTreeMap<usize, usize>,
    /// Constraint kinds present in the catalog this problem was built from.
    pub kinds: BTreeSet<ConstraintKind>,
    pub require: Vec<(String, String)>,
    pub forbid: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Sat,
    Unsat,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nodes_explored: u64,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Slot index -> vm id, present when Sat.
    pub assignment: BTreeMap<usize, String>,
    /// Max VM load in permille, present when Sat.
    pub objective_value: Option<u64>,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnsatDiagnosis {
    /// For each constraint kind present, whether dropping that kind alone
    /// makes the problem feasible. Ordered by kind.
    pub relaxation_hints: Vec<(ConstraintKind, bool)>,
}

impl AssignmentProblem {
    pub fn slot_index(&self, app_id: &str, replica: u32) -> Option<usize> {
        self.slots
            .iter()
            .position(|s| s.app_id == app_id && s.replica == replica)
    }

    pub fn vm_index(&self, vm_id: &str) -> Option<usize> {
        self.vms.iter().position(|v| v.vm_id == vm_id)
    }

    fn kind_enabled(&self, kind: ConstraintKind, disabled: Option<ConstraintKind>) -> bool {
        self.kinds.contains(&kind) && disabled != Some(kind)
    }

    /// Candidate VMs for one slot under the enabled unary kinds. The
    /// service-VM exclusion is built in and never relaxed.
    fn domain_for(&self, slot: &SlotInfo, disabled: Option<ConstraintKind>) -> Vec<usize> {
        let required: Option<&str> = if self.kind_enabled(ConstraintKind::RequireVm, disabled) {
            self.require
                .iter()
                .find(|(app, _)| app == &slot.app_id)
                .map(|(_, vm)| vm.as_str())
        } else {
            None
        };
        self.vms
            .iter()
            .enumerate()
            .filter(|(_, vm)| !vm.service)
            .filter(|(_, vm)| {
                !self.kind_enabled(ConstraintKind::SafetySegregation, disabled)
                    || vm.safety == slot.safety
            })
            .filter(|(_, vm)| {
                !self.kind_enabled(ConstraintKind::GpuAffinity, disabled)
                    || !slot.gpu
                    || vm.gpu_access
            })
            .filter(|(_, vm)| required.map_or(true, |r| vm.vm_id == r))
            .filter(|(_, vm)| {
                !self.kind_enabled(ConstraintKind::ForbidVm, disabled)
                    || !self
                        .forbid
                        .iter()
                        .any(|(app, fvm)| app == &slot.app_id && fvm == &vm.vm_id)
            })
            .map(|(i, _)| i)
            .collect()
    }

    fn domains_with(&self, disabled: Option<ConstraintKind>) -> Vec<Vec<usize>> {
        self.slots
            .iter()
            .map(|s| self.domain_for(s, disabled))
            .collect()
    }
}

/// Builds the assignment problem. Domains are pre-filtered by the unary
/// kinds; pinned allocations become fixed slots.
pub fn build_problem(
    model: &InstanceModel,
    constraints: &ConstraintSet,
) -> Result<AssignmentProblem, SolverError> {
    let mut vms: Vec<VmInfo> = model
        .vms()
        .map(|v| VmInfo {
            vm_id: v.id.clone(),
            ccp_id: v.ccp_id.clone(),
            capacity: v.capacity,
            safety: v.safety,
            gpu_access: v.gpu_access,
            service: v.role == VmRole::Service,
        })
        .collect();
    vms.sort_by(|a, b| a.vm_id.cmp(&b.vm_id));

    let mut apps: Vec<_> = model.applications.iter().collect();
    apps.sort_by(|a, b| a.id.cmp(&b.id));
    let mut slots = Vec::new();
    for app in apps {
        for replica in 0..app.redundancy {
            slots.push(SlotInfo {
                app_id: app.id.clone(),
                replica,
                demand: app.demand,
                safety: app.safety,
                gpu: app.gpu,
                redundancy: app.redundancy,
            });
        }
    }

    let mut require = Vec::new();
    let mut forbid = Vec::new();
    for c in constraints.iter() {
        match c.kind {
            ConstraintKind::RequireVm => {
                if let (Some(app), Some(vm)) = (c.param_str("app_id"), c.param_str("vm_id")) {
                    require.push((app.to_string(), vm.to_string()));
                }
            }
            ConstraintKind::ForbidVm => {
                if let (Some(app), Some(vm)) = (c.param_str("app_id"), c.param_str("vm_id")) {
                    forbid.push((app.to_string(), vm.to_string()));
                }
            }
            _ => {}
        }
    }

    let mut problem = AssignmentProblem {
        slots,
        vms,
        domains: Vec::new(),
        pinned: BTreeMap::new(),
        kinds: constraints.kinds(),
        require,
        forbid,
    };
    problem.domains = problem.domains_with(None);

    for (i, domain) in problem.domains.iter().enumerate() {
        if domain.is_empty() {
            return Err(SolverError::EmptyDomain {
                app_id: problem.slots[i].app_id.clone(),
                replica: problem.slots[i].replica,
            });
        }
    }

    if !problem.kinds.contains(&ConstraintKind::Pinning) {
        return Ok(problem);
    }
    for alloc in model.allocations.iter().filter(|a| a.pinned) {
        let Some(slot) = problem.slot_index(&alloc.app_id, alloc.replica_index) else {
            continue;
        };
        let Some(vm) = problem.vm_index(&alloc.vm_id) else {
            continue;
        };
        if !problem.domains[slot].contains(&vm) {
            return Err(SolverError::PinnedOutsideDomain {
                app_id: alloc.app_id.clone(),
                replica: alloc.replica_index,
                vm_id: alloc.vm_id.clone(),
            });
        }
        problem.pinned.insert(slot, vm);
    }

    Ok(problem)
}

/// Max load of a VM in permille over CPU and RAM, given totals already
/// assigned to it. The GPU slot is shared and does not contribute load.
fn load_permille(used_cpu: u64, used_ram: u64, capacity: &ResourceVector) -> u64 {
    let cpu = used_cpu * 1000 / capacity.cpu_millicores.max(1);
    let ram = used_ram * 1000 / capacity.ram_mb.max(1);
    cpu.max(ram)
}

struct Search<'a> {
    problem: &'a AssignmentProblem,
    domains: Vec<Vec<usize>>,
    capacity_on: bool,
    redundancy_on: bool,
    pinning_on: bool,
    budget: u64,
    nodes: u64,
    used_cpu: Vec<u64>,
    used_ram: Vec<u64>,
    current: Vec<usize>,
    best: Option<(u64, Vec<usize>)>,
}

impl<'a> Search<'a> {
    fn run(&mut self) -> Result<(), SolverError> {
        self.descend(0, 0)
    }

    fn descend(&mut self, slot: usize, partial_max: u64) -> Result<(), SolverError> {
        if let Some((best_obj, _)) = &self.best {
            // DFS visits assignments in lexicographic order, so a later
            // completion with an equal objective can never be the argmin.
            if partial_max >= *best_obj {
                return Ok(());
            }
        }
        if slot == self.problem.slots.len() {
            self.best = Some((partial_max, self.current.clone()));
            return Ok(());
        }
        let info = &self.problem.slots[slot];
        let candidates = self.domains[slot].clone();
        for vm in candidates {
            if self.pinning_on {
                if let Some(&fixed) = self.problem.pinned.get(&slot) {
                    if vm != fixed {
                        continue;
                    }
                }
            }
            self.nodes += 1;
            if self.nodes > self.budget {
                return Err(SolverError::Timeout {
                    budget: self.budget,
                    nodes: self.nodes,
                });
            }
            if self.redundancy_on && info.redundancy > 1 {
                let ccp = &self.problem.vms[vm].ccp_id;
                let clash = (0..slot).any(|s| {
                    self.problem.slots[s].app_id == info.app_id
                        && &self.problem.vms[self.current[s]].ccp_id == ccp
                });
                if clash {
                    continue;
                }
            }
            let cpu = self.used_cpu[vm] + info.demand.cpu_millicores;
            let ram = self.used_ram[vm] + info.demand.ram_mb;
            let cap = &self.problem.vms[vm].capacity;
            if self.capacity_on && (cpu > cap.cpu_millicores || ram > cap.ram_mb) {
                continue;
            }
            let vm_load = load_permille(cpu, ram, cap);
            self.used_cpu[vm] = cpu;
            self.used_ram[vm] = ram;
            self.current.push(vm);
            let result = self.descend(slot + 1, partial_max.max(vm_load));
            self.current.pop();
            self.used_cpu[vm] -= info.demand.cpu_millicores;
            self.used_ram[vm] -= info.demand.ram_mb;
            result?;
        }
        Ok(())
    }
}

fn solve_relaxed(
    problem: &AssignmentProblem,
    disabled: Option<ConstraintKind>,
    budget: u64,
) -> Result<SolveResult, SolverError> {
    let started = Instant::now();
    let domains = problem.domains_with(disabled);
    let mut search = Search {
        problem,
        capacity_on: problem.kind_enabled(ConstraintKind::Capacity, disabled),
        redundancy_on: problem.kind_enabled(ConstraintKind::RedundancyDistinctCcp, disabled),
        pinning_on: problem.kind_enabled(ConstraintKind::Pinning, disabled),
        domains,
        budget,
        nodes: 0,
        used_cpu: vec![0; problem.vms.len()],
        used_ram: vec![0; problem.vms.len()],
        current: Vec::with_capacity(problem.slots.len()),
        best: None,
    };
    search.run()?;
    let stats = SolveStats {
        nodes_explored: search.nodes,
        duration_ms: started.elapsed().as_millis() as u64,
    };
    Ok(match search.best.take() {
        Some((objective, assignment)) => SolveResult {
            status: SolveStatus::Sat,
            assignment: assignment
                .iter()
                .enumerate()
                .map(|(slot, &vm)| (slot, problem.vms[vm].vm_id.clone()))
                .collect(),
            objective_value: Some(objective),
            stats,
        },
        None => SolveResult {
            status: SolveStatus::Unsat,
            assignment: BTreeMap::new(),
            objective_value: None,
            stats,
        },
    })
}

/// Deterministic branch-and-bound: slots ascending, candidate VMs
/// ascending; bound is the partial max load; prune when bound >= incumbent.
pub fn solve(problem: &AssignmentProblem) -> Result<SolveResult, SolverError> {
    solve_with_budget(problem, DEFAULT_NODE_BUDGET)
}

pub fn solve_with_budget(
    problem: &AssignmentProblem,
    budget: u64,
) -> Result<SolveResult, SolverError> {
    solve_relaxed(problem, None, budget)
}

/// Exhaustive reference solver over all |VMs|^|slots| assignments,
/// independent of the branch-and-bound path. Guarded against blow-up.
pub fn brute_force_oracle(problem: &AssignmentProblem) -> Result<SolveResult, SolverError> {
    let slots = problem.slots.len();
    let vms = problem.vms.len();
    if slots > 10 || vms > 4 {
        return Err(SolverError::InstanceTooLarge { slots, vms });
    }
    let started = Instant::now();
    if slots == 0 {
        return Ok(SolveResult {
            status: SolveStatus::Sat,
            assignment: BTreeMap::new(),
            objective_value: Some(0),
            stats: SolveStats {
                nodes_explored: 1,
                duration_ms: started.elapsed().as_millis() as u64,
            },
        });
    }

    let mut best: Option<(u64, Vec<usize>)> = None;
    let mut nodes = 0u64;
    let mut assignment = vec![0usize; slots];
    loop {
        nodes += 1;
        if oracle_feasible(problem, &assignment) {
            let objective = oracle_objective(problem, &assignment);
            let better = match &best {
                None => true,
                Some((obj, vec)) => {
                    objective < *obj || (objective == *obj && assignment < *vec)
                }
            };
            if better {
                best = Some((objective, assignment.clone()));
            }
        }
        // odometer over vm indices
        let mut i = slots;
        loop {
            if i == 0 {
                break;
            }
            i -= 1;
            assignment[i] += 1;
            if assignment[i] < vms {
                break;
            }
            assignment[i] = 0;
            if i == 0 {
                i = usize::MAX;
                break;
            }
        }
        if i == usize::MAX {
            break;
        }
    }

    let stats = SolveStats {
        nodes_explored: nodes,
        duration_ms: started.elapsed().as_millis() as u64,
    };
    Ok(match best {
        Some((objective, vec)) => SolveResult {
            status: SolveStatus::Sat,
            assignment: vec
                .iter()
                .enumerate()
                .map(|(slot, &vm)| (slot, problem.vms[vm].vm_id.clone()))
                .collect(),
            objective_value: Some(objective),
            stats,
        },
        None => SolveResult {
            status: SolveStatus::Unsat,
            assignment: BTreeMap::new(),
            objective_value: None,
            stats,
        },
    })
}

fn oracle_feasible(problem: &AssignmentProblem, assignment: &[usize]) -> bool {
    let kinds = &problem.kinds;
    for (slot, &vm_idx) in assignment.iter().enumerate() {
        let slot_info = &problem.slots[slot];
        let vm = &problem.vms[vm_idx];
        if vm.service {
            return false;
        }
        if kinds.contains(&ConstraintKind::SafetySegregation) && vm.safety != slot_info.safety {
            return false;
        }
        if kinds.contains(&ConstraintKind::GpuAffinity) && slot_info.gpu && !vm.gpu_access {
            return false;
        }
        if kinds.contains(&ConstraintKind::RequireVm)
            && problem
                .require
                .iter()
                .any(|(app, rvm)| app == &slot_info.app_id && rvm != &vm.vm_id)
        {
            return false;
        }
        if kinds.contains(&ConstraintKind::ForbidVm)
            && problem
                .forbid
                .iter()
                .any(|(app, fvm)| app == &slot_info.app_id && fvm == &vm.vm_id)
        {
            return false;
        }
        if kinds.contains(&ConstraintKind::Pinning) {
            if let Some(&fixed) = problem.pinned.get(&slot) {
                if fixed != vm_idx {
                    return false;
                }
            }
        }
    }
    if kinds.contains(&ConstraintKind::Capacity) {
        for (vm_idx, vm) in problem.vms.iter().enumerate() {
            let mut cpu = 0u64;
            let mut ram = 0u64;
            for (slot, &assigned) in assignment.iter().enumerate() {
                if assigned == vm_idx {
                    cpu += problem.slots[slot].demand.cpu_millicores;
                    ram += problem.slots[slot].demand.ram_mb;
                }
            }
            if cpu > vm.capacity.cpu_millicores || ram > vm.capacity.ram_mb {
                return false;
            }
        }
    }
    if kinds.contains(&ConstraintKind::RedundancyDistinctCcp) {
        for (slot, &vm_idx) in assignment.iter().enumerate() {
            let slot_info = &problem.slots[slot];
            if slot_info.redundancy <= 1 {
                continue;
            }
            for (other, &other_vm) in assignment.iter().enumerate().skip(slot + 1) {
                if problem.slots[other].app_id == slot_info.app_id
                    && problem.vms[other_vm].ccp_id == problem.vms[vm_idx].ccp_id
                {
                    return false;
                }
            }
        }
    }
    true
}

fn oracle_objective(problem: &AssignmentProblem, assignment: &[usize]) -> u64 {
    let mut worst = 0u64;
    for (vm_idx, vm) in problem.vms.iter().enumerate() {
        let mut cpu = 0u64;
        let mut ram = 0u64;
        for (slot, &assigned) in assignment.iter().enumerate() {
            if assigned == vm_idx {
                cpu += problem.slots[slot].demand.cpu_millicores;
                ram += problem.slots[slot].demand.ram_mb;
            }
        }
        worst = worst.max(load_permille(cpu, ram, &vm.capacity));
    }
    worst
}

/// Re-solves with each constraint kind disabled in isolation and records
/// which single relaxation makes the problem feasible.
pub fn diagnose_unsat(problem: &AssignmentProblem) -> UnsatDiagnosis {
    let mut hints = Vec::new();
    for kind in ConstraintKind::ALL {
        if !problem.kinds.contains(&kind) {
            continue;
        }
        let feasible = matches!(
            solve_relaxed(problem, Some(kind), DEFAULT_NODE_BUDGET),
            Ok(SolveResult {
                status: SolveStatus::Sat,
                ..
            })
        );
        hints.push((kind, feasible));
    }
    UnsatDiagnosis {
        relaxation_hints: hints,
    }
}

/// Like [`diagnose_unsat`], but rebuilds the problem per relaxation from
/// the model so it also covers infeasibility detected at build time
/// (empty domains).
pub fn diagnose_unsat_model(
    model: &InstanceModel,
    constraints: &ConstraintSet,
) -> UnsatDiagnosis {
    let present = constraints.kinds();
    let mut hints = Vec::new();
    for kind in ConstraintKind::ALL {
        if !present.contains(&kind) {
            continue;
        }
        let reduced = constraints.without_kind(kind);
        let feasible = match build_problem(model, &reduced) {
            Ok(problem) => matches!(
                solve(&problem),
                Ok(SolveResult {
                    status: SolveStatus::Sat,
                    ..
                })
            ),
            Err(_) => false,
        };
        hints.push((kind, feasible));
    }
    UnsatDiagnosis {
        relaxation_hints: hints,
    }
}

// ---------------------------------------------------------------------------
// SMT-LIB export
// ---------------------------------------------------------------------------

/// Percent-encodes id characters outside [A-Za-z0-9] so that variable
/// names stay within SMT-LIB simple symbols ('%' is a legal symbol char).
fn encode_id(id: &str) -> String {
    let mut out = String::new();
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() {
            out.push(b as char);
        } else {
            let _ = write!(out, "%{b:02X}");
        }
    }
    out
}

pub fn var_name(slot: &SlotInfo, vm: &VmInfo) -> String {
    format!(
        "x_{}{}_{}",
        encode_id(&slot.app_id),
        slot.replica,
        encode_id(&vm.vm_id)
    )
}

/// Emits the problem as a QF_LIA script: one 0/1 variable per
/// (slot, candidate VM), exactly-one rows per slot, linear capacity rows,
/// distinct-CCP rows for redundant applications, and pinned equalities.
pub fn export_smtlib(problem: &AssignmentProblem) -> String {
    let mut out = String::new();
    out.push_str("(set-logic QF_LIA)\n");

    for (si, slot) in problem.slots.iter().enumerate() {
        for &vi in &problem.domains[si] {
            let name = var_name(slot, &problem.vms[vi]);
            let _ = writeln!(out, "(declare-const {name} Int)");
            let _ = writeln!(out, "(assert (>= {name} 0))");
            let _ = writeln!(out, "(assert (<= {name} 1))");
        }
    }

    for (si, slot) in problem.slots.iter().enumerate() {
        let vars: Vec<String> = problem.domains[si]
            .iter()
            .map(|&vi| var_name(slot, &problem.vms[vi]))
            .collect();
        let sum = sum_expr(&vars);
        let _ = writeln!(out, "(assert (= {sum} 1))");
    }

    if problem.kinds.contains(&ConstraintKind::Capacity) {
        for (vi, vm) in problem.vms.iter().enumerate() {
            for (resource, cap) in [
                ("cpu", vm.capacity.cpu_millicores),
                ("ram", vm.capacity.ram_mb),
            ] {
                let mut terms = Vec::new();
                for (si, slot) in problem.slots.iter().enumerate() {
                    if !problem.domains[si].contains(&vi) {
                        continue;
                    }
                    let demand = match resource {
                        "cpu" => slot.demand.cpu_millicores,
                        _ => slot.demand.ram_mb,
                    };
                    terms.push(format!("(* {} {})", demand, var_name(slot, vm)));
                }
                if !terms.is_empty() {
                    let _ = writeln!(out, "(assert (<= {} {cap}))", sum_expr(&terms));
                }
            }
        }
    }

    if problem.kinds.contains(&ConstraintKind::RedundancyDistinctCcp) {
        let mut ccps: Vec<&str> = problem.vms.iter().map(|v| v.ccp_id.as_str()).collect();
        ccps.sort_unstable();
        ccps.dedup();
        let mut apps: Vec<&str> = problem
            .slots
            .iter()
            .filter(|s| s.redundancy > 1)
            .map(|s| s.app_id.as_str())
            .collect();
        apps.sort_unstable();
        apps.dedup();
        for app in apps {
            for ccp in &ccps {
                let mut terms = Vec::new();
                for (si, slot) in problem.slots.iter().enumerate() {
                    if slot.app_id != app {
                        continue;
                    }
                    for &vi in &problem.domains[si] {
                        if problem.vms[vi].ccp_id == *ccp {
                            terms.push(var_name(slot, &problem.vms[vi]));
                        }
                    }
                }
                if terms.len() > 1 {
                    let _ = writeln!(out, "(assert (<= {} 1))", sum_expr(&terms));
                }
            }
        }
    }

    if problem.kinds.contains(&ConstraintKind::Pinning) {
        for (&si, &vi) in &problem.pinned {
            let name = var_name(&problem.slots[si], &problem.vms[vi]);
            let _ = writeln!(out, "(assert (= {name} 1))");
        }
    }

    out.push_str("(check-sat)\n");
    out
}

fn sum_expr(terms: &[String]) -> String {
    match terms.len() {
        0 => "0".to_string(),
        1 => terms[0].clone(),
        _ => format!("(+ {})", terms.join(" ")),
    }
}

/// Values for every exported variable under a solve result, for
/// substitution into the script's assertions.
pub fn assignment_valuation(
    problem: &AssignmentProblem,
    result: &SolveResult,
) -> BTreeMap<String, i64> {
    let mut env = BTreeMap::new();
    for (si, slot) in problem.slots.iter().enumerate() {
        for &vi in &problem.domains[si] {
            let vm = &problem.vms[vi];
            let chosen = result
                .assignment
                .get(&si)
                .map(|id| id == &vm.vm_id)
                .unwrap_or(false);
            env.insert(var_name(slot, vm), i64::from(chosen));
        }
    }
    env
}

/// Completes a model with a Sat assignment: existing allocations are kept
/// where they agree, and for redundant applications the replica on the
/// lowest vm id becomes the active one.
pub fn apply_assignment(
    problem: &AssignmentProblem,
    result: &SolveResult,
    model: &InstanceModel,
) -> InstanceModel {
    let mut completed = model.clone();
    let mut allocations: Vec<Allocation> = Vec::new();
    for (si, slot) in problem.slots.iter().enumerate() {
        let Some(vm_id) = result.assignment.get(&si) else {
            continue;
        };
        let existing = model
            .allocations
            .iter()
            .find(|a| a.app_id == slot.app_id && a.replica_index == slot.replica);
        match existing {
            Some(a) if &a.vm_id == vm_id => allocations.push(a.clone()),
            _ => allocations.push(Allocation {
                app_id: slot.app_id.clone(),
                vm_id: vm_id.clone(),
                replica_index: slot.replica,
                pinned: false,
                active: true,
            }),
        }
    }
    // active replica selection for redundant apps: lowest vm id wins
    let mut seen_apps = BTreeSet::new();
    for slot in &problem.slots {
        if slot.redundancy <= 1 || !seen_apps.insert(slot.app_id.clone()) {
            continue;
        }
        let mut replicas: Vec<usize> = allocations
            .iter()
            .enumerate()
            .filter(|(_, a)| a.app_id == slot.app_id)
            .map(|(i, _)| i)
            .collect();
        replicas.sort_by(|&a, &b| {
            (&allocations[a].vm_id, allocations[a].replica_index)
                .cmp(&(&allocations[b].vm_id, allocations[b].replica_index))
        });
        let keep_existing = replicas
            .iter()
            .filter(|&&i| allocations[i].pinned && allocations[i].active)
            .count()
            == 1;
        for (rank, &i) in replicas.iter().enumerate() {
            if keep_existing {
                // pinned active replica stays active
                if !allocations[i].pinned {
                    allocations[i].active = false;
                }
            } else {
                allocations[i].active = rank == 0;
            }
        }
    }
    completed.allocations = allocations;
    completed.normalize();
    completed
}
