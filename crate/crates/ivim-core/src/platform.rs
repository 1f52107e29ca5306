//! Discrete-tick simulation of the virtualized compute platform: CCPs
//! with hypervisor partitions, per-CCP image caches, container workload
//! lifecycle, failure injection, and redundancy failover.
//!
//! The state is a single logical resource; apply/tick/inject_failure take
//! `&mut self` so the caller serializes mutations.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{InstanceModel, ModelError, ResourceVector, VmRole};
use crate::plangen::{ActionPlan, DeploymentAction};

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("unknown ccp {0:?}")]
    UnknownCcp(String),
    #[error("snapshot parse error: {0}")]
    Snapshot(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VmPhase {
    Stopped,
    Running,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadPhase {
    Pending,
    Running,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadState {
    pub app_id: String,
    pub replica_index: u32,
    pub image_ref: String,
    pub demand: ResourceVector,
    pub phase: WorkloadPhase,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmState {
    pub vm_id: String,
    pub role: VmRole,
    pub capacity: ResourceVector,
    pub phase: VmPhase,
    pub workloads: Vec<WorkloadState>,
}

impl VmState {
    pub fn used(&self) -> ResourceVector {
        self.workloads
            .iter()
            .fold(ResourceVector::default(), |acc, w| acc.add(&w.demand))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcpState {
    pub id: String,
    pub alive: bool,
    pub image_cache: BTreeSet<String>,
    pub vms: Vec<VmState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformState {
    pub clock: u64,
    pub registry: BTreeSet<String>,
    pub ccps: Vec<CcpState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionOutcome {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplyReport {
    pub outcomes: Vec<ActionOutcome>,
    pub final_state_digest: String,
}

impl ApplyReport {
    pub fn all_ok(&self) -> bool {
        self.outcomes.iter().all(|o| matches!(o, ActionOutcome::Ok))
    }
}

impl PlatformState {
    /// Initializes the platform from a topology: all CCPs alive, service
    /// VMs running, user VMs stopped, caches empty, registry seeded with
    /// the topology's application images.
    pub fn init(topology: &InstanceModel) -> PlatformState {
        PlatformState {
            clock: 0,
            registry: topology
                .applications
                .iter()
                .map(|a| a.image_ref.clone())
                .collect(),
            ccps: topology
                .ccps
                .iter()
                .map(|ccp| CcpState {
                    id: ccp.id.clone(),
                    alive: true,
                    image_cache: BTreeSet::new(),
                    vms: ccp
                        .vms
                        .iter()
                        .map(|vm| VmState {
                            vm_id: vm.id.clone(),
                            role: vm.role,
                            capacity: vm.capacity,
                            phase: if vm.role == VmRole::Service {
                                VmPhase::Running
                            } else {
                                VmPhase::Stopped
                            },
                            workloads: Vec::new(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Makes an image pullable; models pushing it to the registry
    /// out-of-band before an integration request references it.
    pub fn register_image(&mut self, image_ref: &str) {
        self.registry.insert(image_ref.to_string());
    }

    pub fn ccp(&self, id: &str) -> Option<&CcpState> {
        self.ccps.iter().find(|c| c.id == id)
    }

    pub fn vm(&self, vm_id: &str) -> Option<(&CcpState, &VmState)> {
        for ccp in &self.ccps {
            if let Some(vm) = ccp.vms.iter().find(|v| v.vm_id == vm_id) {
                return Some((ccp, vm));
            }
        }
        None
    }

    fn vm_mut(&mut self, vm_id: &str) -> Option<(usize, usize)> {
        for (ci, ccp) in self.ccps.iter().enumerate() {
            if let Some(vi) = ccp.vms.iter().position(|v| v.vm_id == vm_id) {
                return Some((ci, vi));
            }
        }
        None
    }

    pub fn workloads(&self) -> impl Iterator<Item = (&CcpState, &VmState, &WorkloadState)> {
        self.ccps.iter().flat_map(|ccp| {
            ccp.vms
                .iter()
                .flat_map(move |vm| vm.workloads.iter().map(move |w| (ccp, vm, w)))
        })
    }

    pub fn running_workloads(&self) -> usize {
        self.workloads()
            .filter(|(_, _, w)| w.phase == WorkloadPhase::Running)
            .count()
    }

    /// Executes the plan in order. A failed action is recorded and
    /// skipped; subsequent independent actions still run.
    pub fn apply(&mut self, plan: &ActionPlan) -> ApplyReport {
        let mut outcomes = Vec::with_capacity(plan.actions.len());
        for action in &plan.actions {
            let outcome = match self.apply_action(action) {
                Ok(()) => ActionOutcome::Ok,
                Err(reason) => ActionOutcome::Failed(reason),
            };
            outcomes.push(outcome);
        }
        ApplyReport {
            outcomes,
            final_state_digest: self.digest(),
        }
    }

    fn apply_action(&mut self, action: &DeploymentAction) -> Result<(), String> {
        match action {
            DeploymentAction::EnsureVmRunning { vm_id } => {
                let (ci, vi) = self
                    .vm_mut(vm_id)
                    .ok_or_else(|| format!("UnknownVm: {vm_id}"))?;
                if !self.ccps[ci].alive {
                    return Err(format!("DeadCcp: {}", self.ccps[ci].id));
                }
                self.ccps[ci].vms[vi].phase = VmPhase::Running;
                Ok(())
            }
            DeploymentAction::StopVm { vm_id } => {
                let (ci, vi) = self
                    .vm_mut(vm_id)
                    .ok_or_else(|| format!("UnknownVm: {vm_id}"))?;
                if !self.ccps[ci].vms[vi].workloads.is_empty() {
                    return Err(format!("VmNotEmpty: {vm_id}"));
                }
                self.ccps[ci].vms[vi].phase = VmPhase::Stopped;
                Ok(())
            }
            DeploymentAction::PullImage { ccp_id, image_ref } => {
                if !self.registry.contains(image_ref) {
                    return Err(format!("ImageNotFound: {image_ref}"));
                }
                let ccp = self
                    .ccps
                    .iter_mut()
                    .find(|c| c.id == *ccp_id)
                    .ok_or_else(|| format!("UnknownCcp: {ccp_id}"))?;
                if !ccp.alive {
                    return Err(format!("DeadCcp: {ccp_id}"));
                }
                ccp.image_cache.insert(image_ref.clone());
                Ok(())
            }
            DeploymentAction::StartWorkload {
                app_id,
                replica_index,
                vm_id,
                image_ref,
                demand,
                active,
            } => {
                let (ci, vi) = self
                    .vm_mut(vm_id)
                    .ok_or_else(|| format!("UnknownVm: {vm_id}"))?;
                if !self.ccps[ci].alive {
                    return Err(format!("DeadCcp: {}", self.ccps[ci].id));
                }
                if self.ccps[ci].vms[vi].phase != VmPhase::Running {
                    return Err(format!("VmNotRunning: {vm_id}"));
                }
                if !self.ccps[ci].image_cache.contains(image_ref) {
                    // implicit pull for registry-known images
                    if self.registry.contains(image_ref) {
                        self.ccps[ci].image_cache.insert(image_ref.clone());
                    } else {
                        return Err(format!("ImageNotFound: {image_ref}"));
                    }
                }
                let vm = &self.ccps[ci].vms[vi];
                if vm
                    .workloads
                    .iter()
                    .any(|w| w.app_id == *app_id && w.replica_index == *replica_index)
                {
                    return Err(format!("WorkloadExists: {app_id}[{replica_index}]"));
                }
                let used = vm.used();
                if used.cpu_millicores + demand.cpu_millicores > vm.capacity.cpu_millicores
                    || used.ram_mb + demand.ram_mb > vm.capacity.ram_mb
                {
                    return Err(format!("CapacityExceeded: {vm_id}"));
                }
                self.ccps[ci].vms[vi].workloads.push(WorkloadState {
                    app_id: app_id.clone(),
                    replica_index: *replica_index,
                    image_ref: image_ref.clone(),
                    demand: *demand,
                    phase: WorkloadPhase::Running,
                    active: *active,
                });
                self.ccps[ci].vms[vi]
                    .workloads
                    .sort_by(|a, b| (&a.app_id, a.replica_index).cmp(&(&b.app_id, b.replica_index)));
                Ok(())
            }
            DeploymentAction::StopWorkload {
                app_id,
                replica_index,
                vm_id,
            } => {
                let (ci, vi) = self
                    .vm_mut(vm_id)
                    .ok_or_else(|| format!("UnknownVm: {vm_id}"))?;
                let vm = &mut self.ccps[ci].vms[vi];
                let before = vm.workloads.len();
                vm.workloads
                    .retain(|w| !(w.app_id == *app_id && w.replica_index == *replica_index));
                if vm.workloads.len() == before {
                    return Err(format!("WorkloadNotFound: {app_id}[{replica_index}]"));
                }
                Ok(())
            }
            DeploymentAction::PromoteActive {
                app_id,
                replica_index,
            } => {
                let mut found = false;
                for ccp in &mut self.ccps {
                    for vm in &mut ccp.vms {
                        for w in &mut vm.workloads {
                            if w.app_id == *app_id {
                                w.active = w.replica_index == *replica_index;
                                if w.active {
                                    found = true;
                                }
                            }
                        }
                    }
                }
                if found {
                    Ok(())
                } else {
                    Err(format!("WorkloadNotFound: {app_id}[{replica_index}]"))
                }
            }
        }
    }

    /// Advances the clock one tick: workloads on dead CCPs fail, and if an
    /// app's active replica has failed, the surviving standby on the
    /// lowest vm id takes over.
    pub fn tick(&mut self) {
        self.clock += 1;
        for ccp in &mut self.ccps {
            if !ccp.alive {
                for vm in &mut ccp.vms {
                    for w in &mut vm.workloads {
                        w.phase = WorkloadPhase::Failed;
                    }
                }
            }
        }

        let mut apps: Vec<String> = self.workloads().map(|(_, _, w)| w.app_id.clone()).collect();
        apps.sort();
        apps.dedup();
        for app in apps {
            let active_failed = self
                .workloads()
                .any(|(_, _, w)| w.app_id == app && w.active && w.phase == WorkloadPhase::Failed);
            if !active_failed {
                continue;
            }
            let standby: Option<(String, u32)> = self
                .workloads()
                .filter(|(_, _, w)| {
                    w.app_id == app && !w.active && w.phase != WorkloadPhase::Failed
                })
                .map(|(_, vm, w)| (vm.vm_id.clone(), w.replica_index))
                .min();
            if let Some((_, replica)) = standby {
                for ccp in &mut self.ccps {
                    for vm in &mut ccp.vms {
                        for w in &mut vm.workloads {
                            if w.app_id == app {
                                w.active = w.replica_index == replica;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Marks a CCP dead; its workloads fail at the next tick. Idempotent.
    pub fn inject_failure(&mut self, ccp_id: &str) -> Result<(), PlatformError> {
        let ccp = self
            .ccps
            .iter_mut()
            .find(|c| c.id == ccp_id)
            .ok_or_else(|| PlatformError::UnknownCcp(ccp_id.to_string()))?;
        ccp.alive = false;
        Ok(())
    }

    /// Content hash of the full state (excluding the hash itself).
    pub fn digest(&self) -> String {
        let body = serde_json::to_vec(self).expect("state serialization");
        hex::encode(Sha256::digest(&body))
    }

    /// Deterministic full-state document, parseable back via
    /// [`parse_snapshot`].
    pub fn snapshot(&self) -> String {
        let doc = SnapshotDoc {
            digest: self.digest(),
            state: self.clone(),
        };
        let mut out = serde_json::to_string_pretty(&doc).expect("snapshot serialization");
        out.push('\n');
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotDoc {
    digest: String,
    state: PlatformState,
}

pub fn parse_snapshot(text: &str) -> Result<PlatformState, ModelError> {
    let doc: SnapshotDoc =
        serde_json::from_str(text).map_err(|e| ModelError::schema("$", e.to_string()))?;
    Ok(doc.state)
}
