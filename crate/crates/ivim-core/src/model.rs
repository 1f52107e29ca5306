//! Instance-model data types, the canonical document format, and the
//! constraint catalog.
//!
//! An instance model describes one concrete vehicle system: the central
//! computing platforms (CCPs) with their hypervisor partitions (VMs), the
//! containerized applications, and the (possibly partial) allocation of
//! application replicas to VMs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("integrity error at {path}: {message}")]
    Integrity { path: String, message: String },
}

impl ModelError {
    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn integrity(path: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Integrity {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn path(&self) -> &str {
        match self {
            ModelError::Schema { path, .. } | ModelError::Integrity { path, .. } => path,
        }
    }
}

/// Integer resource quantities: CPU in millicores, RAM in MB, GPU slots.
///
/// The GPU is a shareable slot (every VM with GPU access exposes one slot);
/// CPU and RAM are consumable and summed across workloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResourceVector {
    pub cpu_millicores: u64,
    pub ram_mb: u64,
    pub gpu_slots: u64,
}

impl ResourceVector {
    pub fn new(cpu_millicores: u64, ram_mb: u64, gpu_slots: u64) -> Self {
        Self {
            cpu_millicores,
            ram_mb,
            gpu_slots,
        }
    }

    pub fn add(&self, other: &ResourceVector) -> ResourceVector {
        ResourceVector {
            cpu_millicores: self.cpu_millicores + other.cpu_millicores,
            ram_mb: self.ram_mb + other.ram_mb,
            gpu_slots: self.gpu_slots + other.gpu_slots,
        }
    }

    /// Component-wise `<=`.
    pub fn fits_within(&self, capacity: &ResourceVector) -> bool {
        self.cpu_millicores <= capacity.cpu_millicores
            && self.ram_mb <= capacity.ram_mb
            && self.gpu_slots <= capacity.gpu_slots
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VmRole {
    Service,
    User,
}

impl fmt::Display for VmRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VmRole::Service => write!(f, "service"),
            VmRole::User => write!(f, "user"),
        }
    }
}

/// A hypervisor partition on one CCP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vm {
    pub id: String,
    pub ccp_id: String,
    pub role: VmRole,
    pub capacity: ResourceVector,
    pub safety: bool,
    pub gpu_access: bool,
}

/// A containerized application, possibly deployed redundantly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Application {
    pub id: String,
    pub image_ref: String,
    pub demand: ResourceVector,
    pub safety: bool,
    pub gpu: bool,
    pub redundancy: u32,
}

/// Placement of one application replica on one VM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub app_id: String,
    pub vm_id: String,
    pub replica_index: u32,
    pub pinned: bool,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ccp {
    pub id: String,
    pub vms: Vec<Vm>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceModel {
    pub schema_version: String,
    pub ccps: Vec<Ccp>,
    pub applications: Vec<Application>,
    pub allocations: Vec<Allocation>,
}

impl InstanceModel {
    pub fn vms(&self) -> impl Iterator<Item = &Vm> {
        self.ccps.iter().flat_map(|c| c.vms.iter())
    }

    pub fn vm(&self, id: &str) -> Option<&Vm> {
        self.vms().find(|v| v.id == id)
    }

    pub fn application(&self, id: &str) -> Option<&Application> {
        self.applications.iter().find(|a| a.id == id)
    }

    pub fn allocations_on<'a>(&'a self, vm_id: &'a str) -> impl Iterator<Item = &'a Allocation> {
        self.allocations.iter().filter(move |a| a.vm_id == vm_id)
    }

    pub fn allocations_of<'a>(&'a self, app_id: &'a str) -> impl Iterator<Item = &'a Allocation> {
        self.allocations.iter().filter(move |a| a.app_id == app_id)
    }

    /// Canonical ordering: CCPs/VMs/apps ascending by id, allocations by
    /// (app, replica). Parsing and serialization both normalize, so equal
    /// models serialize to equal bytes.
    pub fn normalize(&mut self) {
        for ccp in &mut self.ccps {
            ccp.vms.sort_by(|a, b| a.id.cmp(&b.id));
        }
        self.ccps.sort_by(|a, b| a.id.cmp(&b.id));
        self.applications.sort_by(|a, b| a.id.cmp(&b.id));
        self.allocations
            .sort_by(|a, b| (&a.app_id, a.replica_index).cmp(&(&b.app_id, b.replica_index)));
    }
}

// ---------------------------------------------------------------------------
// Document (wire) format
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ModelDoc {
    schema_version: String,
    #[serde(default)]
    ccps: Vec<CcpDoc>,
    #[serde(default)]
    applications: Vec<AppDoc>,
    #[serde(default)]
    allocations: Vec<AllocDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CcpDoc {
    id: String,
    #[serde(default)]
    vms: Vec<VmDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VmDoc {
    id: String,
    role: VmRole,
    cores: u64,
    ram_mb: u64,
    #[serde(default)]
    safety: bool,
    #[serde(default)]
    gpu_access: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct AppDoc {
    id: String,
    image: String,
    cpu_millicores: u64,
    ram_mb: u64,
    #[serde(default)]
    safety: bool,
    #[serde(default)]
    gpu: bool,
    #[serde(default = "default_redundancy")]
    redundancy: u32,
}

fn default_redundancy() -> u32 {
    1
}

#[derive(Debug, Serialize, Deserialize)]
struct AllocDoc {
    app: String,
    vm: String,
    #[serde(default)]
    replica: u32,
    #[serde(default)]
    pinned: bool,
    #[serde(default = "default_active")]
    active: bool,
}

fn default_active() -> bool {
    true
}

/// Parses and fully validates an instance-model document.
pub fn parse_instance_model(text: &str) -> Result<InstanceModel, ModelError> {
    let doc: ModelDoc = serde_json::from_str(text)
        .map_err(|e| ModelError::schema("$", e.to_string()))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(ModelError::schema(
            "schema_version",
            format!("unsupported schema version {:?}", doc.schema_version),
        ));
    }

    let mut model = InstanceModel {
        schema_version: doc.schema_version,
        ccps: Vec::new(),
        applications: Vec::new(),
        allocations: Vec::new(),
    };

    let mut vm_ids = BTreeSet::new();
    let mut ccp_ids = BTreeSet::new();
    for (ci, ccp) in doc.ccps.into_iter().enumerate() {
        if !ccp_ids.insert(ccp.id.clone()) {
            return Err(ModelError::integrity(
                format!("ccps[{ci}]"),
                format!("duplicate ccp id {:?}", ccp.id),
            ));
        }
        let mut vms = Vec::new();
        let mut service_count = 0usize;
        for (vi, vm) in ccp.vms.into_iter().enumerate() {
            let path = format!("ccps[{ci}].vms[{vi}]");
            if !vm_ids.insert(vm.id.clone()) {
                return Err(ModelError::integrity(
                    path,
                    format!("duplicate vm id {:?}", vm.id),
                ));
            }
            if vm.cores == 0 {
                return Err(ModelError::schema(path, "vm must have at least one core"));
            }
            if vm.role == VmRole::Service {
                service_count += 1;
            }
            vms.push(Vm {
                id: vm.id,
                ccp_id: ccp.id.clone(),
                role: vm.role,
                capacity: ResourceVector::new(
                    vm.cores * 1000,
                    vm.ram_mb,
                    if vm.gpu_access { 1 } else { 0 },
                ),
                safety: vm.safety,
                gpu_access: vm.gpu_access,
            });
        }
        if service_count != 1 {
            return Err(ModelError::integrity(
                format!("ccps[{ci}]"),
                format!(
                    "ccp {:?} must have exactly one service vm, found {service_count}",
                    ccp.id
                ),
            ));
        }
        model.ccps.push(Ccp { id: ccp.id, vms });
    }

    let mut app_ids = BTreeSet::new();
    for (ai, app) in doc.applications.into_iter().enumerate() {
        let path = format!("applications[{ai}]");
        if !app_ids.insert(app.id.clone()) {
            return Err(ModelError::integrity(
                path,
                format!("duplicate application id {:?}", app.id),
            ));
        }
        if app.redundancy == 0 {
            return Err(ModelError::schema(path, "redundancy must be >= 1"));
        }
        model.applications.push(Application {
            id: app.id,
            image_ref: app.image,
            demand: ResourceVector::new(
                app.cpu_millicores,
                app.ram_mb,
                if app.gpu { 1 } else { 0 },
            ),
            safety: app.safety,
            gpu: app.gpu,
            redundancy: app.redundancy,
        });
    }

    let mut alloc_keys = BTreeSet::new();
    for (li, alloc) in doc.allocations.into_iter().enumerate() {
        let path = format!("allocations[{li}]");
        if !app_ids.contains(&alloc.app) {
            return Err(ModelError::integrity(
                path,
                format!("allocation references unknown application {:?}", alloc.app),
            ));
        }
        if !vm_ids.contains(&alloc.vm) {
            return Err(ModelError::integrity(
                path,
                format!("allocation references unknown vm {:?}", alloc.vm),
            ));
        }
        if !alloc_keys.insert((alloc.app.clone(), alloc.replica)) {
            return Err(ModelError::integrity(
                path,
                format!(
                    "duplicate allocation for application {:?} replica {}",
                    alloc.app, alloc.replica
                ),
            ));
        }
        model.allocations.push(Allocation {
            app_id: alloc.app,
            vm_id: alloc.vm,
            replica_index: alloc.replica,
            pinned: alloc.pinned,
            active: alloc.active,
        });
    }

    for (li, alloc) in model.allocations.iter().enumerate() {
        let app = model.application(&alloc.app_id).expect("checked above");
        if alloc.replica_index >= app.redundancy {
            return Err(ModelError::integrity(
                format!("allocations[{li}]"),
                format!(
                    "replica index {} out of range for application {:?} with redundancy {}",
                    alloc.replica_index, alloc.app_id, app.redundancy
                ),
            ));
        }
    }
    for app in &model.applications {
        if app.redundancy > 1 {
            let allocs: Vec<_> = model.allocations_of(&app.id).collect();
            if allocs.len() == app.redundancy as usize {
                let actives = allocs.iter().filter(|a| a.active).count();
                if actives != 1 {
                    return Err(ModelError::integrity(
                        "allocations",
                        format!(
                            "application {:?} has {} active replicas, expected exactly 1",
                            app.id, actives
                        ),
                    ));
                }
            }
        }
    }

    model.normalize();
    Ok(model)
}

/// Serializes a model into its canonical document form.
///
/// Output bytes are deterministic for equal models, and a second
/// parse/serialize round trip is byte-identical.
pub fn serialize_instance_model(model: &InstanceModel) -> String {
    let mut model = model.clone();
    model.normalize();
    let doc = ModelDoc {
        schema_version: model.schema_version.clone(),
        ccps: model
            .ccps
            .iter()
            .map(|c| CcpDoc {
                id: c.id.clone(),
                vms: c
                    .vms
                    .iter()
                    .map(|v| VmDoc {
                        id: v.id.clone(),
                        role: v.role,
                        cores: v.capacity.cpu_millicores / 1000,
                        ram_mb: v.capacity.ram_mb,
                        safety: v.safety,
                        gpu_access: v.gpu_access,
                    })
                    .collect(),
            })
            .collect(),
        applications: model
            .applications
            .iter()
            .map(|a| AppDoc {
                id: a.id.clone(),
                image: a.image_ref.clone(),
                cpu_millicores: a.demand.cpu_millicores,
                ram_mb: a.demand.ram_mb,
                safety: a.safety,
                gpu: a.gpu,
                redundancy: a.redundancy,
            })
            .collect(),
        allocations: model
            .allocations
            .iter()
            .map(|l| AllocDoc {
                app: l.app_id.clone(),
                vm: l.vm_id.clone(),
                replica: l.replica_index,
                pinned: l.pinned,
                active: l.active,
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("document serialization");
    out.push('\n');
    out
}

/// True iff every application has redundancy-many allocations and, where
/// redundant, exactly one active replica.
pub fn is_complete(model: &InstanceModel) -> bool {
    model.applications.iter().all(|app| {
        let allocs: Vec<_> = model.allocations_of(&app.id).collect();
        if allocs.len() != app.redundancy as usize {
            return false;
        }
        if app.redundancy > 1 {
            allocs.iter().filter(|a| a.active).count() == 1
        } else {
            true
        }
    })
}

/// Returns a new model holding the union of allocations; the input is
/// unmodified.
pub fn merge_allocations(
    model: &InstanceModel,
    new_allocations: &[Allocation],
) -> Result<InstanceModel, ModelError> {
    let mut merged = model.clone();
    let mut keys: BTreeSet<(String, u32)> = merged
        .allocations
        .iter()
        .map(|a| (a.app_id.clone(), a.replica_index))
        .collect();
    for (i, alloc) in new_allocations.iter().enumerate() {
        let path = format!("new_allocations[{i}]");
        if model.application(&alloc.app_id).is_none() {
            return Err(ModelError::integrity(
                path,
                format!("unknown application {:?}", alloc.app_id),
            ));
        }
        if model.vm(&alloc.vm_id).is_none() {
            return Err(ModelError::integrity(
                path,
                format!("unknown vm {:?}", alloc.vm_id),
            ));
        }
        if !keys.insert((alloc.app_id.clone(), alloc.replica_index)) {
            return Err(ModelError::integrity(
                path,
                format!(
                    "allocation for application {:?} replica {} already present",
                    alloc.app_id, alloc.replica_index
                ),
            ));
        }
        merged.allocations.push(alloc.clone());
    }
    merged.normalize();
    Ok(merged)
}

// ---------------------------------------------------------------------------
// Constraint catalog
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Capacity,
    SafetySegregation,
    GpuAffinity,
    Pinning,
    RedundancyDistinctCcp,
    RequireVm,
    ForbidVm,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 7] = [
        ConstraintKind::Capacity,
        ConstraintKind::SafetySegregation,
        ConstraintKind::GpuAffinity,
        ConstraintKind::Pinning,
        ConstraintKind::RedundancyDistinctCcp,
        ConstraintKind::RequireVm,
        ConstraintKind::ForbidVm,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ConstraintKind::Capacity => "capacity",
            ConstraintKind::SafetySegregation => "safety_segregation",
            ConstraintKind::GpuAffinity => "gpu_affinity",
            ConstraintKind::Pinning => "pinning",
            ConstraintKind::RedundancyDistinctCcp => "redundancy_distinct_ccp",
            ConstraintKind::RequireVm => "require_vm",
            ConstraintKind::ForbidVm => "forbid_vm",
        }
    }
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type ConstraintParams = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub id: String,
    pub kind: ConstraintKind,
    #[serde(default)]
    pub params: ConstraintParams,
    #[serde(default)]
    pub mutable_at_runtime: bool,
}

impl Constraint {
    pub fn new(id: impl Into<String>, kind: ConstraintKind) -> Self {
        Constraint {
            id: id.into(),
            kind,
            params: ConstraintParams::new(),
            mutable_at_runtime: false,
        }
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.params.get(key).and_then(|v| v.as_str())
    }
}

/// Immutable base catalog plus a request-supplied additive overlay.
///
/// The overlay may only tighten: it adds constraints, never removes or
/// relaxes base ones.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSet {
    base: Vec<Constraint>,
    overlay: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new(base: Vec<Constraint>) -> Self {
        ConstraintSet {
            base,
            overlay: Vec::new(),
        }
    }

    /// The development-time catalog: one constraint of each built-in kind
    /// that needs no parameters.
    pub fn standard() -> Self {
        let kinds = [
            ConstraintKind::Capacity,
            ConstraintKind::SafetySegregation,
            ConstraintKind::GpuAffinity,
            ConstraintKind::Pinning,
            ConstraintKind::RedundancyDistinctCcp,
        ];
        ConstraintSet::new(
            kinds
                .iter()
                .map(|k| Constraint::new(k.name(), *k))
                .collect(),
        )
    }

    pub fn with_overlay(&self, overlay: Vec<Constraint>) -> Result<Self, ModelError> {
        for (i, c) in overlay.iter().enumerate() {
            if !c.mutable_at_runtime {
                return Err(ModelError::schema(
                    format!("constraints[{i}]"),
                    format!(
                        "overlay constraint {:?} must be mutable_at_runtime",
                        c.id
                    ),
                ));
            }
        }
        Ok(ConstraintSet {
            base: self.base.clone(),
            overlay,
        })
    }

    pub fn base(&self) -> &[Constraint] {
        &self.base
    }

    pub fn overlay(&self) -> &[Constraint] {
        &self.overlay
    }

    pub fn iter(&self) -> impl Iterator<Item = &Constraint> {
        self.base.iter().chain(self.overlay.iter())
    }

    pub fn kinds(&self) -> BTreeSet<ConstraintKind> {
        self.iter().map(|c| c.kind).collect()
    }

    /// Copy of this set with every constraint of one kind removed; used
    /// for single-kind relaxation probes, never exposed over the API.
    pub fn without_kind(&self, kind: ConstraintKind) -> ConstraintSet {
        ConstraintSet {
            base: self.base.iter().filter(|c| c.kind != kind).cloned().collect(),
            overlay: self
                .overlay
                .iter()
                .filter(|c| c.kind != kind)
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogDoc {
    constraints: Vec<Constraint>,
}

/// Parses a constraint catalog document and validates params per kind.
pub fn parse_constraints(text: &str) -> Result<Vec<Constraint>, ModelError> {
    let doc: CatalogDoc = serde_json::from_str(text)
        .map_err(|e| ModelError::schema("$", e.to_string()))?;
    let mut ids = BTreeSet::new();
    for (i, c) in doc.constraints.iter().enumerate() {
        let path = format!("constraints[{i}]");
        if !ids.insert(c.id.clone()) {
            return Err(ModelError::integrity(
                path,
                format!("duplicate constraint id {:?}", c.id),
            ));
        }
        validate_constraint_params(c).map_err(|msg| ModelError::schema(path, msg))?;
    }
    Ok(doc.constraints)
}

pub fn validate_constraint_params(c: &Constraint) -> Result<(), String> {
    match c.kind {
        ConstraintKind::RequireVm | ConstraintKind::ForbidVm => {
            for key in ["app_id", "vm_id"] {
                if c.param_str(key).is_none() {
                    return Err(format!(
                        "{} constraint requires string param {:?}",
                        c.kind, key
                    ));
                }
            }
            Ok(())
        }
        ConstraintKind::Pinning => {
            if let Some(v) = c.params.get("allocations") {
                let list = v
                    .as_array()
                    .ok_or_else(|| "pinning param \"allocations\" must be a list".to_string())?;
                for entry in list {
                    let obj = entry
                        .as_object()
                        .ok_or_else(|| "pinning baseline entry must be a map".to_string())?;
                    for key in ["app", "vm"] {
                        if !obj.get(key).map(|v| v.is_string()).unwrap_or(false) {
                            return Err(format!(
                                "pinning baseline entry missing string field {:?}",
                                key
                            ));
                        }
                    }
                }
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Serializes a catalog back to its document form.
pub fn serialize_constraints(constraints: &[Constraint]) -> String {
    let mut out = serde_json::to_string_pretty(&CatalogDoc {
        constraints: constraints.to_vec(),
    })
    .expect("catalog serialization");
    out.push('\n');
    out
}
