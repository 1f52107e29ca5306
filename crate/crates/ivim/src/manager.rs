//! The integration manager pipeline behind both API endpoints: verify,
//! optionally solve, generate the desired state, reconcile, and apply to
//! the simulated platform.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use ivim_core::model::{
    is_complete, parse_instance_model, serialize_instance_model, Constraint, ConstraintKind,
    ConstraintSet, InstanceModel,
};
use ivim_core::plangen::{generate_desired_state, reconcile, render_plan, ActionPlan};
use ivim_core::platform::{ApplyReport, PlatformState};
use ivim_core::solver::{
    apply_assignment, build_problem, diagnose_unsat, diagnose_unsat_model, solve, SolveStats,
    SolveStatus, SolverError, UnsatDiagnosis,
};
use ivim_core::verifier::{classify_request, verify, Disposition, VerificationReport};

#[derive(Debug)]
pub struct ApiError {
    pub status: u16,
    pub message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: 400,
            message: message.into(),
        }
    }

    fn forbidden(message: impl Into<String>) -> Self {
        ApiError {
            status: 403,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError {
            status: 500,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct IntegrationRequest {
    pub model: Value,
    #[serde(default)]
    pub constraints: Option<Value>,
    #[serde(default)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegrationResponse {
    pub disposition: Disposition,
    pub verification: VerificationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completed_model: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan_rendering: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub apply_report: Option<ApplyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve_stats: Option<SolveStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnosis: Option<UnsatDiagnosis>,
}

/// HTTP status plus response body; `plan` carries the structured action
/// plan for in-process callers (CLI, scenario runner, tests).
#[derive(Debug)]
pub struct Outcome {
    pub status: u16,
    pub response: IntegrationResponse,
    pub plan: Option<ActionPlan>,
}

impl Outcome {
    pub fn ok(&self) -> bool {
        self.status == 200
    }
}

pub struct Manager {
    base_constraints: ConstraintSet,
    platform: PlatformState,
}

impl Manager {
    pub fn new(topology: &InstanceModel) -> Manager {
        Manager {
            base_constraints: ConstraintSet::standard(),
            platform: PlatformState::init(topology),
        }
    }

    pub fn platform(&self) -> &PlatformState {
        &self.platform
    }

    pub fn snapshot(&self) -> String {
        self.platform.snapshot()
    }

    pub fn tick(&mut self) {
        self.platform.tick();
    }

    pub fn inject_failure(&mut self, ccp_id: &str) -> Result<(), ApiError> {
        self.platform
            .inject_failure(ccp_id)
            .map_err(|e| ApiError::bad_request(e.to_string()))
    }

    fn parse_request(
        &self,
        request: &IntegrationRequest,
    ) -> Result<(InstanceModel, ConstraintSet), ApiError> {
        let model_text = serde_json::to_string(&request.model)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let model = parse_instance_model(&model_text)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let overlay: Vec<Constraint> = match &request.constraints {
            None => Vec::new(),
            Some(value) => {
                let text = serde_json::to_string(value)
                    .map_err(|e| ApiError::bad_request(e.to_string()))?;
                ivim_core::model::parse_constraints(&text)
                    .map_err(|e| ApiError::bad_request(e.to_string()))?
            }
        };
        let constraints = self
            .base_constraints
            .with_overlay(overlay)
            .map_err(|e| ApiError::forbidden(e.to_string()))?;
        Ok((model, constraints))
    }

    /// The design-time endpoint: requires a complete, violation-free model
    /// and never invokes the solver.
    pub fn handle_configure(
        &mut self,
        request: &IntegrationRequest,
    ) -> Result<Outcome, ApiError> {
        let (model, constraints) = self.parse_request(request)?;
        let report = verify(&model, &constraints);
        let disposition = classify_request(&model, &report);
        if !report.clean() || !is_complete(&model) {
            return Ok(Outcome {
                status: 422,
                response: IntegrationResponse {
                    disposition,
                    verification: report,
                    completed_model: None,
                    plan_rendering: None,
                    apply_report: None,
                    solve_stats: None,
                    diagnosis: None,
                },
                plan: None,
            });
        }
        self.deploy(&model, report, Disposition::GeneratePlan, None, request.dry_run)
    }

    /// The online endpoint: verifies, solves the remaining allocation
    /// decisions (pinned ones stay fixed), then deploys.
    pub fn handle_optimize(
        &mut self,
        request: &IntegrationRequest,
    ) -> Result<Outcome, ApiError> {
        let (model, mut constraints) = self.parse_request(request)?;
        let report = verify(&model, &constraints);
        if !report.clean() {
            return Ok(Outcome {
                status: 422,
                response: IntegrationResponse {
                    disposition: Disposition::Reject,
                    verification: report,
                    completed_model: None,
                    plan_rendering: None,
                    apply_report: None,
                    solve_stats: None,
                    diagnosis: None,
                },
                plan: None,
            });
        }

        let unsat = |report: VerificationReport, diagnosis: UnsatDiagnosis| Outcome {
            status: 409,
            response: IntegrationResponse {
                disposition: Disposition::Reject,
                verification: report,
                completed_model: None,
                plan_rendering: None,
                apply_report: None,
                solve_stats: None,
                diagnosis: Some(diagnosis),
            },
            plan: None,
        };

        let problem = match build_problem(&model, &constraints) {
            Ok(problem) => problem,
            Err(SolverError::EmptyDomain { .. } | SolverError::PinnedOutsideDomain { .. }) => {
                let diagnosis = diagnose_unsat_model(&model, &constraints);
                return Ok(unsat(report, diagnosis));
            }
            Err(e) => return Err(ApiError::internal(e.to_string())),
        };
        let result = match solve(&problem) {
            Ok(result) => result,
            Err(e @ SolverError::Timeout { .. }) => {
                return Err(ApiError::internal(e.to_string()))
            }
            Err(e) => return Err(ApiError::internal(e.to_string())),
        };
        if result.status == SolveStatus::Unsat {
            return Ok(unsat(report, diagnose_unsat(&problem)));
        }

        let completed = apply_assignment(&problem, &result, &model);

        // re-check the solution, including the pinning baseline of the
        // request model
        let mut pinning = Constraint::new("pinning:request-baseline", ConstraintKind::Pinning);
        pinning.mutable_at_runtime = true;
        pinning.params.insert(
            "allocations".into(),
            Value::Array(
                model
                    .allocations
                    .iter()
                    .filter(|a| a.pinned)
                    .map(|a| {
                        serde_json::json!({
                            "app": a.app_id, "vm": a.vm_id, "replica": a.replica_index
                        })
                    })
                    .collect(),
            ),
        );
        let mut overlay = constraints.overlay().to_vec();
        overlay.push(pinning);
        constraints = self
            .base_constraints
            .with_overlay(overlay)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let final_report = verify(&completed, &constraints);
        if !final_report.clean() {
            return Err(ApiError::internal(format!(
                "solver produced a violating assignment: {:?}",
                final_report.violations
            )));
        }

        self.deploy(
            &completed,
            final_report,
            Disposition::Solve,
            Some(result.stats),
            request.dry_run,
        )
    }

    fn deploy(
        &mut self,
        model: &InstanceModel,
        report: VerificationReport,
        disposition: Disposition,
        solve_stats: Option<SolveStats>,
        dry_run: bool,
    ) -> Result<Outcome, ApiError> {
        let desired =
            generate_desired_state(model).map_err(|e| ApiError::internal(e.to_string()))?;
        let plan = reconcile(&desired, &self.platform)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let rendering = render_plan(&plan);
        let apply_report = if dry_run {
            None
        } else {
            // images are pushed to the registry out-of-band before the
            // request references them
            for app in &model.applications {
                self.platform.register_image(&app.image_ref);
            }
            Some(self.platform.apply(&plan))
        };
        let completed_doc: Value = serde_json::from_str(&serialize_instance_model(model))
            .map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(Outcome {
            status: 200,
            response: IntegrationResponse {
                disposition,
                verification: report,
                completed_model: Some(completed_doc),
                plan_rendering: Some(rendering),
                apply_report,
                solve_stats,
                diagnosis: None,
            },
            plan: Some(plan),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(model: Value, dry_run: bool) -> IntegrationRequest {
        IntegrationRequest {
            model,
            constraints: None,
            dry_run,
        }
    }

    fn poc_model(apps_and_allocs: &str) -> Value {
        serde_json::from_str(&format!(
            r#"{{
              "schema_version": "1",
              "ccps": [ {{ "id": "ccp0", "vms": [
                {{ "id": "svm", "role": "service", "cores": 2, "ram_mb": 4096 }},
                {{ "id": "uvm1", "role": "user", "cores": 4, "ram_mb": 8192, "safety": true, "gpu_access": true }},
                {{ "id": "uvm2", "role": "user", "cores": 2, "ram_mb": 4096, "gpu_access": true }}
              ] }} ],
              {apps_and_allocs}
            }}"#
        ))
        .unwrap()
    }

    fn manager() -> Manager {
        let topo = poc_model(r#""applications": [], "allocations": []"#);
        let model = parse_instance_model(&topo.to_string()).unwrap();
        Manager::new(&model)
    }

    #[test]
    fn configure_dry_run_previews_without_apply() {
        let mut mgr = manager();
        let model = poc_model(
            r#""applications": [
                 { "id": "slam", "image": "r/slam:1", "cpu_millicores": 800, "ram_mb": 1024, "safety": true }
               ],
               "allocations": [ { "app": "slam", "vm": "uvm1" } ]"#,
        );
        let outcome = mgr.handle_configure(&request(model, true)).unwrap();
        assert_eq!(outcome.status, 200);
        assert!(outcome.response.apply_report.is_none());
        assert!(outcome
            .response
            .plan_rendering
            .as_deref()
            .unwrap()
            .contains("+ workload slam on uvm1"));
        assert_eq!(mgr.platform().running_workloads(), 0);
    }

    #[test]
    fn configure_rejects_incomplete_model() {
        let mut mgr = manager();
        let model = poc_model(
            r#""applications": [
                 { "id": "slam", "image": "r/slam:1", "cpu_millicores": 800, "ram_mb": 1024, "safety": true }
               ],
               "allocations": []"#,
        );
        let outcome = mgr.handle_configure(&request(model, false)).unwrap();
        assert_eq!(outcome.status, 422);
        assert!(!outcome.response.verification.complete);
    }

    #[test]
    fn configure_rejects_capacity_violation() {
        let mut mgr = manager();
        let model = poc_model(
            r#""applications": [
                 { "id": "hog", "image": "r/hog:1", "cpu_millicores": 2500, "ram_mb": 512 }
               ],
               "allocations": [ { "app": "hog", "vm": "uvm2" } ]"#,
        );
        let outcome = mgr.handle_configure(&request(model, false)).unwrap();
        assert_eq!(outcome.status, 422);
        assert!(outcome
            .response
            .verification
            .violations
            .iter()
            .any(|v| v.constraint_id == "capacity"));
    }

    #[test]
    fn optimize_places_and_deploys() {
        let mut mgr = manager();
        let model = poc_model(
            r#""applications": [
                 { "id": "slam", "image": "r/slam:1", "cpu_millicores": 800, "ram_mb": 1024, "safety": true },
                 { "id": "rviz", "image": "r/rviz:1", "cpu_millicores": 500, "ram_mb": 1024 }
               ],
               "allocations": []"#,
        );
        let outcome = mgr.handle_optimize(&request(model, false)).unwrap();
        assert_eq!(outcome.status, 200);
        assert!(outcome.response.apply_report.as_ref().unwrap().all_ok());
        assert_eq!(mgr.platform().running_workloads(), 2);
        let completed = outcome.response.completed_model.unwrap();
        let allocs = completed["allocations"].as_array().unwrap();
        assert_eq!(allocs.len(), 2);
    }

    #[test]
    fn optimize_unsat_returns_diagnosis() {
        let mut mgr = manager();
        let model = poc_model(
            r#""applications": [
                 { "id": "huge", "image": "r/huge:1", "cpu_millicores": 9000, "ram_mb": 512 }
               ],
               "allocations": []"#,
        );
        let outcome = mgr.handle_optimize(&request(model, false)).unwrap();
        assert_eq!(outcome.status, 409);
        let diagnosis = outcome.response.diagnosis.unwrap();
        assert!(!diagnosis.relaxation_hints.is_empty());
    }

    #[test]
    fn overlay_with_immutable_constraint_is_forbidden() {
        let mut mgr = manager();
        let model = poc_model(r#""applications": [], "allocations": []"#);
        let req = IntegrationRequest {
            model,
            constraints: Some(serde_json::json!({
                "constraints": [
                    { "id": "x", "kind": "safety_segregation", "params": {}, "mutable_at_runtime": false }
                ]
            })),
            dry_run: false,
        };
        let err = mgr.handle_optimize(&req).unwrap_err();
        assert_eq!(err.status, 403);
    }

    #[test]
    fn malformed_model_is_bad_request() {
        let mut mgr = manager();
        let req = request(serde_json::json!({"schema_version": "999"}), false);
        let err = mgr.handle_configure(&req).unwrap_err();
        assert_eq!(err.status, 400);
    }

    #[test]
    fn completed_model_re_verifies_via_configure() {
        let mut mgr = manager();
        let model = poc_model(
            r#""applications": [
                 { "id": "slam", "image": "r/slam:1", "cpu_millicores": 800, "ram_mb": 1024, "safety": true },
                 { "id": "rviz", "image": "r/rviz:1", "cpu_millicores": 500, "ram_mb": 1024 }
               ],
               "allocations": []"#,
        );
        let outcome = mgr.handle_optimize(&request(model, true)).unwrap();
        let completed = outcome.response.completed_model.unwrap();
        let second = mgr.handle_configure(&request(completed, true)).unwrap();
        assert_eq!(second.status, 200);
        assert!(second.response.verification.clean());
    }
}
