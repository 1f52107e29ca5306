//! Acceptance suite. Each test covers one criterion end to end and prints
//! a single PASS/FAIL line (run with `--nocapture` to see them on
//! success).

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use ivim::api::router;
use ivim::manager::{IntegrationRequest, Manager};
use ivim::scenario::run_scenario;
use ivim_core::model::{
    parse_instance_model, Application, ConstraintSet, ResourceVector,
};
use ivim_core::plangen::{generate_desired_state, reconcile};
use ivim_core::platform::{PlatformState, WorkloadPhase};
use ivim_core::smtlib::{assertions_hold, validate_script};
use ivim_core::solver::{
    apply_assignment, assignment_valuation, brute_force_oracle, build_problem, export_smtlib,
    solve, SolveStatus,
};
use ivim_core::verifier::verify;
use rand::Rng;
use serde_json::{json, Value};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn criterion(label: &str, body: impl FnOnce()) {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(()) => println!("ACCEPTANCE {label}: PASS"),
        Err(payload) => {
            println!("ACCEPTANCE {label}: FAIL");
            resume_unwind(payload);
        }
    }
}

/// Criterion 1: the two-step demonstrator scenario ends with all eight
/// workloads running, and the incremental step touches nothing that was
/// already deployed.
#[test]
fn criterion_1_two_step_scenario() {
    criterion("1 two-step scenario reproduction", || {
        let started = Instant::now();
        let outcome = run_scenario(&fixture_dir().join("poc_scenario.json")).unwrap();
        assert!(outcome.all_ok(), "scenario steps failed: {:?}", outcome.steps);
        assert_eq!(outcome.manager.platform().running_workloads(), 8);

        let step2 = outcome.steps[1].plan.as_ref().expect("step 2 plan");
        assert_eq!(step2.count("PullImage"), 2, "step 2 image pulls");
        assert_eq!(step2.count("StartWorkload"), 2, "step 2 workload starts");
        assert_eq!(step2.count("StopWorkload"), 0, "step 2 must not stop workloads");
        assert_eq!(step2.count("StopVm"), 0, "step 2 must not stop VMs");
        assert_eq!(step2.count("PromoteActive"), 0, "step 2 must not promote");
        assert_eq!(step2.actions.len(), 4, "step 2 plan has exactly 4 actions");

        assert!(
            started.elapsed() < Duration::from_secs(5),
            "scenario took {:?}",
            started.elapsed()
        );
    });
}

/// Criterion 2: on 200 seeded small instances the branch-and-bound solver
/// and exhaustive enumeration agree, and Sat assignments verify clean.
#[test]
fn criterion_2_solver_oracle_equivalence() {
    criterion("2 solver-oracle equivalence (200 instances)", || {
        let started = Instant::now();
        let constraints = ConstraintSet::standard();
        let mut compared = 0;
        let mut seed = 0u64;
        while compared < 200 {
            assert!(seed < 2000, "generator exhausted after {compared} instances");
            let mut rng = common::rng_for(seed);
            seed += 1;
            let model = common::random_instance(&mut rng);
            let Ok(problem) = build_problem(&model, &constraints) else {
                continue;
            };
            let got = solve(&problem).unwrap();
            let want = brute_force_oracle(&problem).unwrap();
            assert_eq!(got.status, want.status, "seed {}", seed - 1);
            assert_eq!(got.objective_value, want.objective_value, "seed {}", seed - 1);
            if got.status == SolveStatus::Sat {
                let completed = apply_assignment(&problem, &got, &model);
                let report = verify(&completed, &constraints);
                assert!(
                    report.clean() && report.complete,
                    "seed {}: {:?}",
                    seed - 1,
                    report.violations
                );
            }
            compared += 1;
        }
        assert!(
            started.elapsed() < Duration::from_secs(30),
            "took {:?}",
            started.elapsed()
        );
    });
}

/// Criterion 3: on 50 seeded two-phase instances the second solve never
/// moves a pinned phase-one placement.
#[test]
fn criterion_3_pinning_preservation() {
    criterion("3 pinning preservation (50 two-phase instances)", || {
        let constraints = ConstraintSet::standard();
        let mut exercised = 0;
        let mut seed = 0u64;
        while exercised < 50 {
            assert!(seed < 3000, "generator exhausted after {exercised} instances");
            let mut rng = common::rng_for(seed);
            seed += 1;
            let model = common::random_instance(&mut rng);
            let Ok(problem) = build_problem(&model, &constraints) else {
                continue;
            };
            let first = solve(&problem).unwrap();
            if first.status != SolveStatus::Sat || first.assignment.is_empty() {
                continue;
            }

            let mut phase_two = apply_assignment(&problem, &first, &model);
            for alloc in &mut phase_two.allocations {
                alloc.pinned = true;
            }
            let frozen: Vec<(String, u32, String)> = phase_two
                .allocations
                .iter()
                .map(|a| (a.app_id.clone(), a.replica_index, a.vm_id.clone()))
                .collect();
            for extra in 0..rng.gen_range(1..=3) {
                phase_two.applications.push(Application {
                    id: format!("extra{extra}"),
                    image_ref: format!("registry.local/extra{extra}:1.0"),
                    demand: ResourceVector::new(
                        50 * rng.gen_range(2..=10),
                        128 * rng.gen_range(1..=8),
                        0,
                    ),
                    safety: rng.gen_bool(0.4),
                    gpu: false,
                    redundancy: 1,
                });
            }
            phase_two.normalize();

            let Ok(problem_two) = build_problem(&phase_two, &constraints) else {
                continue;
            };
            let second = solve(&problem_two).unwrap();
            if second.status != SolveStatus::Sat {
                continue;
            }
            for (app_id, replica, vm_id) in &frozen {
                let slot = problem_two.slot_index(app_id, *replica).unwrap();
                assert_eq!(
                    second.assignment.get(&slot),
                    Some(vm_id),
                    "seed {}: pinned slot {app_id}#{replica} moved",
                    seed - 1
                );
            }
            exercised += 1;
        }
    });
}

/// Criterion 4: applying a reconciliation plan reaches the desired state
/// and a second reconcile is empty, on 100 seeded pairs.
#[test]
fn criterion_4_reconcile_convergence() {
    criterion("4 reconcile convergence (100 pairs)", || {
        let constraints = ConstraintSet::standard();
        let mut converged = 0;
        let mut seed = 0u64;
        while converged < 100 {
            assert!(seed < 3000, "generator exhausted after {converged} pairs");
            let mut rng = common::rng_for(seed);
            seed += 1;
            let model = common::random_instance(&mut rng);
            let Ok(problem) = build_problem(&model, &constraints) else {
                continue;
            };
            let result = solve(&problem).unwrap();
            if result.status != SolveStatus::Sat {
                continue;
            }
            let completed = apply_assignment(&problem, &result, &model);
            let desired = generate_desired_state(&completed).unwrap();

            let mut state = PlatformState::init(&completed);
            let plan = reconcile(&desired, &state).unwrap();
            let report = state.apply(&plan);
            assert!(report.all_ok(), "seed {}: {:?}", seed - 1, report.outcomes);

            // The reached state carries exactly the desired workloads.
            let mut reached: Vec<(String, u32, String)> = state
                .workloads()
                .filter(|(_, _, w)| w.phase == WorkloadPhase::Running)
                .map(|(_, vm, w)| (w.app_id.clone(), w.replica_index, vm.vm_id.clone()))
                .collect();
            reached.sort();
            let mut wanted: Vec<(String, u32, String)> = desired
                .workloads
                .iter()
                .map(|w| (w.app_id.clone(), w.replica_index, w.vm_id.clone()))
                .collect();
            wanted.sort();
            assert_eq!(reached, wanted, "seed {}: state does not match desired", seed - 1);

            let again = reconcile(&desired, &state).unwrap();
            assert!(again.is_empty(), "seed {}: second plan not empty", seed - 1);
            converged += 1;
        }
    });
}

/// Criterion 5: killing the CCP hosting the active replica promotes the
/// standby on the surviving CCP, and exactly one replica is active after
/// every tick.
#[test]
fn criterion_5_redundancy_failover() {
    criterion("5 redundant failover", || {
        let dir = fixture_dir();
        let topology_text = std::fs::read_to_string(dir.join("redundant_topology.json")).unwrap();
        let topology = parse_instance_model(&topology_text).unwrap();
        let mut manager = Manager::new(&topology);

        let model: Value = serde_json::from_str(
            &std::fs::read_to_string(dir.join("redundant_model.json")).unwrap(),
        )
        .unwrap();
        let outcome = manager
            .handle_optimize(&IntegrationRequest {
                model,
                constraints: None,
                dry_run: false,
            })
            .unwrap();
        assert_eq!(outcome.status, 200);

        let active_replicas = |state: &PlatformState| -> Vec<(String, u32)> {
            state
                .workloads()
                .filter(|(_, _, w)| w.active && w.phase == WorkloadPhase::Running)
                .map(|(ccp, _, w)| (ccp.id.clone(), w.replica_index))
                .collect()
        };

        // Both replicas run on distinct CCPs, exactly one active.
        assert_eq!(manager.platform().running_workloads(), 2);
        let before = active_replicas(manager.platform());
        assert_eq!(before.len(), 1, "exactly one active replica before failure");
        let active_ccp = before[0].0.clone();
        let surviving = if active_ccp == "ccp0" { "ccp1" } else { "ccp0" };

        manager.inject_failure(&active_ccp).unwrap();
        manager.tick();

        let after = active_replicas(manager.platform());
        assert_eq!(after.len(), 1, "exactly one active replica after failover");
        assert_eq!(after[0].0, surviving, "active replica is on the surviving CCP");

        // The single-active invariant holds under further ticks.
        for _ in 0..5 {
            manager.tick();
            assert_eq!(active_replicas(manager.platform()).len(), 1);
        }
    });
}

/// Criterion 6: exported scripts for 20 seeded instances are grammar-valid
/// and accept the internal assignment; an external solver cross-checks the
/// status when one is installed.
#[test]
fn criterion_6_smt_export_validity() {
    criterion("6 SMT export validity (20 instances)", || {
        let constraints = ConstraintSet::standard();
        let z3 = Command::new("z3")
            .arg("--version")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false);
        if !z3 {
            println!("  note: z3 not installed, external cross-check skipped");
        }

        let mut exported = 0;
        let mut seed = 0u64;
        while exported < 20 {
            assert!(seed < 1000, "generator exhausted after {exported} exports");
            let mut rng = common::rng_for(seed);
            seed += 1;
            let model = common::random_instance(&mut rng);
            let Ok(problem) = build_problem(&model, &constraints) else {
                continue;
            };
            let script = export_smtlib(&problem);
            validate_script(&script)
                .unwrap_or_else(|e| panic!("seed {}: invalid script: {e}", seed - 1));

            let result = solve(&problem).unwrap();
            if result.status == SolveStatus::Sat {
                let env: BTreeMap<String, i64> = assignment_valuation(&problem, &result);
                assert!(
                    assertions_hold(&script, &env).unwrap(),
                    "seed {}: internal assignment rejected by export",
                    seed - 1
                );
            }

            if z3 {
                let file = tempfile::Builder::new()
                    .suffix(".smt2")
                    .tempfile()
                    .unwrap();
                std::fs::write(file.path(), &script).unwrap();
                let out = Command::new("z3").arg(file.path()).output().unwrap();
                let verdict = String::from_utf8_lossy(&out.stdout);
                let expected = match result.status {
                    SolveStatus::Sat => "sat",
                    SolveStatus::Unsat => "unsat",
                };
                assert_eq!(
                    verdict.trim(),
                    expected,
                    "seed {}: external solver disagrees",
                    seed - 1
                );
            }
            exported += 1;
        }
    });
}

/// Criterion 7: the HTTP contract, end to end against a live server.
#[test]
fn criterion_7_api_contract() {
    criterion("7 API contract", || {
        let dir = fixture_dir();
        let topology_text = std::fs::read_to_string(dir.join("poc_topology.json")).unwrap();
        let topology = parse_instance_model(&topology_text).unwrap();
        let manager = Arc::new(Mutex::new(Manager::new(&topology)));

        let runtime = tokio::runtime::Runtime::new().unwrap();
        let listener = runtime
            .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
            .unwrap();
        let addr = listener.local_addr().unwrap();
        let app = router(manager, true);
        runtime.spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });

        let base = format!("http://{addr}/api/v1");
        let client = reqwest::blocking::Client::new();
        let running_count = |body: &Value| -> usize {
            body["state"]["ccps"]
                .as_array()
                .unwrap()
                .iter()
                .flat_map(|c| c["vms"].as_array().unwrap())
                .flat_map(|v| v["workloads"].as_array().unwrap())
                .filter(|w| w["phase"] == "running")
                .count()
        };

        // Step 1: six applications, no allocations yet.
        let step1: Value = serde_json::from_str(
            &std::fs::read_to_string(dir.join("poc_step1.json")).unwrap(),
        )
        .unwrap();
        let resp = client
            .post(format!("{base}/optimize"))
            .json(&json!({ "model": step1 }))
            .send()
            .unwrap();
        assert_eq!(resp.status().as_u16(), 200, "step 1 optimize");
        let state: Value = client
            .get(format!("{base}/state"))
            .send()
            .unwrap()
            .json()
            .unwrap();
        assert_eq!(running_count(&state), 6, "six workloads after step 1");

        // Step 2: two more applications, previous placements pinned.
        let step2: Value = serde_json::from_str(
            &std::fs::read_to_string(dir.join("poc_step2.json")).unwrap(),
        )
        .unwrap();
        let resp = client
            .post(format!("{base}/optimize"))
            .json(&json!({ "model": step2 }))
            .send()
            .unwrap();
        assert_eq!(resp.status().as_u16(), 200, "step 2 optimize");
        let state: Value = client
            .get(format!("{base}/state"))
            .send()
            .unwrap()
            .json()
            .unwrap();
        assert_eq!(running_count(&state), 8, "eight workloads after step 2");

        // A complete model that overloads uvm2 is rejected with the
        // capacity violation named.
        let mut bad: Value = serde_json::from_str(&topology_text).unwrap();
        bad["applications"] = json!([{
            "id": "hog",
            "image": "registry.local/hog:1.0",
            "cpu_millicores": 9000,
            "ram_mb": 512,
            "safety": false,
            "gpu": false,
        }]);
        bad["allocations"] = json!([{ "app": "hog", "vm": "uvm2" }]);
        let resp = client
            .post(format!("{base}/configure"))
            .json(&json!({ "model": bad }))
            .send()
            .unwrap();
        assert_eq!(resp.status().as_u16(), 422, "overloaded configure rejected");
        let body: Value = resp.json().unwrap();
        let violations = body["verification"]["violations"].as_array().unwrap();
        assert!(
            violations.iter().any(|v| v["constraint"] == "capacity"),
            "capacity violation named in {body}"
        );
    });
}
