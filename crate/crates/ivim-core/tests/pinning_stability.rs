//! Two-phase integration: placements pinned after a first solve survive a
//! second solve that introduces new applications.

mod common;

use ivim_core::model::{Application, ConstraintSet, ResourceVector};
use ivim_core::solver::{apply_assignment, build_problem, solve, SolveStatus};
use rand::Rng;

#[test]
fn pinned_allocations_survive_incremental_solves() {
    let constraints = ConstraintSet::standard();
    let mut exercised = 0;
    for seed in 0..250u64 {
        let mut rng = common::rng_for(seed);
        let model = common::random_instance(&mut rng);
        let Ok(problem) = build_problem(&model, &constraints) else {
            continue;
        };
        let first = solve(&problem).unwrap();
        if first.status != SolveStatus::Sat || first.assignment.is_empty() {
            continue;
        }

        // Freeze phase one, then ask for more.
        let mut phase_two = apply_assignment(&problem, &first, &model);
        for alloc in &mut phase_two.allocations {
            alloc.pinned = true;
        }
        let frozen: Vec<(String, u32, String)> = phase_two
            .allocations
            .iter()
            .map(|a| (a.app_id.clone(), a.replica_index, a.vm_id.clone()))
            .collect();
        for extra in 0..rng.gen_range(1..=2) {
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
            // Adding load may make the instance infeasible; that is not a
            // pinning failure.
            continue;
        }
        for (app_id, replica, vm_id) in &frozen {
            let slot = problem_two.slot_index(app_id, *replica).unwrap();
            assert_eq!(
                second.assignment.get(&slot),
                Some(vm_id),
                "seed {seed}: pinned slot {app_id}#{replica} moved"
            );
        }
        exercised += 1;
    }
    assert!(exercised >= 30, "only {exercised} two-phase instances exercised");
}
