//! Seeded random instance generation shared by the integration tests.
//!
//! Instances are kept small enough (at most 6 workload slots and 3 user
//! VMs) for the brute-force oracle to enumerate exhaustively.

use ivim_core::model::{parse_instance_model, InstanceModel};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random topology: one or two CCPs, each with a service VM and between
/// them at most three user VMs with mixed safety/GPU attributes.
pub fn random_topology(rng: &mut ChaCha8Rng) -> Vec<Value> {
    let n_ccps = if rng.gen_bool(0.3) { 2 } else { 1 };
    // Keep the total VM count within the brute-force oracle's guard.
    let mut user_budget = if n_ccps == 2 { 2usize } else { 3 };
    let mut ccps = Vec::new();
    for c in 0..n_ccps {
        let mut vms = vec![json!({
            "id": format!("c{c}s"),
            "role": "service",
            "cores": 2,
            "ram_mb": 2048,
            "safety": false,
            "gpu_access": false,
        })];
        let remaining_ccps = n_ccps - c - 1;
        let max_here = user_budget - remaining_ccps;
        let n_user = rng.gen_range(1..=max_here.max(1));
        user_budget -= n_user;
        for u in 0..n_user {
            vms.push(json!({
                "id": format!("c{c}u{u}"),
                "role": "user",
                "cores": rng.gen_range(1..=4),
                "ram_mb": 1024 * rng.gen_range(1..=8),
                "safety": rng.gen_bool(0.5),
                "gpu_access": rng.gen_bool(0.4),
            }));
        }
        ccps.push(json!({ "id": format!("c{c}"), "vms": vms }));
    }
    ccps
}

/// Random applications whose replica slots sum to at most `max_slots`.
/// Redundant applications only appear on two-CCP topologies so that the
/// distinct-CCP rule is at least potentially satisfiable.
pub fn random_applications(rng: &mut ChaCha8Rng, n_ccps: usize, max_slots: usize) -> Vec<Value> {
    let mut apps = Vec::new();
    let mut slots = 0usize;
    let n_apps = rng.gen_range(1..=4);
    for a in 0..n_apps {
        let redundancy = if n_ccps > 1 && rng.gen_bool(0.3) { 2 } else { 1 };
        if slots + redundancy > max_slots {
            break;
        }
        slots += redundancy;
        apps.push(json!({
            "id": format!("app{a}"),
            "image": format!("registry.local/app{a}:1.0"),
            "cpu_millicores": 50 * rng.gen_range(2..=24),
            "ram_mb": 128 * rng.gen_range(1..=16),
            "safety": rng.gen_bool(0.4),
            "gpu": rng.gen_bool(0.3),
            "redundancy": redundancy,
        }));
    }
    apps
}

/// A random unallocated instance: topology plus applications, no
/// allocations. May be satisfiable or not; callers decide what to do with
/// each case.
pub fn random_instance(rng: &mut ChaCha8Rng) -> InstanceModel {
    let ccps = random_topology(rng);
    let n_ccps = ccps.len();
    let apps = random_applications(rng, n_ccps, 6);
    let doc = json!({
        "schema_version": "1",
        "ccps": ccps,
        "applications": apps,
        "allocations": [],
    });
    parse_instance_model(&doc.to_string()).expect("generated instance must parse")
}
