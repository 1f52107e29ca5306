//! Parse/serialize round-trip properties for instance models.

mod common;

use ivim_core::model::{
    is_complete, merge_allocations, parse_instance_model, serialize_instance_model, Allocation,
    VmRole,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

proptest! {
    /// Serializing and re-parsing an instance model is the identity, and
    /// the serialized form is a fixed point.
    #[test]
    fn serialize_parse_roundtrip(seed in any::<u64>()) {
        let mut rng = common::rng_for(seed);
        let model = common::random_instance(&mut rng);
        let text = serialize_instance_model(&model);
        let reparsed = parse_instance_model(&text).expect("serialized model must parse");
        prop_assert_eq!(&reparsed, &model);
        prop_assert_eq!(serialize_instance_model(&reparsed), text);
    }

    /// Merging the missing allocations into an unallocated model makes it
    /// complete, and merging never drops existing allocations.
    #[test]
    fn merge_completes_model(seed in any::<u64>()) {
        let mut rng = common::rng_for(seed);
        let model = common::random_instance(&mut rng);
        prop_assume!(!model.applications.is_empty());
        prop_assert!(!is_complete(&model));

        let user_vms: Vec<String> = model
            .vms()
            .filter(|v| v.role == VmRole::User)
            .map(|v| v.id.clone())
            .collect();
        let mut additions = Vec::new();
        for app in &model.applications {
            for replica in 0..app.redundancy {
                additions.push(Allocation {
                    app_id: app.id.clone(),
                    vm_id: user_vms.choose(&mut rng).unwrap().clone(),
                    replica_index: replica,
                    pinned: rng.gen_bool(0.5),
                    active: replica == 0,
                });
            }
        }
        let merged = merge_allocations(&model, &additions).expect("valid additions must merge");
        prop_assert!(is_complete(&merged));
        prop_assert_eq!(merged.allocations.len(), additions.len());

        // A second merge of the same slots is rejected: slots are unique.
        prop_assert!(merge_allocations(&merged, &additions[..1]).is_err());

        // Completed models round-trip too.
        let text = serialize_instance_model(&merged);
        prop_assert_eq!(parse_instance_model(&text).unwrap(), merged);
    }
}
