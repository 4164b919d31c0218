mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use depthfirst::stack::{auto_stack, auto_stack_with_capacity, explicit_plan, StackPlan};
use depthfirst::workload::{weight_size_bits, Layer, LayerId, LayerKind, WorkloadGraph};

fn ids(plan: &StackPlan) -> Vec<Vec<LayerId>> {
    plan.stacks.iter().map(|s| s.layers.clone()).collect()
}

#[test]
fn fsrcnn_fuses_into_one_stack() {
    let g = common::fsrcnn();
    let plan = auto_stack(&g, &common::hw("meta_proto_df"));
    assert_eq!(plan.len(), 1);
    assert_eq!(plan.stacks[0].layers.len(), g.layers().len());
}

/// 0 -> 1 -> {2, 3} -> 4 (add) -> 5 with a heavy branch region.
fn heavy_branch() -> WorkloadGraph {
    WorkloadGraph::new(vec![
        Layer::conv(0, 8, 3, 16, 16, 3, 3).with_pad([1; 4]),
        Layer::conv(1, 16, 8, 16, 16, 1, 1).with_preds(&[0]),
        Layer::conv(2, 16, 16, 16, 16, 3, 3).with_pad([1; 4]).with_preds(&[1]),
        Layer::conv(3, 16, 16, 16, 16, 3, 3).with_pad([1; 4]).with_preds(&[1]),
        Layer::conv(4, 16, 16, 16, 16, 1, 1)
            .with_kind(LayerKind::ElementwiseAdd)
            .with_preds(&[2, 3]),
        Layer::conv(5, 4, 16, 16, 16, 1, 1).with_preds(&[4]),
    ])
    .unwrap()
}

#[test]
fn oversized_branch_region_splits() {
    let g = heavy_branch();
    let w = |id| weight_size_bits(g.layer(id));
    // the head fits, the branch region (2, 3, 4) alone does not
    let cap = w(0) + w(1) + w(5);
    assert!(w(2) + w(3) > cap);
    let plan = auto_stack_with_capacity(&g, cap);
    assert_eq!(ids(&plan), vec![vec![0, 1], vec![2], vec![3], vec![4], vec![5]]);
}

#[test]
fn single_layer_and_whole_plans() {
    let g = heavy_branch();
    let sl = StackPlan::single_layer(&g);
    assert_eq!(sl.len(), g.layers().len());
    assert!(sl.stacks.iter().all(|s| s.layers.len() == 1));
    let whole = StackPlan::whole(&g);
    assert_eq!(whole.len(), 1);
    assert_eq!(whole.stacks[0].output(), g.final_layer().id);
}

#[test]
fn explicit_plan_rejects_bad_partitions() {
    let g = heavy_branch();
    // layer 5 missing
    assert!(explicit_plan(&g, vec![vec![0, 1, 2, 3, 4]]).is_err());
    // layer 2 twice
    assert!(explicit_plan(&g, vec![vec![0, 1, 2], vec![2, 3, 4, 5]]).is_err());
    // a stack with two outputs (2 and 3 both leave it)
    assert!(explicit_plan(&g, vec![vec![0, 1], vec![2, 3], vec![4, 5]]).is_err());
    explicit_plan(&g, vec![vec![0, 1], vec![2], vec![3], vec![4, 5]]).unwrap();
}

proptest! {
    #[test]
    fn auto_stack_partitions_and_validates(g in common::dag(), cap in 0u64..2048) {
        let plan = auto_stack_with_capacity(&g, cap);
        let mut seen = BTreeSet::new();
        for s in &plan.stacks {
            for id in &s.layers {
                prop_assert!(seen.insert(*id), "layer {id} in two stacks");
            }
        }
        let all: BTreeSet<LayerId> = g.layers().iter().map(|l| l.id).collect();
        prop_assert_eq!(seen, all);
        prop_assert!(explicit_plan(&g, ids(&plan)).is_ok());
    }

    #[test]
    fn more_weight_capacity_never_adds_stacks(g in common::dag(), a in 0u64..2048, b in 0u64..2048) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(auto_stack_with_capacity(&g, hi).len() <= auto_stack_with_capacity(&g, lo).len());
    }
}
