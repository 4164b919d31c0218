mod common;

use proptest::prelude::*;

use depthfirst::allocation::{derive_capped_accelerator, place, DataDemand};
use depthfirst::copy::{copy_actions, price};
use depthfirst::dse::{best_row, DfStrategy, Evaluator, SweepGrid, SweepSettings};
use depthfirst::mapper::{search_mapping, LayerInstance, OptimizationTarget};
use depthfirst::stack::{explicit_plan, StackPlan};
use depthfirst::tiling::{OverlapMode, StackGeometry, Tiling};
use depthfirst::workload::{Layer, WorkloadGraph};

fn small_net() -> WorkloadGraph {
    WorkloadGraph::new(vec![
        Layer::conv(0, 8, 3, 32, 32, 3, 3).with_pad([1; 4]),
        Layer::conv(1, 8, 8, 32, 32, 3, 3).with_pad([1; 4]).with_preds(&[0]),
        Layer::conv(2, 4, 8, 32, 32, 1, 1).with_preds(&[1]),
    ])
    .unwrap()
}

#[test]
fn single_layer_costs_at_least_layer_by_layer() {
    let g = common::fsrcnn();
    for name in ["meta_proto_df", "meta_proto", "tpu_like_df", "edge_tpu_like_df", "ascend_like_df", "tesla_npu_like_df"] {
        let eval = Evaluator::new(g.clone(), common::hw(name));
        let lbl = eval.evaluate(&DfStrategy::layer_by_layer(&g)).unwrap();
        let sl = eval.evaluate(&DfStrategy::single_layer(&g, u64::MAX, u64::MAX, OverlapMode::FullyRecompute)).unwrap();
        assert!(sl.energy_pj >= lbl.energy_pj, "{name}: SL {} < LBL {}", sl.energy_pj, lbl.energy_pj);
        assert_eq!(sl.mac_count, lbl.mac_count);
        // each stack is clamped to a single full-map tile
        assert!(sl.stacks.iter().all(|s| s.tile_count == 1));
    }
}

#[test]
fn per_tile_evaluation_matches_tile_types() {
    let g = small_net();
    let acc = common::hw("meta_proto_df");
    let eval = Evaluator::new(g.clone(), acc.clone());
    let plan = StackPlan::whole(&g);
    for mode in OverlapMode::ALL {
        let r = eval.evaluate(&DfStrategy::uniform(plan.clone(), 8, 12, mode).with_lpf_limit(6)).unwrap();
        let t = Tiling::new(StackGeometry::new(&g, &plan.stacks[0]), mode, 8, 12).unwrap();
        let (mut energy, mut macs, mut latency) = (0.0, 0u64, 0u64);
        for row in 0..t.grid.rows.len() {
            for col in 0..t.grid.columns.len() {
                let tile = t.tile_attr(row, col);
                let d = DataDemand::new(&t.geometry, &tile);
                let p = place(&acc, &t.geometry, &tile, &d);
                let copies = price(&acc, copy_actions(&acc, &t.geometry, &tile, &p));
                energy += copies.energy_pj;
                latency += copies.latency_cycles;
                for (i, sl) in t.geometry.layers.iter().enumerate() {
                    let reg = tile.maps[sl.output_map].compute;
                    if reg.is_empty() {
                        continue;
                    }
                    let req = tile.required[i][0];
                    let inst = LayerInstance::new(&sl.layer, reg.width(), reg.height(), 8).with_input(req.width(), req.height());
                    let capped = derive_capped_accelerator(&acc, &p, &d, i).unwrap();
                    let m = search_mapping(&inst, &capped, 6, OptimizationTarget::Energy).unwrap();
                    energy += m.cost.energy_pj;
                    macs += m.cost.mac_count;
                    latency += m.cost.latency_cycles;
                }
            }
        }
        assert_eq!(r.mac_count, macs, "{mode}");
        assert_eq!(r.latency_cycles, latency, "{mode}");
        assert!((r.energy_pj - energy).abs() <= 1e-9 * energy, "{mode}: {} vs {energy}", r.energy_pj);
    }
}

#[test]
fn empty_grid_is_an_error() {
    let eval = Evaluator::new(small_net(), common::hw("meta_proto_df"));
    let grid = SweepGrid { tx: vec![], ty: vec![4], modes: OverlapMode::ALL.to_vec() };
    assert!(eval.sweep(&eval.auto_plan(), &grid, SweepSettings::default()).is_err());
}

#[test]
fn single_candidate_is_returned() {
    let eval = Evaluator::new(small_net(), common::hw("meta_proto_df"));
    let grid = SweepGrid { tx: vec![8], ty: vec![16], modes: vec![OverlapMode::HCachedVRecompute] };
    let settings = SweepSettings { lpf_limit: 6, ..SweepSettings::default() };
    let (s, r) = eval.best_combination(&eval.auto_plan(), &grid, settings).unwrap();
    let direct = eval
        .evaluate(&DfStrategy::uniform(eval.auto_plan(), 8, 16, OverlapMode::HCachedVRecompute).with_lpf_limit(6))
        .unwrap();
    assert_eq!(s.per_stack, direct_strategies(&eval));
    assert_eq!(r.to_json(), direct.to_json());
}

fn direct_strategies(eval: &Evaluator) -> Vec<depthfirst::dse::StackStrategy> {
    DfStrategy::uniform(eval.auto_plan(), 8, 16, OverlapMode::HCachedVRecompute).per_stack
}

#[test]
fn reference_grid_has_108_points() {
    assert_eq!(SweepGrid::reference().points().len(), 108);
}

#[test]
fn target_changes_mappings_not_feasibility() {
    let eval = Evaluator::new(small_net(), common::hw("meta_proto_df"));
    let grid = SweepGrid { tx: vec![1, 8, 32], ty: vec![4, 32], modes: OverlapMode::ALL.to_vec() };
    let plan = eval.auto_plan();
    let run = |target| {
        let s = SweepSettings { target, lpf_limit: 6, threads: 1 };
        eval.sweep(&plan, &grid, s).unwrap()
    };
    let (by_energy, by_latency) = (run(OptimizationTarget::Energy), run(OptimizationTarget::Latency));
    for (e, l) in by_energy.iter().zip(&by_latency) {
        let (e, l) = (e.result.as_ref().unwrap(), l.result.as_ref().unwrap());
        assert!(e.energy_pj <= l.energy_pj);
        assert!(l.latency_cycles <= e.latency_cycles);
        assert_eq!(e.mac_count, l.mac_count);
    }
    assert!(best_row(&by_energy, OptimizationTarget::Energy).is_some());
    assert!(best_row(&by_latency, OptimizationTarget::Latency).is_some());
}

/// Activation-heavy head (large maps, few weights) followed by a
/// weight-heavy tail whose weights do not fit the weight buffer.
fn head_and_tail() -> WorkloadGraph {
    WorkloadGraph::new(vec![
        Layer::conv(0, 16, 3, 256, 256, 3, 3).with_pad([1; 4]),
        Layer::conv(1, 16, 16, 256, 256, 3, 3).with_pad([1; 4]).with_preds(&[0]),
        Layer::conv(2, 128, 16, 16, 16, 16, 16).with_stride(16, 16).with_preds(&[1]),
        Layer::conv(3, 128, 128, 16, 16, 3, 3).with_pad([1; 4]).with_preds(&[2]),
        Layer::conv(4, 128, 128, 16, 16, 3, 3).with_pad([1; 4]).with_preds(&[3]),
    ])
    .unwrap()
}

#[test]
fn best_combination_mixes_depth_first_and_layer_by_layer() {
    let g = head_and_tail();
    let eval = Evaluator::new(g.clone(), common::hw("meta_proto_df"));
    let plan = explicit_plan(&g, vec![vec![0, 1], vec![2, 3, 4]]).unwrap();
    let grid = SweepGrid { tx: vec![8, 256], ty: vec![8, 256], modes: vec![OverlapMode::FullyCached] };
    let settings = SweepSettings { lpf_limit: 6, ..SweepSettings::default() };
    let (strategy, result) = eval.best_combination(&plan, &grid, settings).unwrap();
    let head = result.stacks[0].strategy;
    let tail = result.stacks[1].strategy;
    assert_ne!((head.tx, head.ty), (256, 256), "head should be tiled: {strategy:?}");
    assert_eq!((tail.tx, tail.ty), (16, 16), "tail should run layer by layer: {strategy:?}");
    assert!(result.strategy_id.contains('+'));
    // no uniform strategy beats the combination
    for p in grid.points() {
        let uniform = eval
            .evaluate(&DfStrategy::uniform(plan.clone(), p.tx, p.ty, p.mode).with_lpf_limit(6))
            .unwrap();
        assert!(result.energy_pj <= uniform.energy_pj);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn costs_reconcile_on_random_graphs(g in common::dag(), tx in 1u64..=8, ty in 1u64..=8, m in 0u8..3) {
        let eval = Evaluator::new(g.clone(), common::hw("meta_proto_df"));
        let s = DfStrategy::uniform(eval.auto_plan(), tx, ty, OverlapMode::from_index(m).unwrap()).with_lpf_limit(6);
        let r = eval.evaluate(&s).unwrap();
        prop_assert_eq!(r.breakdown_accesses(), r.raw_accesses);
        let sum = r.mac_energy_pj + r.breakdown.values().map(|v| v.energy_pj).sum::<f64>();
        prop_assert_eq!(sum, r.energy_pj);
        prop_assert_eq!(r.stacks.iter().map(|s| s.tile_count).max().unwrap(), 8u64.div_ceil(tx) * 8u64.div_ceil(ty));
        // evaluation is deterministic
        let again = Evaluator::new(g, common::hw("meta_proto_df")).evaluate(&s).unwrap();
        prop_assert_eq!(again.to_json(), r.to_json());
    }
}
