mod common;

use proptest::prelude::*;

use depthfirst::allocation::{audit, candidate_levels, derive_capped_accelerator, place, DataDemand};
use depthfirst::hardware::{Accelerator, Operand};
use depthfirst::mapper::{search_mapping, LayerInstance, OptimizationTarget};
use depthfirst::stack::StackPlan;
use depthfirst::tiling::{OverlapMode, StackGeometry, Tiling};
use depthfirst::workload::{Layer, WorkloadGraph};

fn pair(k: u64, size: u64) -> WorkloadGraph {
    WorkloadGraph::new(vec![
        Layer::conv(0, k, k, size, size, 3, 3).with_pad([1; 4]),
        Layer::conv(1, k, k, size, size, 3, 3).with_pad([1; 4]).with_preds(&[0]),
    ])
    .unwrap()
}

fn geometry(g: &WorkloadGraph) -> StackGeometry {
    StackGeometry::new(g, &StackPlan::whole(g).stacks[0])
}

#[test]
fn input_and_output_share_the_local_buffer() {
    let acc = common::hw("meta_proto_df");
    let lb = acc.level_index("io_lb").unwrap();
    let g = pair(16, 160);
    let t = Tiling::new(geometry(&g), OverlapMode::FullyRecompute, 16, 16).unwrap();
    let tile = t.tile_attr(2, 2);
    let p = place(&acc, &t.geometry, &tile, &DataDemand::new(&t.geometry, &tile));
    assert_eq!((p.layers[0].i_top, p.layers[0].o_top), (lb, lb));
}

#[test]
fn input_keeps_the_local_buffer_and_output_moves_up() {
    let acc = common::hw("meta_proto_df");
    let (lb, gb) = (acc.level_index("io_lb").unwrap(), acc.level_index("gb").unwrap());
    let g = pair(16, 160);
    let t = Tiling::new(geometry(&g), OverlapMode::FullyRecompute, 48, 48).unwrap();
    let tile = t.tile_attr(1, 1);
    let d = DataDemand::new(&t.geometry, &tile);
    let cap = acc.memory_levels[lb].capacity_bits;
    assert!(d.layers[0].i_bits <= cap && d.layers[0].i_bits + d.layers[0].o_bits > cap);
    let p = place(&acc, &t.geometry, &tile, &d);
    assert_eq!((p.layers[0].i_top, p.layers[0].o_top), (lb, gb));
}

#[test]
fn oversized_maps_stay_off_chip() {
    let acc = common::hw("meta_proto_df");
    let g = pair(64, 256);
    let geom = geometry(&g);
    let t = Tiling::new(geom, OverlapMode::FullyCached, 256, 256).unwrap();
    let tile = t.tile_attr(0, 0);
    let p = place(&acc, &t.geometry, &tile, &DataDemand::new(&t.geometry, &tile));
    assert_eq!((p.layers[1].i_top, p.layers[0].o_top), (acc.dram(), acc.dram()));
}

#[test]
fn fsrcnn_weights_come_from_dram_only_on_the_first_tile() {
    let acc = common::hw("meta_proto_df");
    let w_lb = acc.level_index("w_lb").unwrap();
    let g = common::fsrcnn();
    let t = Tiling::new(geometry(&g), OverlapMode::FullyCached, 60, 72).unwrap();
    for ty in t.tile_types() {
        let p = place(&acc, &t.geometry, &ty.attr, &DataDemand::new(&t.geometry, &ty.attr));
        let expect = if ty.attr.first { acc.dram() } else { w_lb };
        assert!(p.layers.iter().all(|l| l.w_top == expect));
        assert_eq!(ty.attr.first, ty.multiplicity == 1 && (ty.attr.row, ty.attr.col) == (0, 0));
    }
}

fn lowest_fit(acc: &Accelerator, op: Operand, used: &[u64], bits: u64) -> usize {
    candidate_levels(acc, op)
        .into_iter()
        .find(|&l| acc.memory_levels[l].offchip || used[l] + bits <= acc.memory_levels[l].capacity_bits)
        .unwrap()
}

fn case() -> impl Strategy<Value = (String, u64, u64, u64, u64, u8, prop::sample::Index)> {
    (
        prop::sample::select(vec!["meta_proto_df", "meta_proto", "tpu_like_df", "ascend_like_df", "edge_tpu_like"]),
        prop::sample::select(vec![4u64, 16, 32, 64]),
        prop::sample::select(vec![32u64, 96, 200]),
        1u64..=200,
        1u64..=200,
        0u8..3,
        any::<prop::sample::Index>(),
    )
        .prop_map(|(n, k, s, tx, ty, m, i)| (n.to_string(), k, s, tx, ty, m, i))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Inputs then outputs take the lowest level with room left after weights
    /// and higher-priority data; the occupancy audit never fails.
    #[test]
    fn never_up_and_audit((name, k, size, tx, ty, m, pick) in case()) {
        let acc = common::hw(&name);
        let g = pair(k, size);
        let t = Tiling::new(geometry(&g), OverlapMode::from_index(m).unwrap(), tx.min(size), ty.min(size)).unwrap();
        let types = t.tile_types();
        let tile = &types[pick.index(types.len())].attr;
        let d = DataDemand::new(&t.geometry, tile);
        let p = place(&acc, &t.geometry, tile, &d);
        prop_assert!(audit(&acc, &p).is_ok());
        for (i, lp) in p.layers.iter().enumerate() {
            let mut used = vec![0u64; acc.memory_levels.len()];
            if !acc.memory_levels[p.weight_residency].offchip {
                used[p.weight_residency] += d.stack_weight_bits;
            }
            prop_assert_eq!(lp.i_top, lowest_fit(&acc, Operand::I, &used, d.layers[i].i_bits));
            used[lp.i_top] += d.layers[i].i_bits;
            if i + 1 < p.layers.len() {
                prop_assert_eq!(lp.o_top, lowest_fit(&acc, Operand::O, &used, d.layers[i].o_bits));
            } else {
                prop_assert_eq!(lp.o_top, acc.dram());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Data placed below a level never produces traffic at that level or above.
    #[test]
    fn skipped_levels_see_no_traffic((name, k, size, tx, ty, m, pick) in case()) {
        let acc = common::hw(&name);
        let g = pair(k.min(16), size.min(96));
        let size = size.min(96);
        let t = Tiling::new(geometry(&g), OverlapMode::from_index(m).unwrap(), tx.min(size), ty.min(size)).unwrap();
        let types = t.tile_types();
        let tile = &types[pick.index(types.len())].attr;
        let d = DataDemand::new(&t.geometry, tile);
        let p = place(&acc, &t.geometry, tile, &d);
        for (i, sl) in t.geometry.layers.iter().enumerate() {
            let region = tile.maps[sl.output_map].compute;
            if region.is_empty() {
                continue;
            }
            let req = tile.required[i][0];
            let inst = LayerInstance::new(&sl.layer, region.width(), region.height(), 8).with_input(req.width(), req.height());
            let capped = derive_capped_accelerator(&acc, &p, &d, i).unwrap();
            let r = search_mapping(&inst, &capped, 6, OptimizationTarget::Energy).unwrap();
            for a in &r.cost.accesses {
                prop_assert!(a.level <= p.layers[i].top(a.operand), "{} traffic at level {} above its top", a.operand, a.level);
            }
        }
    }
}
