mod common;

use proptest::prelude::*;

use depthfirst::hardware::{Accelerator, Dim, Operand};
use depthfirst::mapper::{search_mapping, LayerInstance, MapperCache, MappingResult, OptimizationTarget};
use depthfirst::workload::{Layer, LayerKind};

fn capped(acc: &Accelerator) -> Accelerator {
    let w = acc.level_index("w_lb").unwrap();
    let io = acc.level_index("io_lb").unwrap();
    acc.restrict_top_level([Some(w), Some(io), Some(io)]).unwrap()
}

fn reads_at(r: &MappingResult, level: usize, op: Operand) -> u64 {
    r.cost.accesses.iter().filter(|a| a.level == level && a.operand == op).map(|a| a.reads).sum()
}

#[test]
fn single_pixel_tile_wastes_the_spatial_array() {
    let acc = capped(&common::hw("meta_proto_df"));
    let w_lb = acc.level_index("w_lb").unwrap();
    let layer = Layer::conv(0, 32, 2, 4, 4, 1, 1);
    let one = search_mapping(&LayerInstance::new(&layer, 1, 1, 8), &acc, 8, OptimizationTarget::Energy).unwrap();
    let four = search_mapping(&LayerInstance::new(&layer, 4, 4, 8), &acc, 8, OptimizationTarget::Energy).unwrap();
    assert_eq!(one.cost.spatial_utilization, 1.0 / 16.0);
    assert_eq!(four.cost.spatial_utilization, 1.0);
    // MACs served per weight read from the local buffer
    assert_eq!(one.cost.mac_count / reads_at(&one, w_lb, Operand::W), 1);
    assert_eq!(four.cost.mac_count / reads_at(&four, w_lb, Operand::W), 16);
}

#[test]
fn cache_returns_the_search_result() {
    let acc = capped(&common::hw("meta_proto_df"));
    let inst = LayerInstance::new(&Layer::conv(0, 16, 8, 8, 8, 3, 3), 8, 8, 8);
    let cache = MapperCache::new();
    let a = cache.search(&inst, &acc, 6, OptimizationTarget::Energy).unwrap();
    let b = cache.search(&inst, &acc, 6, OptimizationTarget::Energy).unwrap();
    assert_eq!(cache.len(), 1);
    assert_eq!(a, b);
    assert_eq!(a, search_mapping(&inst, &acc, 6, OptimizationTarget::Energy).unwrap());
}

fn instance() -> impl Strategy<Value = LayerInstance> {
    (
        prop::sample::select(vec![1u64, 3, 8, 16, 24, 56]),
        prop::sample::select(vec![1u64, 3, 8, 12, 32]),
        1u64..=24,
        1u64..=24,
        prop::sample::select(vec![1u64, 3, 5]),
        1u64..=2,
        any::<bool>(),
    )
        .prop_map(|(k, c, ox, oy, f, s, dw)| {
            let layer = if dw {
                Layer::conv(0, k, k, ox, oy, f, f).with_kind(LayerKind::DepthwiseConv)
            } else {
                Layer::conv(0, k, c, ox, oy, f, f)
            }
            .with_stride(s, s);
            LayerInstance::new(&layer, ox, oy, 8)
        })
}

fn hw_name() -> impl Strategy<Value = &'static str> {
    prop::sample::select(vec!["meta_proto_df", "meta_proto", "tpu_like_df", "edge_tpu_like_df", "ascend_like"])
}

/// Per-level footprints of a mapping, recomputed from its loop list.
fn fits(inst: &LayerInstance, acc: &Accelerator, r: &MappingResult) -> Result<(), String> {
    let m = &r.mapping;
    let n = m.loops.len();
    let mut used = vec![0u64; acc.memory_levels.len()];
    for op in Operand::ALL {
        for (i, &level) in m.chains[op.index()].iter().enumerate() {
            let b = m.boundaries[op.index()][i];
            let mut ext = m.spatial;
            for &(d, f) in &m.loops[..b.min(n)] {
                ext[d.index()] *= f;
            }
            let bits = match op {
                Operand::W => inst.w_bits,
                Operand::I => inst.i_bits,
                Operand::O => inst.o_bits,
            };
            used[level] += inst.footprint(op, &ext) * bits;
        }
    }
    for (l, &u) in used.iter().enumerate() {
        let level = &acc.memory_levels[l];
        if !level.offchip && u > level.capacity_bits {
            return Err(format!("{} holds {u} of {} bits", level.name, level.capacity_bits));
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mappings_fit_and_decompose(inst in instance(), name in hw_name()) {
        let acc = common::hw(name);
        let r = search_mapping(&inst, &acc, 6, OptimizationTarget::Energy).unwrap();
        prop_assert!(fits(&inst, &acc, &r).is_ok(), "{:?}", fits(&inst, &acc, &r));
        let total = r.cost.accesses.iter().fold(r.cost.mac_energy_pj, |s, a| s + a.energy_pj);
        prop_assert_eq!(total, r.cost.energy_pj);
        let product: u64 = r.mapping.loops.iter().map(|l| l.1).product::<u64>()
            * Dim::ALL.iter().map(|d| r.mapping.spatial[d.index()]).product::<u64>();
        prop_assert!(product >= inst.mac_count());
    }

    #[test]
    fn larger_lpf_limit_never_worse(inst in instance(), name in hw_name(), lo in 1usize..6, extra in 0usize..4) {
        let acc = common::hw(name);
        for target in [OptimizationTarget::Energy, OptimizationTarget::Latency] {
            let a = search_mapping(&inst, &acc, lo, target).unwrap();
            let b = search_mapping(&inst, &acc, lo + extra, target).unwrap();
            prop_assert!(
                target.score(b.cost.energy_pj, b.cost.latency_cycles)
                    <= target.score(a.cost.energy_pj, a.cost.latency_cycles)
            );
        }
    }

    #[test]
    fn halving_dram_bandwidth_never_speeds_up(inst in instance(), name in hw_name()) {
        let acc = common::hw(name);
        let mut slow = acc.clone();
        let d = slow.dram();
        for p in &mut slow.memory_levels[d].ports {
            p.bw_bits_per_cycle = (p.bw_bits_per_cycle / 2).max(1);
        }
        let fast = search_mapping(&inst, &acc, 6, OptimizationTarget::Latency).unwrap();
        let halved = search_mapping(&inst, &slow, 6, OptimizationTarget::Latency).unwrap();
        prop_assert!(halved.cost.latency_cycles >= fast.cost.latency_cycles);
    }
}
