//! Top-memory-level selection for each layer and data category of a tile.
//!
//! Weights of the whole stack stay resident in the lowest weight level that
//! holds them all. Activations are then placed as low as capacity allows,
//! and the strips cached across tiles go last. The result caps each
//! operand's memory chain for the single-layer mapper.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::hardware::{Accelerator, HwError, Operand};
use crate::tiling::{StackGeometry, TileAttr};

/// Data categories in placement order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Input,
    Output,
    LeftCache,
    RowCache,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Input => "I",
            Category::Output => "O",
            Category::LeftCache => "cached-left",
            Category::RowCache => "cached-row",
        })
    }
}

pub const DEFAULT_PRIORITY: [Category; 4] = [
    Category::Input,
    Category::Output,
    Category::LeftCache,
    Category::RowCache,
];

/// Memory footprint of one tile, in bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataDemand {
    pub stack_weight_bits: u64,
    /// Per layer: (weights, inputs over all slots, outputs).
    pub layers: Vec<LayerDemand>,
    /// Per feature map: cache strips live during the tile (read or kept).
    pub caches: Vec<CacheDemand>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDemand {
    pub w_bits: u64,
    pub i_bits: u64,
    pub o_bits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheDemand {
    pub left_bits: u64,
    pub row_bits: u64,
}

impl DataDemand {
    pub fn new(geometry: &StackGeometry, tile: &TileAttr) -> DataDemand {
        let layers: Vec<LayerDemand> = geometry
            .layers
            .iter()
            .enumerate()
            .map(|(p, sl)| LayerDemand {
                w_bits: sl.layer.weight_size_bits(),
                i_bits: sl
                    .inputs
                    .iter()
                    .zip(&tile.required[p])
                    .map(|(&m, r)| r.area() * geometry.maps[m].element_bits())
                    .sum(),
                o_bits: tile.maps[sl.output_map].compute.area()
                    * geometry.maps[sl.output_map].element_bits(),
            })
            .collect();
        let caches = geometry
            .maps
            .iter()
            .zip(&tile.maps)
            .map(|(map, t)| CacheDemand {
                left_bits: t.left_keep.area().max(t.left_cached.area()) * map.element_bits(),
                row_bits: t.row_keep_elems * map.element_bits(),
            })
            .collect();
        DataDemand {
            stack_weight_bits: layers.iter().map(|l| l.w_bits).sum(),
            layers,
            caches,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlacement {
    pub w_top: usize,
    pub i_top: usize,
    pub o_top: usize,
}

impl LayerPlacement {
    pub fn top(&self, op: Operand) -> usize {
        match op {
            Operand::W => self.w_top,
            Operand::I => self.i_top,
            Operand::O => self.o_top,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CachePlacement {
    pub left: Option<usize>,
    pub row: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub weight_residency: usize,
    pub layers: Vec<LayerPlacement>,
    pub caches: Vec<CachePlacement>,
    /// Bits held at each level while each layer runs: `occupancy[layer][level]`.
    pub occupancy: Vec<Vec<u64>>,
}

/// Levels of `op`'s chain that may act as its top level. The innermost level
/// feeds the MAC array and needs room for the mapper's register tiles, so
/// it never holds a whole tile.
pub fn candidate_levels(acc: &Accelerator, op: Operand) -> Vec<usize> {
    acc.operand_chain(op).into_iter().skip(1).collect()
}

/// Lowest on-chip weight level able to hold all weights of the stack, or
/// the off-chip level when none can.
pub fn weight_residency(acc: &Accelerator, stack_weight_bits: u64) -> usize {
    candidate_levels(acc, Operand::W)
        .into_iter()
        .find(|&l| !acc.memory_levels[l].offchip && acc.memory_levels[l].capacity_bits >= stack_weight_bits)
        .unwrap_or_else(|| acc.dram())
}

/// Weight top level per tile: the first tile streams weights from off-chip,
/// later tiles read them from the residency level.
pub fn weight_level_schedule(acc: &Accelerator, stack_weight_bits: u64, first_tile: bool) -> usize {
    if first_tile {
        acc.dram()
    } else {
        weight_residency(acc, stack_weight_bits)
    }
}

pub fn place(
    acc: &Accelerator,
    geometry: &StackGeometry,
    tile: &TileAttr,
    demand: &DataDemand,
) -> Placement {
    place_with_priority(acc, geometry, tile, demand, &DEFAULT_PRIORITY)
}

pub fn place_with_priority(
    acc: &Accelerator,
    geometry: &StackGeometry,
    tile: &TileAttr,
    demand: &DataDemand,
    priority: &[Category],
) -> Placement {
    let nl = geometry.layers.len();
    let dram = acc.dram();
    let cap = |l: usize| acc.memory_levels[l].capacity_bits;
    let residency = weight_residency(acc, demand.stack_weight_bits);
    let mut occupancy = vec![vec![0u64; acc.memory_levels.len()]; nl];
    if residency != dram {
        for occ in occupancy.iter_mut() {
            occ[residency] += demand.stack_weight_bits;
        }
    }
    let w_top = if tile.first { dram } else { residency };
    let mut layers = vec![LayerPlacement { w_top, i_top: dram, o_top: dram }; nl];
    let mut caches = vec![CachePlacement::default(); geometry.maps.len()];

    let i_chain = candidate_levels(acc, Operand::I);
    let o_chain = candidate_levels(acc, Operand::O);
    let lowest_fit = |chain: &[usize], occ: &[u64], bits: u64| {
        chain
            .iter()
            .copied()
            .find(|&l| l == dram || occ[l] + bits <= cap(l))
            .unwrap_or(dram)
    };

    for cat in priority {
        match cat {
            Category::Input => {
                for p in 0..nl {
                    let bits = demand.layers[p].i_bits;
                    let l = lowest_fit(&i_chain, &occupancy[p], bits);
                    layers[p].i_top = l;
                    occupancy[p][l] += bits;
                }
            }
            Category::Output => {
                for p in 0..nl {
                    let bits = demand.layers[p].o_bits;
                    let l = if p + 1 == nl {
                        dram
                    } else {
                        lowest_fit(&o_chain, &occupancy[p], bits)
                    };
                    layers[p].o_top = l;
                    occupancy[p][l] += bits;
                }
            }
            Category::LeftCache | Category::RowCache => {
                for (m, map) in geometry.maps.iter().enumerate() {
                    let bits = match cat {
                        Category::LeftCache => demand.caches[m].left_bits,
                        _ => demand.caches[m].row_bits,
                    };
                    if bits == 0 || map.consumers.is_empty() {
                        continue;
                    }
                    let l = i_chain
                        .iter()
                        .copied()
                        .find(|&l| {
                            l == dram || occupancy.iter().map(|o| o[l]).max().unwrap_or(0) + bits <= cap(l)
                        })
                        .unwrap_or(dram);
                    for occ in occupancy.iter_mut() {
                        occ[l] += bits;
                    }
                    match cat {
                        Category::LeftCache => caches[m].left = Some(l),
                        _ => caches[m].row = Some(l),
                    }
                }
            }
        }
    }
    Placement { weight_residency: residency, layers, caches, occupancy }
}

/// Checks that no on-chip level is over-subscribed while any layer runs.
pub fn audit(acc: &Accelerator, placement: &Placement) -> Result<(), String> {
    for (p, occ) in placement.occupancy.iter().enumerate() {
        for (l, &bits) in occ.iter().enumerate() {
            let level = &acc.memory_levels[l];
            if !level.offchip && bits > level.capacity_bits {
                return Err(format!(
                    "layer position {p}: {} holds {bits} bits but has {}",
                    level.name, level.capacity_bits
                ));
            }
        }
    }
    Ok(())
}

/// Accelerator seen by the mapper for layer position `p`: each operand's chain
/// ends at its placed level and capacity held by other data is removed.
pub fn derive_capped_accelerator(
    acc: &Accelerator,
    placement: &Placement,
    demand: &DataDemand,
    p: usize,
) -> Result<Accelerator, HwError> {
    let lp = placement.layers[p];
    let mut out = acc.restrict_top_level([Some(lp.w_top), Some(lp.i_top), Some(lp.o_top)])?;
    let own = demand.layers[p];
    for (l, level) in out.memory_levels.iter_mut().enumerate() {
        if level.offchip {
            continue;
        }
        let mut mine = 0;
        if l == lp.i_top {
            mine += own.i_bits;
        }
        if l == lp.o_top {
            mine += own.o_bits;
        }
        if l == placement.weight_residency {
            mine += own.w_bits;
        }
        let reserved = placement.occupancy[p][l].saturating_sub(mine);
        level.capacity_bits = level.capacity_bits.saturating_sub(reserved);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardware::tests::toy;
    use crate::stack::StackPlan;
    use crate::tiling::{OverlapMode, Tiling};
    use crate::workload::{Layer, WorkloadGraph};

    fn two_convs() -> (WorkloadGraph, StackGeometry) {
        let g = WorkloadGraph::new(vec![
            Layer::conv(0, 4, 3, 16, 16, 3, 3).with_pad([1; 4]),
            Layer::conv(1, 4, 4, 16, 16, 3, 3).with_pad([1; 4]).with_preds(&[0]),
        ])
        .unwrap();
        let geom = StackGeometry::new(&g, &StackPlan::whole(&g).stacks[0]);
        (g, geom)
    }

    #[test]
    fn weights_resident_after_first_tile() {
        let acc = toy();
        let (_, geom) = two_convs();
        let t = Tiling::new(geom.clone(), OverlapMode::FullyCached, 4, 4).unwrap();
        let first = t.tile_attr(0, 0);
        let later = t.tile_attr(1, 1);
        let pf = place(&acc, &geom, &first, &DataDemand::new(&geom, &first));
        let pl = place(&acc, &geom, &later, &DataDemand::new(&geom, &later));
        assert_eq!(pf.layers[0].w_top, acc.dram());
        assert_ne!(pl.layers[0].w_top, acc.dram());
        assert_eq!(pl.layers[0].w_top, pl.weight_residency);
        audit(&acc, &pl).unwrap();
    }

    #[test]
    fn stack_output_goes_off_chip() {
        let acc = toy();
        let (_, geom) = two_convs();
        let t = Tiling::new(geom.clone(), OverlapMode::FullyRecompute, 4, 4).unwrap();
        let a = t.tile_attr(1, 1);
        let p = place(&acc, &geom, &a, &DataDemand::new(&geom, &a));
        assert_eq!(p.layers[1].o_top, acc.dram());
        assert_ne!(p.layers[0].o_top, acc.dram());
    }

    #[test]
    fn oversized_weights_stay_off_chip() {
        let acc = toy();
        assert_eq!(weight_residency(&acc, u64::MAX), acc.dram());
        assert_eq!(weight_level_schedule(&acc, 8, true), acc.dram());
    }

    #[test]
    fn capped_capacities_exclude_other_data() {
        let acc = toy();
        let (_, geom) = two_convs();
        let t = Tiling::new(geom.clone(), OverlapMode::FullyCached, 4, 4).unwrap();
        let a = t.tile_attr(1, 1);
        let d = DataDemand::new(&geom, &a);
        let p = place(&acc, &geom, &a, &d);
        let capped = derive_capped_accelerator(&acc, &p, &d, 1).unwrap();
        let res = p.weight_residency;
        let other_w = d.stack_weight_bits - d.layers[1].w_bits;
        assert!(capped.memory_levels[res].capacity_bits <= acc.memory_levels[res].capacity_bits - other_w);
        for op in Operand::ALL {
            assert_eq!(capped.operand_chain(op).last(), Some(&p.layers[1].top(op)));
        }
    }
}
