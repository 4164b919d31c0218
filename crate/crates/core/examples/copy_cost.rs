//! Data-copy actions of each tile type and what they cost.
//!
//! cargo run --example copy_cost -- meta_proto_df fsrcnn_like 60 72 2

use depthfirst::allocation::{place, DataDemand};
use depthfirst::cli::{load_accelerator, load_workload};
use depthfirst::copy::{copy_actions, price};
use depthfirst::stack::StackPlan;
use depthfirst::tiling::{OverlapMode, StackGeometry, Tiling};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let acc = load_accelerator(&arg(0, "meta_proto_df"))?;
    let graph = load_workload(&arg(1, "fsrcnn_like"))?;
    let mode = OverlapMode::from_index(arg(4, "2").parse()?).ok_or("mode must be 0, 1 or 2")?;

    let plan = StackPlan::whole(&graph);
    let tiling = Tiling::new(StackGeometry::new(&graph, &plan.stacks[0]), mode, arg(2, "60").parse()?, arg(3, "72").parse()?)?;
    let name = |l: usize| acc.memory_levels[l].name.as_str();
    for tt in tiling.tile_types() {
        let tile = &tt.attr;
        let demand = DataDemand::new(&tiling.geometry, tile);
        let placement = place(&acc, &tiling.geometry, tile, &demand);
        let cost = price(&acc, copy_actions(&acc, &tiling.geometry, tile, &placement));
        println!(
            "type at ({}, {}) x{}: {:.3e} pJ, {} cycles",
            tile.row, tile.col, tt.multiplicity, cost.energy_pj, cost.latency_cycles
        );
        for a in &cost.actions {
            println!("  {:?} map {} {} -> {}: {} bits", a.kind, a.map, name(a.src), name(a.dst), a.bits());
        }
    }
    Ok(())
}
