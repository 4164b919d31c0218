//! Top memory level of every operand for each layer of one tile.
//!
//! cargo run --example placement -- meta_proto_df fsrcnn_like 60 72 2

use depthfirst::allocation::{place, DataDemand};
use depthfirst::hardware::Accelerator;
use depthfirst::cli::{load_accelerator, load_workload};
use depthfirst::stack::StackPlan;
use depthfirst::tiling::{OverlapMode, StackGeometry, Tiling};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let acc = load_accelerator(&arg(0, "meta_proto_df"))?;
    let graph = load_workload(&arg(1, "fsrcnn_like"))?;
    let (tx, ty): (u64, u64) = (arg(2, "60").parse()?, arg(3, "72").parse()?);
    let mode = OverlapMode::from_index(arg(4, "2").parse()?).ok_or("mode must be 0, 1 or 2")?;

    // optional sixth argument `sl`: one stack per layer
    let plan = match args.get(5).map(String::as_str) {
        Some("sl") => StackPlan::single_layer(&graph),
        _ => StackPlan::whole(&graph),
    };
    for (s, stack) in plan.stacks.iter().enumerate() {
        let geometry = StackGeometry::new(&graph, stack);
        let (sx, sy) = geometry.output_dims();
        let tiling = Tiling::new(geometry, mode, tx.min(sx), ty.min(sy))?;
        println!("stack {s}");
        print_tiles(&acc, &tiling);
    }
    Ok(())
}

fn print_tiles(acc: &Accelerator, tiling: &Tiling) {
    let name = |l: usize| acc.memory_levels[l].name.as_str();
    for tt in tiling.tile_types() {
        let tile = &tt.attr;
        let demand = DataDemand::new(&tiling.geometry, tile);
        let p = place(acc, &tiling.geometry, tile, &demand);
        println!("tile type at ({}, {}) x{}", tile.row, tile.col, tt.multiplicity);
        for (i, (lp, d)) in p.layers.iter().zip(&demand.layers).enumerate() {
            println!(
                "  layer {i}: W {:>8} ({} b)  I {:>8} ({} b)  O {:>8} ({} b)",
                name(lp.w_top),
                d.w_bits,
                name(lp.i_top),
                d.i_bits,
                name(lp.o_top),
                d.o_bits
            );
        }
        for (m, c) in p.caches.iter().enumerate() {
            if let Some(l) = c.left {
                println!("  map {m} left cache in {}", name(l));
            }
            if let Some(l) = c.row {
                println!("  map {m} row cache in {}", name(l));
            }
        }
    }
}
