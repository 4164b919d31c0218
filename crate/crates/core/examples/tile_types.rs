//! Tile grid of a fused stack and its distinct tile types.
//!
//! cargo run --example tile_types -- fsrcnn_like 60 72 0

use depthfirst::cli::load_workload;
use depthfirst::stack::StackPlan;
use depthfirst::tiling::{OverlapMode, StackGeometry, Tiling};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let graph = load_workload(&arg(0, "fsrcnn_like"))?;
    let mode = OverlapMode::from_index(arg(3, "0").parse()?).ok_or("mode must be 0, 1 or 2")?;

    let plan = StackPlan::whole(&graph);
    let tiling = Tiling::new(StackGeometry::new(&graph, &plan.stacks[0]), mode, arg(1, "60").parse()?, arg(2, "72").parse()?)?;
    println!(
        "{} x {} tiles, {} MACs ({} without overlap)",
        tiling.grid.columns.len(),
        tiling.grid.rows.len(),
        tiling.mac_count(),
        graph.total_macs()
    );
    for tt in tiling.tile_types() {
        let t = &tt.attr;
        println!("type at row {} col {}: x{}", t.row, t.col, tt.multiplicity);
        for (p, sl) in tiling.geometry.layers.iter().enumerate() {
            let m = &t.maps[sl.output_map];
            println!(
                "  layer {}: computes {}x{}, reads {}x{} input",
                sl.layer.id,
                m.compute.width(),
                m.compute.height(),
                t.required[p][0].width(),
                t.required[p][0].height()
            );
        }
    }
    Ok(())
}
