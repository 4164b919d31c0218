//! Temporal mapping search for a single layer on an uncapped accelerator.
//!
//! cargo run --release --example mapping -- meta_proto_df fsrcnn_like 1 8

use depthfirst::cli::{load_accelerator, load_workload};
use depthfirst::mapper::{search_mapping, LayerInstance, OptimizationTarget};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let acc = load_accelerator(&arg(0, "meta_proto_df"))?;
    let graph = load_workload(&arg(1, "fsrcnn_like"))?;
    let index: usize = arg(2, "1").parse()?;
    let lpf: usize = arg(3, "8").parse()?;

    let layer = graph.layers().get(index).ok_or("no such layer")?;
    let inst = LayerInstance::new(layer, layer.ox, layer.oy, 8);
    for target in [OptimizationTarget::Energy, OptimizationTarget::Latency] {
        let r = search_mapping(&inst, &acc, lpf, target)?;
        println!("{target:?}: {:.4e} pJ, {} cycles", r.cost.energy_pj, r.cost.latency_cycles);
        print!("{}", r.mapping.dump(&acc));
    }
    Ok(())
}
