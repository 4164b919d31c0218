//! Automatic stack partition: cut wherever the fused weights would overflow
//! the on-chip weight memory.
//!
//! cargo run --example autostack -- meta_proto_df reference_net

use depthfirst::cli::{load_accelerator, load_workload};
use depthfirst::stack::{auto_stack, fusion_weight_capacity};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let acc = load_accelerator(&arg(0, "meta_proto_df"))?;
    let graph = load_workload(&arg(1, "reference_net"))?;

    println!("weight capacity: {} bits", fusion_weight_capacity(&acc));
    let plan = auto_stack(&graph, &acc);
    for (i, stack) in plan.stacks.iter().enumerate() {
        println!("stack {i}: layers {:?}, {} weight bits", stack.layers, stack.weight_bits(&graph));
    }
    Ok(())
}
