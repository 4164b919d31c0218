//! Per-stack best tile size and mode, combined into one strategy.
//!
//! cargo run --release --example best_combination -- meta_proto_df reference_net

use depthfirst::cli::{load_accelerator, load_workload};
use depthfirst::dse::{Evaluator, SweepGrid, SweepSettings};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let eval = Evaluator::new(load_workload(&arg(1, "reference_net"))?, load_accelerator(&arg(0, "meta_proto_df"))?);
    let plan = eval.auto_plan();
    let settings = SweepSettings { lpf_limit: 6, ..SweepSettings::default() };

    let (_, result) = eval.best_combination(&plan, &SweepGrid::reference(), settings)?;
    println!("{}: {:.4e} pJ, {} cycles", result.strategy_id, result.energy_pj, result.latency_cycles);
    for s in &result.stacks {
        println!(
            "  layers {:?}: tile {}x{} {:?}, {:.4e} pJ",
            s.layers, s.strategy.tx, s.strategy.ty, s.strategy.mode, s.energy_pj
        );
    }
    Ok(())
}
