//! Energy and latency of one depth-first strategy, with the per-level breakdown.
//!
//! cargo run --release --example evaluate -- meta_proto_df fsrcnn_like 60 72 2

use depthfirst::cli::{load_accelerator, load_workload};
use depthfirst::dse::{DfStrategy, Evaluator};
use depthfirst::tiling::OverlapMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let acc = load_accelerator(&arg(0, "meta_proto_df"))?;
    let graph = load_workload(&arg(1, "fsrcnn_like"))?;
    let mode = OverlapMode::from_index(arg(4, "2").parse()?).ok_or("mode must be 0, 1 or 2")?;

    let eval = Evaluator::new(graph, acc);
    let strategy = DfStrategy::uniform(eval.auto_plan(), arg(2, "60").parse()?, arg(3, "72").parse()?, mode);
    let r = eval.evaluate(&strategy)?;
    println!("{}: {:.4e} pJ, {} cycles, {} MACs", r.strategy_id, r.energy_pj, r.latency_cycles, r.mac_count);
    println!("  mac      {:>14.4e} pJ", r.mac_energy_pj);
    for e in &r.entries {
        println!(
            "  {:<6} {} {:<10} {:>14.4e} pJ  {:>12} reads {:>12} writes",
            e.level, e.operand, format!("{:?}", e.cause), e.energy_pj, e.reads, e.writes
        );
    }
    Ok(())
}
