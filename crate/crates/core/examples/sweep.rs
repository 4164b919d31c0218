//! Tile size x overlap mode sweep, written to CSV; prints the best point.
//!
//! cargo run --release --example sweep -- meta_proto_df fsrcnn_like sweep.csv

use depthfirst::cli::{load_accelerator, load_workload};
use depthfirst::dse::{best_row, Evaluator, SweepGrid, SweepSettings};
use depthfirst::report::write_csv;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let eval = Evaluator::new(load_workload(&arg(1, "fsrcnn_like"))?, load_accelerator(&arg(0, "meta_proto_df"))?);
    let settings = SweepSettings::default();

    let rows = eval.sweep(&eval.auto_plan(), &SweepGrid::reference(), settings)?;
    write_csv(std::path::Path::new(&arg(2, "sweep.csv")), &eval.acc, &rows)?;
    for row in &rows {
        match &row.result {
            Ok(r) => println!("{:<16} {:>12.4e} pJ {:>12} cycles", row.strategy_id, r.energy_pj, r.latency_cycles),
            Err(e) => println!("{:<16} error: {e}", row.strategy_id),
        }
    }
    if let Some(i) = best_row(&rows, settings.target) {
        println!("best: {}", rows[i].strategy_id);
    }
    Ok(())
}
