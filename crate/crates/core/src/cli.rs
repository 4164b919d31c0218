//! `dfcost` command-line front end.
//!
//! Accelerator and workload arguments accept a file path or a bare config
//! name, looked up as `<dir>/hw/<name>.json` or `<dir>/workloads/<name>.json`
//! where `<dir>` is `$DFCOST_CONFIG_DIR` or the configs shipped with the crate.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dse::{best_row, DfStrategy, Evaluator, SweepGrid, SweepRow, SweepSettings, DEFAULT_LPF_LIMIT};
use crate::hardware::{parse_accelerator, Accelerator};
use crate::mapper::OptimizationTarget;
use crate::report::{resumable_sweep, write_csv};
use crate::stack::{explicit_plan, StackPlan};
use crate::tiling::OverlapMode;
use crate::workload::{parse_workload, LayerId, WorkloadGraph};

#[derive(Debug, Parser)]
#[command(name = "dfcost", version, about = "Depth-first scheduling cost model and design-space exploration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cost of one strategy.
    Evaluate(EvaluateArgs),
    /// Tile-size x overlap-mode grid, written as CSV.
    Sweep(SweepArgs),
    /// Print the automatic stack partition.
    Autostack(Inputs),
    /// Check configuration files.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Accelerator JSON file or config name.
    #[arg(long)]
    pub accelerator: String,
    /// Workload JSON file or config name.
    #[arg(long)]
    pub workload: String,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// energy, latency, edp or weighted:E,L
    #[arg(long, default_value = "energy")]
    pub target: OptimizationTarget,
    #[arg(long, default_value_t = DEFAULT_LPF_LIMIT as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub lpf_limit: u64,
    /// Stack partition such as `0,1,2;3,4`. Defaults to automatic fusion;
    /// `lbl` evaluates the whole network as one untiled stack.
    #[arg(long)]
    pub stacks: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// 0 fully-recompute, 1 h-cached v-recompute, 2 fully-cached
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=2))]
    pub dfmode: u8,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub tilex: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub tiley: u64,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Write the full result as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the result as a one-row CSV in the sweep schema.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Tile widths (comma separated). Default: 1,4,16,60,240,960
    #[arg(long, value_delimiter = ',')]
    pub tilex: Vec<u64>,
    /// Tile heights (comma separated). Default: 1,4,18,72,270,540
    #[arg(long, value_delimiter = ',')]
    pub tiley: Vec<u64>,
    /// Modes (comma separated). Default: 0,1,2
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(0..=2))]
    pub dfmode: Vec<u8>,
    #[command(flatten)]
    pub search: SearchArgs,
    /// CSV output; rows already present are not recomputed.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub accelerator: Option<String>,
    #[arg(long)]
    pub workload: Option<String>,
}

fn config_dir() -> PathBuf {
    std::env::var_os("DFCOST_CONFIG_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("configs"))
}

/// Path of a config given as a file path or a bare name.
pub fn resolve(arg: &str, kind: &str) -> PathBuf {
    let p = PathBuf::from(arg);
    if p.exists() {
        return p;
    }
    let name = if arg.ends_with(".json") { arg.to_string() } else { format!("{arg}.json") };
    config_dir().join(kind).join(name)
}

pub fn load_accelerator(arg: &str) -> Result<Accelerator, String> {
    let path = resolve(arg, "hw");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_accelerator(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn load_workload(arg: &str) -> Result<WorkloadGraph, String> {
    let path = resolve(arg, "workloads");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_workload(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Parses `0,1;2` into stacks of layer ids.
pub fn parse_stacks(spec: &str) -> Result<Vec<Vec<LayerId>>, String> {
    spec.split(';')
        .map(|s| {
            s.split(',')
                .map(|id| id.trim().parse::<LayerId>().map_err(|e| format!("bad layer id `{id}`: {e}")))
                .collect()
        })
        .collect()
}

fn plan_for(eval: &Evaluator, stacks: &Option<String>) -> Result<StackPlan, String> {
    match stacks.as_deref() {
        None => Ok(eval.auto_plan()),
        Some("lbl") => Ok(StackPlan::whole(&eval.graph)),
        Some(spec) => explicit_plan(&eval.graph, parse_stacks(spec)?).map_err(|e| e.to_string()),
    }
}

fn mode(i: u8) -> OverlapMode {
    OverlapMode::from_index(i).expect("clap restricts the range")
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), String> {
    let io = |e: std::io::Error| e.to_string();
    match cli.command {
        Command::Evaluate(a) => {
            let eval = Evaluator::new(load_workload(&a.inputs.workload)?, load_accelerator(&a.inputs.accelerator)?);
            let lbl = a.search.stacks.as_deref() == Some("lbl");
            let plan = plan_for(&eval, &a.search.stacks)?;
            let (tx, ty) = if lbl { (u64::MAX, u64::MAX) } else { (a.tilex, a.tiley) };
            let strategy = DfStrategy::uniform(plan, tx, ty, mode(a.dfmode))
                .with_target(a.search.target)
                .with_lpf_limit(a.search.lpf_limit as usize);
            let r = eval.evaluate(&strategy).map_err(|e| e.to_string())?;
            writeln!(out, "strategy        {}", r.strategy_id).map_err(io)?;
            writeln!(out, "stacks          {}", strategy.plan.len()).map_err(io)?;
            writeln!(out, "tile types      {}", r.tile_type_count).map_err(io)?;
            writeln!(out, "MACs            {}", r.mac_count).map_err(io)?;
            writeln!(out, "energy pJ       {}", r.energy_pj).map_err(io)?;
            writeln!(out, "MAC energy pJ   {}", r.mac_energy_pj).map_err(io)?;
            writeln!(out, "latency cycles  {}", r.latency_cycles).map_err(io)?;
            for e in &r.entries {
                writeln!(
                    out,
                    "  {:<10} {} {:<10} accesses {:>14}  pJ {:.1}",
                    e.level,
                    e.operand,
                    e.cause,
                    e.reads + e.writes,
                    e.energy_pj
                )
                .map_err(io)?;
            }
            if let Some(path) = a.out {
                std::fs::write(&path, r.to_json()).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            if let Some(path) = a.csv {
                let stack = match r.stacks.as_slice() {
                    [only] => only.strategy,
                    _ => strategy.per_stack[0],
                };
                let row = SweepRow { strategy: stack, strategy_id: r.strategy_id.clone(), result: Ok(r) };
                write_csv(&path, &eval.acc, &[row]).map_err(|e| e.to_string())?;
            }
        }
        Command::Sweep(a) => {
            let eval = Evaluator::new(load_workload(&a.inputs.workload)?, load_accelerator(&a.inputs.accelerator)?);
            let plan = plan_for(&eval, &a.search.stacks)?;
            let reference = SweepGrid::reference();
            let grid = SweepGrid {
                tx: if a.tilex.is_empty() { reference.tx } else { a.tilex },
                ty: if a.tiley.is_empty() { reference.ty } else { a.tiley },
                modes: if a.dfmode.is_empty() { reference.modes } else { a.dfmode.into_iter().map(mode).collect() },
            };
            let settings = SweepSettings {
                target: a.search.target,
                lpf_limit: a.search.lpf_limit as usize,
                threads: a.threads,
            };
            let rows = resumable_sweep(&eval, &plan, &grid, settings, &a.out).map_err(|e| e.to_string())?;
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            writeln!(out, "{} rows written to {} ({failed} failed)", rows.len(), a.out.display()).map_err(io)?;
            if let Some(i) = best_row(&rows, settings.target) {
                let r = rows[i].result.as_ref().expect("best row succeeded");
                writeln!(
                    out,
                    "best {}: energy {} pJ, latency {} cycles",
                    rows[i].strategy_id, r.energy_pj, r.latency_cycles
                )
                .map_err(io)?;
            }
        }
        Command::Autostack(a) => {
            let eval = Evaluator::new(load_workload(&a.workload)?, load_accelerator(&a.accelerator)?);
            write!(out, "{}", eval.auto_plan()).map_err(io)?;
        }
        Command::Validate(a) => {
            if a.accelerator.is_none() && a.workload.is_none() {
                return Err("nothing to validate: pass --accelerator and/or --workload".into());
            }
            if let Some(acc) = a.accelerator {
                let acc = load_accelerator(&acc)?;
                writeln!(out, "accelerator {}: ok ({} levels, {} MACs)", acc.name, acc.memory_levels.len(), acc.mac_count)
                    .map_err(io)?;
            }
            if let Some(w) = a.workload {
                let g = load_workload(&w)?;
                writeln!(
                    out,
                    "workload {}: ok ({} layers, {} MACs)",
                    g.name().unwrap_or("unnamed"),
                    g.layers().len(),
                    g.total_macs()
                )
                .map_err(io)?;
            }
        }
    }
    Ok(())
}

/// Process entry point; returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
