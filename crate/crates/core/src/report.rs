//! CSV export of sweep results, one row per strategy.
//!
//! Columns: identification and totals first, then one access-count and one
//! energy column per (memory level, operand, cause), then `error`. Floats are
//! written in shortest round-trip form so re-reading gives identical values.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::copy::CopyCost;
use crate::dse::{Cause, DseError, Evaluator, SweepGrid, SweepRow, SweepSettings};
use crate::hardware::{Accelerator, Operand};
use crate::stack::StackPlan;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Dse(#[from] DseError),
    #[error("existing file {path} has a different header; refusing to append")]
    HeaderMismatch { path: String },
}

/// Breakdown keys that get a column pair, in column order.
pub fn breakdown_columns(acc: &Accelerator) -> Vec<(usize, Operand, Cause)> {
    let mut cols = Vec::new();
    for (l, level) in acc.memory_levels.iter().enumerate() {
        for op in Operand::ALL {
            if level.serves(op) {
                let cause = if op == Operand::W { Cause::Weight } else { Cause::Activation };
                cols.push((l, op, cause));
            }
        }
        // copies move activations only
        if level.serves(Operand::I) || level.serves(Operand::O) {
            cols.push((l, CopyCost::operand_at(acc, l), Cause::Copy));
        }
    }
    cols
}

pub fn header(acc: &Accelerator) -> Vec<String> {
    let mut h: Vec<String> = [
        "schema_version",
        "strategy_id",
        "stack_id",
        "tx",
        "ty",
        "mode",
        "tile_type_count",
        "mac_count",
        "energy_total_pJ",
        "mac_energy_pJ",
        "latency_cycles",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for (l, op, cause) in breakdown_columns(acc) {
        let name = &acc.memory_levels[l].name;
        h.push(format!("{name}:{op}:{cause}:accesses"));
        h.push(format!("{name}:{op}:{cause}:pJ"));
    }
    h.push("error".into());
    h
}

pub fn row(acc: &Accelerator, r: &SweepRow) -> Vec<String> {
    let mut out = vec![
        SCHEMA_VERSION.to_string(),
        r.strategy_id.clone(),
        "all".into(),
        r.strategy.tx.to_string(),
        r.strategy.ty.to_string(),
        r.strategy.mode.index().to_string(),
    ];
    let cols = breakdown_columns(acc);
    match &r.result {
        Ok(c) => {
            out.extend([
                c.tile_type_count.to_string(),
                c.mac_count.to_string(),
                c.energy_pj.to_string(),
                c.mac_energy_pj.to_string(),
                c.latency_cycles.to_string(),
            ]);
            for key in &cols {
                let v = c.breakdown.get(key).copied().unwrap_or_default();
                out.push(v.accesses().to_string());
                out.push(v.energy_pj.to_string());
            }
            out.push(String::new());
        }
        Err(e) => {
            out.extend(std::iter::repeat_n(String::new(), 5 + 2 * cols.len()));
            out.push(e.clone());
        }
    }
    out
}

pub fn write_csv(path: &Path, acc: &Accelerator, rows: &[SweepRow]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(acc))?;
    for r in rows {
        w.write_record(row(acc, r))?;
    }
    w.flush()?;
    Ok(())
}

/// Strategy ids already present in a sweep file written for `acc`.
pub fn completed_ids(path: &Path, acc: &Accelerator) -> Result<HashSet<String>, ReportError> {
    let mut rd = csv::Reader::from_path(path)?;
    let found: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if found != header(acc) {
        return Err(ReportError::HeaderMismatch { path: path.display().to_string() });
    }
    let mut ids = HashSet::new();
    for rec in rd.records() {
        let rec = rec?;
        if let Some(id) = rec.get(1) {
            ids.insert(id.to_string());
        }
    }
    Ok(ids)
}

/// Runs a sweep that appends to `path` in chunks, skipping strategies already
/// recorded there. Returns the rows computed by this call.
pub fn resumable_sweep(
    eval: &Evaluator,
    plan: &StackPlan,
    grid: &SweepGrid,
    settings: SweepSettings,
    path: &Path,
) -> Result<Vec<SweepRow>, ReportError> {
    let points = grid.points();
    if points.is_empty() {
        return Err(DseError::EmptyGrid.into());
    }
    let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
    let done = if exists { completed_ids(path, &eval.acc)? } else { HashSet::new() };
    let todo: Vec<_> = points
        .into_iter()
        .filter(|p| !done.contains(&crate::dse::strategy_id(p)))
        .collect();
    let file: File = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if !exists {
        w.write_record(header(&eval.acc))?;
        w.flush()?;
    }
    let chunk = settings.threads.max(1) * 4;
    let mut all = Vec::with_capacity(todo.len());
    for part in todo.chunks(chunk) {
        let rows = eval.sweep_points(plan, part, settings)?;
        for r in &rows {
            w.write_record(row(&eval.acc, r))?;
        }
        w.flush()?;
        all.extend(rows);
    }
    Ok(all)
}
