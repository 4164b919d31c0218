//! Whole-network evaluation of depth-first strategies and sweeps over the
//! tile-size and overlap-mode grid.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{derive_capped_accelerator, place, DataDemand};
use crate::copy::{copy_actions, price, CopyCost};
use crate::hardware::{Accelerator, HwError, Operand};
use crate::mapper::{LayerInstance, MapperCache, MapperError, OptimizationTarget};
use crate::stack::{auto_stack, Stack, StackPlan};
use crate::tiling::{OverlapMode, StackGeometry, TileError, Tiling};
use crate::workload::{LayerId, WorkloadGraph};

pub const DEFAULT_LPF_LIMIT: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DseError {
    #[error(transparent)]
    Tile(#[from] TileError),
    #[error(transparent)]
    Hardware(#[from] HwError),
    #[error("layer {layer}: {source}")]
    Mapper { layer: LayerId, source: MapperError },
    #[error("strategy: {0}")]
    Strategy(String),
    #[error("sweep grid is empty")]
    EmptyGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cause {
    Activation,
    Weight,
    Copy,
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cause::Activation => "activation",
            Cause::Weight => "weight",
            Cause::Copy => "copy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StackStrategy {
    pub tx: u64,
    pub ty: u64,
    pub mode: OverlapMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfStrategy {
    pub plan: StackPlan,
    pub per_stack: Vec<StackStrategy>,
    #[serde(default)]
    pub target: OptimizationTarget,
    pub lpf_limit: usize,
}

impl DfStrategy {
    /// Same tile size and mode for every stack.
    pub fn uniform(plan: StackPlan, tx: u64, ty: u64, mode: OverlapMode) -> DfStrategy {
        let per_stack = vec![StackStrategy { tx, ty, mode }; plan.len()];
        DfStrategy { plan, per_stack, target: OptimizationTarget::Energy, lpf_limit: DEFAULT_LPF_LIMIT }
    }

    /// Layer-by-layer: every layer runs over the full feature map before the next.
    pub fn layer_by_layer(graph: &WorkloadGraph) -> DfStrategy {
        DfStrategy::uniform(StackPlan::whole(graph), u64::MAX, u64::MAX, OverlapMode::FullyRecompute)
    }

    /// Single-layer stacks sharing one tile size.
    pub fn single_layer(graph: &WorkloadGraph, tx: u64, ty: u64, mode: OverlapMode) -> DfStrategy {
        DfStrategy::uniform(StackPlan::single_layer(graph), tx, ty, mode)
    }

    pub fn with_target(mut self, target: OptimizationTarget) -> DfStrategy {
        self.target = target;
        self
    }

    pub fn with_lpf_limit(mut self, lpf_limit: usize) -> DfStrategy {
        self.lpf_limit = lpf_limit;
        self
    }

    /// Short identifier of a uniform strategy, e.g. `m2_tx60_ty72`.
    pub fn id(&self) -> String {
        combined_id(&self.per_stack)
    }
}

fn combined_id(per_stack: &[StackStrategy]) -> String {
    match per_stack.first() {
        Some(s) if per_stack.iter().all(|x| x == s) => strategy_id(s),
        _ => per_stack.iter().map(strategy_id).collect::<Vec<_>>().join("+"),
    }
}

pub fn strategy_id(s: &StackStrategy) -> String {
    format!("m{}_tx{}_ty{}", s.mode.index(), s.tx, s.ty)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AccessTotals {
    pub reads: u64,
    pub writes: u64,
    pub energy_pj: f64,
}

impl AccessTotals {
    fn add(&mut self, reads: u64, writes: u64, energy_pj: f64) {
        self.reads += reads;
        self.writes += writes;
        self.energy_pj += energy_pj;
    }

    pub fn accesses(&self) -> u64 {
        self.reads + self.writes
    }
}

pub type Breakdown = BTreeMap<(usize, Operand, Cause), AccessTotals>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownEntry {
    pub level: String,
    pub operand: Operand,
    pub cause: Cause,
    pub reads: u64,
    pub writes: u64,
    pub energy_pj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackResult {
    pub layers: Vec<LayerId>,
    pub strategy: StackStrategy,
    pub tile_count: u64,
    pub tile_type_count: usize,
    pub mac_count: u64,
    pub energy_pj: f64,
    pub mac_energy_pj: f64,
    pub latency_cycles: u64,
    #[serde(skip)]
    pub breakdown: Breakdown,
    /// Element accesses summed straight from the per-layer results, kept
    /// apart from `breakdown` for cross-checking.
    pub raw_accesses: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostResult {
    pub strategy_id: String,
    pub energy_pj: f64,
    pub mac_energy_pj: f64,
    pub latency_cycles: u64,
    pub mac_count: u64,
    pub tile_type_count: usize,
    #[serde(skip)]
    pub breakdown: Breakdown,
    pub entries: Vec<BreakdownEntry>,
    pub raw_accesses: u64,
    pub stacks: Vec<StackResult>,
}

impl CostResult {
    fn from_stacks(acc: &Accelerator, strategy_id: String, stacks: Vec<StackResult>) -> CostResult {
        let mut breakdown = Breakdown::new();
        for s in &stacks {
            for (k, v) in &s.breakdown {
                breakdown.entry(*k).or_default().add(v.reads, v.writes, v.energy_pj);
            }
        }
        let mac_energy_pj: f64 = stacks.iter().map(|s| s.mac_energy_pj).sum();
        let energy_pj = mac_energy_pj + breakdown.values().map(|v| v.energy_pj).sum::<f64>();
        let entries = breakdown
            .iter()
            .map(|(&(l, operand, cause), v)| BreakdownEntry {
                level: acc.memory_levels[l].name.clone(),
                operand,
                cause,
                reads: v.reads,
                writes: v.writes,
                energy_pj: v.energy_pj,
            })
            .collect();
        CostResult {
            strategy_id,
            energy_pj,
            mac_energy_pj,
            latency_cycles: stacks.iter().map(|s| s.latency_cycles).sum(),
            mac_count: stacks.iter().map(|s| s.mac_count).sum(),
            tile_type_count: stacks.iter().map(|s| s.tile_type_count).sum(),
            breakdown,
            entries,
            raw_accesses: stacks.iter().map(|s| s.raw_accesses).sum(),
            stacks,
        }
    }

    pub fn breakdown_accesses(&self) -> u64 {
        self.breakdown.values().map(AccessTotals::accesses).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

/// Evaluates strategies of one workload on one accelerator, sharing a
/// mapper cache across calls.
#[derive(Debug)]
pub struct Evaluator {
    pub graph: WorkloadGraph,
    pub acc: Accelerator,
    cache: MapperCache,
}

impl Evaluator {
    pub fn new(graph: WorkloadGraph, acc: Accelerator) -> Evaluator {
        Evaluator { graph, acc, cache: MapperCache::new() }
    }

    pub fn mapper_cache_len(&self) -> usize {
        self.cache.len()
    }

    /// Greedy weight-capacity fusion of this workload.
    pub fn auto_plan(&self) -> StackPlan {
        auto_stack(&self.graph, &self.acc)
    }

    pub fn evaluate(&self, strategy: &DfStrategy) -> Result<CostResult, DseError> {
        if strategy.per_stack.len() != strategy.plan.len() {
            return Err(DseError::Strategy(format!(
                "{} stack strategies for {} stacks",
                strategy.per_stack.len(),
                strategy.plan.len()
            )));
        }
        let stacks = strategy
            .plan
            .stacks
            .iter()
            .zip(&strategy.per_stack)
            .map(|(stack, s)| self.evaluate_stack(stack, *s, strategy.target, strategy.lpf_limit))
            .collect::<Result<Vec<_>, _>>()?;
        // ids use the tile sizes after clamping to each stack's output
        let id = combined_id(&stacks.iter().map(|s| s.strategy).collect::<Vec<_>>());
        Ok(CostResult::from_stacks(&self.acc, id, stacks))
    }

    /// Cost of one stack. Tile sizes larger than the stack output are clamped.
    pub fn evaluate_stack(
        &self,
        stack: &Stack,
        strategy: StackStrategy,
        target: OptimizationTarget,
        lpf_limit: usize,
    ) -> Result<StackResult, DseError> {
        let geometry = StackGeometry::new(&self.graph, stack);
        let (ox, oy) = geometry.output_dims();
        let strategy = StackStrategy { tx: strategy.tx.min(ox), ty: strategy.ty.min(oy), ..strategy };
        let tiling = Tiling::new(geometry, strategy.mode, strategy.tx, strategy.ty)?;
        let geometry = &tiling.geometry;
        let types = tiling.tile_types();

        let mut breakdown = Breakdown::new();
        let mut mac_count = 0u64;
        let mut mac_energy = 0.0;
        let mut latency = 0u64;
        let mut raw_accesses = 0u64;
        for tt in &types {
            let mult = tt.multiplicity;
            let tile = &tt.attr;
            let demand = DataDemand::new(geometry, tile);
            let placement = place(&self.acc, geometry, tile, &demand);

            let copies: CopyCost = price(&self.acc, copy_actions(&self.acc, geometry, tile, &placement));
            let mut tile_latency = copies.latency_cycles;
            for hop in &copies.hops {
                let (src, dst) = (&self.acc.memory_levels[hop.src], &self.acc.memory_levels[hop.dst]);
                let src_e = hop.src_words as f64 * src.read_energy_pj;
                let dst_e = hop.dst_words as f64 * dst.write_energy_pj;
                breakdown
                    .entry((hop.src, CopyCost::operand_at(&self.acc, hop.src), Cause::Copy))
                    .or_default()
                    .add(hop.elements * mult, 0, src_e * mult as f64);
                breakdown
                    .entry((hop.dst, CopyCost::operand_at(&self.acc, hop.dst), Cause::Copy))
                    .or_default()
                    .add(0, hop.elements * mult, dst_e * mult as f64);
                raw_accesses += 2 * hop.elements * mult;
            }

            for (p, sl) in geometry.layers.iter().enumerate() {
                let region = tile.maps[sl.output_map].compute;
                if region.is_empty() {
                    continue;
                }
                let i_bits = sl.inputs.first().map(|&m| geometry.maps[m].bits as u64).unwrap_or(8);
                let input = tile.required[p].first().copied().unwrap_or(region);
                let inst = LayerInstance::new(&sl.layer, region.width(), region.height(), i_bits)
                    .with_input(input.width(), input.height());
                let capped = derive_capped_accelerator(&self.acc, &placement, &demand, p)?;
                let r = self
                    .cache
                    .search(&inst, &capped, lpf_limit, target)
                    .map_err(|source| DseError::Mapper { layer: sl.layer.id, source })?;
                mac_count += r.cost.mac_count * mult;
                mac_energy += r.cost.mac_energy_pj * mult as f64;
                tile_latency += r.cost.latency_cycles;
                for a in &r.cost.accesses {
                    let cause = if a.operand == Operand::W { Cause::Weight } else { Cause::Activation };
                    breakdown
                        .entry((a.level, a.operand, cause))
                        .or_default()
                        .add(a.reads * mult, a.writes * mult, a.energy_pj * mult as f64);
                    raw_accesses += (a.reads + a.writes) * mult;
                }
            }
            latency += tile_latency * mult;
        }
        let energy_pj = mac_energy + breakdown.values().map(|v| v.energy_pj).sum::<f64>();
        Ok(StackResult {
            layers: stack.layers.clone(),
            strategy,
            tile_count: tiling.tile_count(),
            tile_type_count: types.len(),
            mac_count,
            energy_pj,
            mac_energy_pj: mac_energy,
            latency_cycles: latency,
            breakdown,
            raw_accesses,
        })
    }

    /// Evaluates every grid point as a uniform strategy over `plan`. Rows keep
    /// grid order whatever the thread count; per-point failures stay in their row.
    pub fn sweep(&self, plan: &StackPlan, grid: &SweepGrid, settings: SweepSettings) -> Result<Vec<SweepRow>, DseError> {
        let points = grid.points();
        if points.is_empty() {
            return Err(DseError::EmptyGrid);
        }
        self.sweep_points(plan, &points, settings)
    }

    pub fn sweep_points(
        &self,
        plan: &StackPlan,
        points: &[StackStrategy],
        settings: SweepSettings,
    ) -> Result<Vec<SweepRow>, DseError> {
        if points.is_empty() {
            return Err(DseError::EmptyGrid);
        }
        let run = |s: &StackStrategy| {
            let strategy = DfStrategy::uniform(plan.clone(), s.tx, s.ty, s.mode)
                .with_target(settings.target)
                .with_lpf_limit(settings.lpf_limit);
            SweepRow {
                strategy: *s,
                strategy_id: strategy_id(s),
                result: self.evaluate(&strategy).map_err(|e| e.to_string()),
            }
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.threads)
            .build()
            .map_err(|e| DseError::Strategy(format!("thread pool: {e}")))?;
        Ok(pool.install(|| points.par_iter().map(run).collect()))
    }

    /// Picks each stack's best grid point independently and evaluates the
    /// combination. Ties keep the earlier grid point.
    pub fn best_combination(
        &self,
        plan: &StackPlan,
        grid: &SweepGrid,
        settings: SweepSettings,
    ) -> Result<(DfStrategy, CostResult), DseError> {
        let points = grid.points();
        if points.is_empty() {
            return Err(DseError::EmptyGrid);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.threads)
            .build()
            .map_err(|e| DseError::Strategy(format!("thread pool: {e}")))?;
        let mut per_stack = Vec::with_capacity(plan.len());
        for stack in &plan.stacks {
            let results: Vec<Result<StackResult, DseError>> = pool.install(|| {
                points
                    .par_iter()
                    .map(|p| self.evaluate_stack(stack, *p, settings.target, settings.lpf_limit))
                    .collect()
            });
            let mut best: Option<(f64, StackStrategy)> = None;
            for (p, r) in points.iter().zip(results) {
                let Ok(r) = r else { continue };
                let score = settings.target.score(r.energy_pj, r.latency_cycles);
                if best.is_none_or(|(b, _)| score < b) {
                    best = Some((score, *p));
                }
            }
            let (_, s) = best.ok_or_else(|| DseError::Strategy("no grid point is feasible for a stack".into()))?;
            per_stack.push(s);
        }
        let strategy = DfStrategy {
            plan: plan.clone(),
            per_stack,
            target: settings.target,
            lpf_limit: settings.lpf_limit,
        };
        let result = self.evaluate(&strategy)?;
        Ok((strategy, result))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub target: OptimizationTarget,
    pub lpf_limit: usize,
    /// Worker threads; 0 lets rayon choose.
    pub threads: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings { target: OptimizationTarget::Energy, lpf_limit: DEFAULT_LPF_LIMIT, threads: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub tx: Vec<u64>,
    pub ty: Vec<u64>,
    pub modes: Vec<OverlapMode>,
}

impl SweepGrid {
    /// The 6 x 6 tile grid used for 960 x 540 outputs, in all three modes.
    pub fn reference() -> SweepGrid {
        SweepGrid {
            tx: vec![1, 4, 16, 60, 240, 960],
            ty: vec![1, 4, 18, 72, 270, 540],
            modes: OverlapMode::ALL.to_vec(),
        }
    }

    /// Points ordered by mode, then Tx, then Ty.
    pub fn points(&self) -> Vec<StackStrategy> {
        let mut out = Vec::with_capacity(self.modes.len() * self.tx.len() * self.ty.len());
        for &mode in &self.modes {
            for &tx in &self.tx {
                for &ty in &self.ty {
                    out.push(StackStrategy { tx, ty, mode });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub strategy: StackStrategy,
    pub strategy_id: String,
    pub result: Result<CostResult, String>,
}

/// Index of the best successful row under `target`; the first row wins ties.
pub fn best_row(rows: &[SweepRow], target: OptimizationTarget) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, row) in rows.iter().enumerate() {
        if let Ok(r) = &row.result {
            let score = target.score(r.energy_pj, r.latency_cycles);
            if best.is_none_or(|(b, _)| score < b) {
                best = Some((score, i));
            }
        }
    }
    best.map(|(_, i)| i)
}
