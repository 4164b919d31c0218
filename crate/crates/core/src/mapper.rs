//! Single-layer temporal mapping search and analytical cost model.
//!
//! Loop bounds left after spatial unrolling are split into prime factors,
//! every ordering of the factors is tried, loops are assigned to memory
//! levels bottom-up as far as capacity allows, and the cheapest ordering
//! under the optimization target wins.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hardware::{Accelerator, Dim, Operand};
use crate::workload::{Layer, LayerKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapperError {
    #[error("lpf limit must be >= 1")]
    LpfLimit,
    #[error("no legal mapping: level {level} cannot hold even the innermost data tile")]
    NoLegalMapping { level: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum OptimizationTarget {
    #[default]
    Energy,
    Latency,
    Edp,
    /// `energy * pJ + latency * cycles`
    Weighted { energy: f64, latency: f64 },
}

impl OptimizationTarget {
    pub fn score(&self, energy_pj: f64, latency_cycles: u64) -> f64 {
        let lat = latency_cycles as f64;
        match *self {
            OptimizationTarget::Energy => energy_pj,
            OptimizationTarget::Latency => lat,
            OptimizationTarget::Edp => energy_pj * lat,
            OptimizationTarget::Weighted { energy, latency } => energy * energy_pj + latency * lat,
        }
    }

    /// Secondary score used to break ties on the primary one.
    fn tie_score(&self, energy_pj: f64, latency_cycles: u64) -> f64 {
        match self {
            OptimizationTarget::Latency => energy_pj,
            _ => latency_cycles as f64,
        }
    }

    fn key(&self) -> (u8, u64, u64) {
        match *self {
            OptimizationTarget::Energy => (0, 0, 0),
            OptimizationTarget::Latency => (1, 0, 0),
            OptimizationTarget::Edp => (2, 0, 0),
            OptimizationTarget::Weighted { energy, latency } => (3, energy.to_bits(), latency.to_bits()),
        }
    }
}

impl fmt::Display for OptimizationTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizationTarget::Energy => f.write_str("energy"),
            OptimizationTarget::Latency => f.write_str("latency"),
            OptimizationTarget::Edp => f.write_str("edp"),
            OptimizationTarget::Weighted { energy, latency } => write!(f, "weighted:{energy},{latency}"),
        }
    }
}

impl std::str::FromStr for OptimizationTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "energy" => Ok(OptimizationTarget::Energy),
            "latency" => Ok(OptimizationTarget::Latency),
            "edp" => Ok(OptimizationTarget::Edp),
            _ => {
                let rest = s
                    .strip_prefix("weighted:")
                    .ok_or_else(|| format!("unknown target `{s}` (energy, latency, edp, weighted:E,L)"))?;
                let (e, l) = rest
                    .split_once(',')
                    .ok_or_else(|| format!("weighted target needs two weights, got `{rest}`"))?;
                let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("bad weight `{v}`: {e}"));
                Ok(OptimizationTarget::Weighted { energy: parse(e)?, latency: parse(l)? })
            }
        }
    }
}

/// Loop bounds and precisions of one layer over one tile.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerInstance {
    pub kind: LayerKind,
    /// K, C, OX, OY, FX, FY. C is 1 for channel-wise layers.
    pub bounds: [u64; 6],
    pub stride: [u64; 2],
    /// Input width and height actually read; smaller than the sliding
    /// window span at padded borders.
    pub input: [u64; 2],
    pub i_bits: u64,
    pub w_bits: u64,
    pub o_bits: u64,
}

impl LayerInstance {
    /// Instance computing an `ox` x `oy` output region of `layer`, reading
    /// inputs of `i_bits` precision.
    pub fn new(layer: &Layer, ox: u64, oy: u64, i_bits: u64) -> LayerInstance {
        let c = if layer.kind.is_channelwise() { 1 } else { layer.c };
        let input = [
            window(ox, layer.fx, layer.stride[0]),
            window(oy, layer.fy, layer.stride[1]),
        ];
        LayerInstance {
            kind: layer.kind,
            bounds: [layer.k, c, ox, oy, layer.fx, layer.fy],
            stride: layer.stride,
            input,
            i_bits,
            w_bits: layer.weight_bits as u64,
            o_bits: layer.act_bits as u64,
        }
    }

    pub fn with_input(mut self, width: u64, height: u64) -> LayerInstance {
        self.input = [width, height];
        self
    }

    pub fn mac_count(&self) -> u64 {
        self.bounds.iter().product()
    }

    fn bits(&self, op: Operand) -> u64 {
        match op {
            Operand::W => self.w_bits,
            Operand::I => self.i_bits,
            Operand::O => self.o_bits,
        }
    }

    /// Input operands read per MAC.
    fn i_mult(&self) -> u64 {
        if self.kind == LayerKind::ElementwiseAdd {
            2
        } else {
            1
        }
    }

    pub fn relevant(&self, op: Operand, d: Dim) -> bool {
        match op {
            Operand::W => !matches!(d, Dim::OX | Dim::OY),
            Operand::I => d != Dim::K || self.kind.is_channelwise(),
            Operand::O => matches!(d, Dim::K | Dim::OX | Dim::OY),
        }
    }

    /// Distinct elements of `op` touched by a loop nest with per-dimension
    /// extents `ext` (indexed by [`Dim::index`]).
    /// Extents beyond the real bounds (padding of a non-divisible
    /// unrolling) touch no data.
    pub fn footprint(&self, op: Operand, ext: &[u64; 6]) -> u64 {
        let e = |d: Dim| ext[d.index()].min(self.bounds[d.index()]);
        let (k, c, ox, oy, fx, fy) = (e(Dim::K), e(Dim::C), e(Dim::OX), e(Dim::OY), e(Dim::FX), e(Dim::FY));
        match op {
            Operand::W if self.kind.has_weights() => k * c * fx * fy,
            Operand::W => 0,
            Operand::I => {
                let ch = if self.kind.is_channelwise() { k } else { c };
                let wx = window(ox, fx, self.stride[0]).min(self.input[0]);
                let wy = window(oy, fy, self.stride[1]).min(self.input[1]);
                ch * wx * wy * self.i_mult()
            }
            Operand::O => k * ox * oy,
        }
    }
}

fn window(o: u64, f: u64, s: u64) -> u64 {
    if f >= s {
        (o - 1) * s + f
    } else {
        o * f
    }
}

/// Ordered loops (innermost first) with each operand's level boundaries:
/// `boundaries[op][i]` loops sit at or below the `i`-th level of that
/// operand's chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalMapping {
    pub spatial: [u64; 6],
    pub loops: Vec<(Dim, u64)>,
    pub chains: [Vec<usize>; 3],
    pub boundaries: [Vec<usize>; 3],
}

impl TemporalMapping {
    pub fn dump(&self, acc: &Accelerator) -> String {
        let mut out = String::new();
        let spatial: Vec<String> = Dim::ALL
            .iter()
            .filter(|d| self.spatial[d.index()] > 1)
            .map(|d| format!("{d}{}", self.spatial[d.index()]))
            .collect();
        out.push_str(&format!("spatial: {}\n", spatial.join(" ")));
        for (i, (d, f)) in self.loops.iter().enumerate().rev() {
            let mut marks = Vec::new();
            for op in Operand::ALL {
                for (ci, &b) in self.boundaries[op.index()].iter().enumerate() {
                    if b == i + 1 && ci + 1 < self.chains[op.index()].len() {
                        marks.push(format!("{op}@{}", acc.memory_levels[self.chains[op.index()][ci]].name));
                    }
                }
            }
            out.push_str(&format!("for {d} in 0..{f}    {}\n", marks.join(" ")));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelAccess {
    pub level: usize,
    pub operand: Operand,
    /// Element reads and writes.
    pub reads: u64,
    pub writes: u64,
    pub energy_pj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub mac_count: u64,
    pub mac_energy_pj: f64,
    /// MAC energy plus every [`LevelAccess`] entry.
    pub energy_pj: f64,
    pub ideal_cycles: u64,
    pub latency_cycles: u64,
    pub spatial_utilization: f64,
    pub accesses: Vec<LevelAccess>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingResult {
    pub mapping: TemporalMapping,
    pub cost: LayerCost,
}

fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n.is_multiple_of(p) {
            out.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Factor multisets searched for temporal bounds `t`: the full prime
/// factorization followed by successive coarsenings, each merging the
/// globally smallest factor with the next smallest of the same dimension.
/// Only sets with at most `lpf_limit` factors are kept, so a larger limit
/// always searches a superset.
pub fn factor_sets(t: &[u64; 6], lpf_limit: usize) -> Vec<Vec<(Dim, u64)>> {
    let mut per_dim: Vec<Vec<u64>> = t.iter().map(|&b| prime_factors(b)).collect();
    let mut sets = Vec::new();
    loop {
        let total: usize = per_dim.iter().map(Vec::len).sum();
        if total <= lpf_limit {
            let mut set: Vec<(Dim, u64)> = Dim::ALL
                .iter()
                .flat_map(|&d| per_dim[d.index()].iter().map(move |&f| (d, f)))
                .collect();
            set.sort();
            sets.push(set);
        }
        // smallest factor of any dimension that still has two or more
        let pick = Dim::ALL
            .iter()
            .filter(|d| per_dim[d.index()].len() >= 2)
            .min_by_key(|d| (per_dim[d.index()][0], d.index()));
        let Some(&d) = pick else { break };
        let fs = &mut per_dim[d.index()];
        let merged = fs[0] * fs[1];
        fs.drain(0..2);
        fs.push(merged);
        fs.sort_unstable();
    }
    if sets.is_empty() {
        // Fewer dimensions than the limit allows is impossible to satisfy;
        // fall back to the coarsest set.
        let mut set: Vec<(Dim, u64)> = Dim::ALL
            .iter()
            .flat_map(|&d| per_dim[d.index()].iter().map(move |&f| (d, f)))
            .collect();
        set.sort();
        sets.push(set);
    }
    sets
}

/// Advances `v` to the next lexicographic permutation; false when `v` was
/// the last one.
fn next_permutation<T: Ord>(v: &mut [T]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Per-layer evaluation context on a capped accelerator.
struct Ctx<'a> {
    inst: &'a LayerInstance,
    acc: &'a Accelerator,
    spatial: [u64; 6],
    temporal: [u64; 6],
    chains: [Vec<usize>; 3],
    /// Levels serving something: (level, served mask).
    levels: Vec<(usize, [bool; 3])>,
    active: [bool; 3],
}

impl<'a> Ctx<'a> {
    fn new(inst: &'a LayerInstance, acc: &'a Accelerator) -> Ctx<'a> {
        let mut spatial = [1u64; 6];
        let mut temporal = [1u64; 6];
        for d in Dim::ALL {
            let i = d.index();
            spatial[i] = acc.spatial_factor(d).min(inst.bounds[i]).max(1);
            temporal[i] = inst.bounds[i].div_ceil(spatial[i]);
        }
        let chains = Operand::ALL.map(|op| acc.operand_chain(op));
        let levels = acc
            .memory_levels
            .iter()
            .enumerate()
            .map(|(l, m)| (l, Operand::ALL.map(|op| m.serves(op))))
            .filter(|(_, mask)| mask.iter().any(|&b| b))
            .collect();
        let active = [inst.kind.has_weights(), true, true];
        Ctx { inst, acc, spatial, temporal, chains, levels, active }
    }

    /// `ext[b]` = per-dimension extents of the loops below boundary `b`.
    fn extents(&self, loops: &[(Dim, u64)]) -> Vec<[u64; 6]> {
        let mut ext = Vec::with_capacity(loops.len() + 1);
        let mut cur = self.spatial;
        ext.push(cur);
        for (d, f) in loops {
            cur[d.index()] *= f;
            ext.push(cur);
        }
        ext
    }

    /// Greedy bottom-up assignment of loop boundaries to levels. An operand
    /// whose level is already filled by another operand's top-level data
    /// bypasses that level. Fails with the level that cannot hold its
    /// mandatory data.
    #[allow(clippy::type_complexity)]
    fn allocate(&self, loops: &[(Dim, u64)], ext: &[[u64; 6]]) -> Result<([Vec<usize>; 3], [Vec<usize>; 3]), usize> {
        let n = loops.len();
        let mut chains: [Vec<usize>; 3] = Default::default();
        let mut bounds: [Vec<usize>; 3] = Default::default();
        let mut cur = [0usize; 3];
        for &(l, served) in &self.levels {
            let cap = self.acc.memory_levels[l].capacity_bits;
            let is_top = |op: Operand| self.chains[op.index()].last() == Some(&l);
            let mut mask = served;
            let bits_at = |mask: &[bool; 3], joint: usize| -> u64 {
                Operand::ALL
                    .iter()
                    .filter(|op| mask[op.index()] && self.active[op.index()])
                    .map(|&op| {
                        let b = if is_top(op) { n } else { cur[op.index()].max(joint) };
                        self.inst.footprint(op, &ext[b]) * self.inst.bits(op)
                    })
                    .sum()
            };
            if bits_at(&mask, 0) > cap {
                for op in Operand::ALL {
                    // the innermost level feeds the MACs and cannot be skipped
                    if !is_top(op) && !chains[op.index()].is_empty() {
                        mask[op.index()] = false;
                    }
                }
                if bits_at(&mask, 0) > cap {
                    return Err(l);
                }
            }
            let mut joint = 0;
            while joint < n && bits_at(&mask, joint + 1) <= cap {
                joint += 1;
            }
            for op in Operand::ALL {
                if !mask[op.index()] {
                    continue;
                }
                let b = if is_top(op) { n } else { cur[op.index()].max(joint) };
                cur[op.index()] = b;
                chains[op.index()].push(l);
                bounds[op.index()].push(b);
            }
        }
        Ok((chains, bounds))
    }

    fn evaluate(&self, mapping: &TemporalMapping) -> LayerCost {
        let inst = self.inst;
        let loops = &mapping.loops;
        let n = loops.len();
        let ext = self.extents(loops);
        let macs = inst.mac_count();
        let nl = self.acc.memory_levels.len();
        let mut reads = vec![[0u64; 3]; nl];
        let mut writes = vec![[0u64; 3]; nl];
        let mut prep_bits: Vec<(usize, usize, u64)> = Vec::new();
        for op in Operand::ALL {
            let oi = op.index();
            if !self.active[oi] {
                continue;
            }
            let chain = &mapping.chains[oi];
            let bnd = &mapping.boundaries[oi];
            let lowest = chain[0];
            match op {
                Operand::W => reads[lowest][oi] += macs,
                Operand::I => reads[lowest][oi] += macs * inst.i_mult(),
                Operand::O => {
                    reads[lowest][oi] += macs;
                    writes[lowest][oi] += macs;
                }
            }
            for i in 0..chain.len() - 1 {
                let (lo, hi, b) = (chain[i], chain[i + 1], bnd[i]);
                let s = inst.footprint(op, &ext[b]);
                let first_rel = (b..n).find(|&j| inst.relevant(op, loops[j].0)).unwrap_or(n);
                let r: u64 = loops[first_rel..].iter().map(|l| l.1).product();
                let d: u64 = loops[b..]
                    .iter()
                    .filter(|l| inst.relevant(op, l.0))
                    .map(|l| l.1)
                    .product();
                match op {
                    Operand::O => {
                        reads[lo][oi] += r * s;
                        writes[hi][oi] += r * s;
                        reads[hi][oi] += (r - d) * s;
                        writes[lo][oi] += (r - d) * s;
                    }
                    _ => {
                        reads[hi][oi] += r * s;
                        writes[lo][oi] += r * s;
                    }
                }
                prep_bits.push((lo, hi, s * inst.bits(op)));
            }
        }

        let mut accesses = Vec::new();
        let mac_energy = macs as f64 * self.acc.unit_mac_energy_pj;
        let mut energy = mac_energy;
        for l in 0..nl {
            let m = &self.acc.memory_levels[l];
            for op in Operand::ALL {
                let oi = op.index();
                let (r, w) = (reads[l][oi], writes[l][oi]);
                if r == 0 && w == 0 {
                    continue;
                }
                let scale = inst.bits(op) as f64 / m.word_length_bits as f64;
                let e = (r as f64 * m.read_energy_pj + w as f64 * m.write_energy_pj) * scale;
                energy += e;
                accesses.push(LevelAccess { level: l, operand: op, reads: r, writes: w, energy_pj: e });
            }
        }

        let ideal: u64 = self.temporal.iter().product();
        // Port demand of inter-level traffic; accesses by the MAC array
        // itself are not limited by port bandwidth.
        let mut port_bits: Vec<Vec<u64>> = self.acc.memory_levels.iter().map(|m| vec![0; m.ports.len()]).collect();
        for op in Operand::ALL {
            let oi = op.index();
            if !self.active[oi] {
                continue;
            }
            let chain = &mapping.chains[oi];
            let lowest = chain[0];
            for &l in chain {
                let m = &self.acc.memory_levels[l];
                let (mut r, mut w) = (reads[l][oi], writes[l][oi]);
                if l == lowest {
                    match op {
                        Operand::W => r -= macs,
                        Operand::I => r -= macs * inst.i_mult(),
                        Operand::O => {
                            r -= macs;
                            w -= macs;
                        }
                    }
                }
                let bits = inst.bits(op);
                port_bits[l][m.read_port().expect("validated")] += r * bits;
                port_bits[l][m.write_port().expect("validated")] += w * bits;
            }
        }
        let demand = port_bits
            .iter()
            .enumerate()
            .flat_map(|(l, ports)| {
                ports
                    .iter()
                    .enumerate()
                    .map(move |(pi, &b)| b.div_ceil(self.acc.memory_levels[l].ports[pi].bw_bits_per_cycle))
            })
            .max()
            .unwrap_or(0);
        let prep: u64 = prep_bits
            .iter()
            .map(|&(lo, hi, bits)| {
                let (ml, mh) = (&self.acc.memory_levels[lo], &self.acc.memory_levels[hi]);
                let bw = ml.ports[ml.write_port().expect("validated")]
                    .bw_bits_per_cycle
                    .min(mh.ports[mh.read_port().expect("validated")].bw_bits_per_cycle);
                bits.div_ceil(bw)
            })
            .sum();
        let utilization = Dim::ALL
            .iter()
            .map(|d| {
                let u = self.acc.spatial_factor(*d);
                (inst.bounds[d.index()] as f64 / u as f64).min(1.0)
            })
            .product();
        LayerCost {
            mac_count: macs,
            mac_energy_pj: mac_energy,
            energy_pj: energy,
            ideal_cycles: ideal,
            latency_cycles: ideal.max(demand) + prep,
            spatial_utilization: utilization,
            accesses,
        }
    }
}

/// Evaluates a fixed loop ordering with greedy level allocation.
pub fn evaluate_ordering(
    inst: &LayerInstance,
    acc: &Accelerator,
    loops: Vec<(Dim, u64)>,
) -> Result<MappingResult, MapperError> {
    let ctx = Ctx::new(inst, acc);
    let ext = ctx.extents(&loops);
    let (chains, boundaries) = ctx.allocate(&loops, &ext).map_err(|l| MapperError::NoLegalMapping {
        level: acc.memory_levels[l].name.clone(),
    })?;
    let mapping = TemporalMapping { spatial: ctx.spatial, loops, chains, boundaries };
    let cost = ctx.evaluate(&mapping);
    Ok(MappingResult { mapping, cost })
}

/// Searches all orderings of the admissible factor sets and returns the best
/// mapping; ties go to the lexicographically smallest ordering.
pub fn search_mapping(
    inst: &LayerInstance,
    acc: &Accelerator,
    lpf_limit: usize,
    target: OptimizationTarget,
) -> Result<MappingResult, MapperError> {
    if lpf_limit == 0 {
        return Err(MapperError::LpfLimit);
    }
    let ctx = Ctx::new(inst, acc);
    let mut best: Option<(f64, f64, Vec<(Dim, u64)>, MappingResult)> = None;
    let mut last_err = None;
    for set in factor_sets(&ctx.temporal, lpf_limit) {
        let mut loops = set;
        loop {
            let ext = ctx.extents(&loops);
            match ctx.allocate(&loops, &ext) {
                Ok((chains, boundaries)) => {
                    let mapping = TemporalMapping {
                        spatial: ctx.spatial,
                        loops: loops.clone(),
                        chains,
                        boundaries,
                    };
                    let cost = ctx.evaluate(&mapping);
                    let score = target.score(cost.energy_pj, cost.latency_cycles);
                    let tie = target.tie_score(cost.energy_pj, cost.latency_cycles);
                    let better = match &best {
                        None => true,
                        Some((bs, bt, bl, _)) => match score.total_cmp(bs) {
                            Ordering::Less => true,
                            Ordering::Greater => false,
                            Ordering::Equal => match tie.total_cmp(bt) {
                                Ordering::Less => true,
                                Ordering::Greater => false,
                                Ordering::Equal => loops < *bl,
                            },
                        },
                    };
                    if better {
                        best = Some((score, tie, loops.clone(), MappingResult { mapping, cost }));
                    }
                }
                Err(l) => last_err = Some(l),
            }
            if !next_permutation(&mut loops) {
                break;
            }
        }
    }
    match best {
        Some((_, _, _, r)) => Ok(r),
        None => Err(MapperError::NoLegalMapping {
            level: acc.memory_levels[last_err.unwrap_or(0)].name.clone(),
        }),
    }
}

/// Hashable description of what the mapper sees of an accelerator derived
/// from one base accelerator: per-level capacity and served operands.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct AccKey(Vec<(u64, u8)>);

impl AccKey {
    fn of(acc: &Accelerator) -> AccKey {
        AccKey(
            acc.memory_levels
                .iter()
                .map(|m| {
                    let mask = Operand::ALL
                        .iter()
                        .fold(0u8, |a, op| a | ((m.serves(*op) as u8) << op.index()));
                    (m.capacity_bits, mask)
                })
                .collect(),
        )
    }
}

type CacheKey = (LayerInstance, AccKey, usize, (u8, u64, u64));

/// Memoizes mapper searches for accelerators that differ from one base
/// accelerator only in capacities and served operands.
#[derive(Debug, Default)]
pub struct MapperCache {
    map: Mutex<HashMap<CacheKey, Result<MappingResult, MapperError>>>,
}

impl MapperCache {
    pub fn new() -> MapperCache {
        MapperCache::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn search(
        &self,
        inst: &LayerInstance,
        acc: &Accelerator,
        lpf_limit: usize,
        target: OptimizationTarget,
    ) -> Result<MappingResult, MapperError> {
        let key = (inst.clone(), AccKey::of(acc), lpf_limit, target.key());
        if let Some(r) = self.map.lock().unwrap().get(&key) {
            return r.clone();
        }
        let r = search_mapping(inst, acc, lpf_limit, target);
        self.map.lock().unwrap().insert(key, r.clone());
        r
    }
}
