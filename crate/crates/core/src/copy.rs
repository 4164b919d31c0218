//! Data copy actions between memory levels that the single-layer mapper does
//! not see: moving a producer's output to where the consumer reads its input,
//! filling overlap caches, and reading cached strips back.

use serde::{Deserialize, Serialize};

use crate::allocation::Placement;
use crate::hardware::{Accelerator, Operand};
use crate::tiling::{MapSource, StackGeometry, TileAttr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CopyKind {
    /// Freshly produced (or fetched) data moved to the consumer's input level.
    Fresh,
    /// Cached strip read back for the consumer.
    CacheRead,
    /// Newly computed overlap written into a cache.
    CacheStore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyAction {
    pub kind: CopyKind,
    pub map: usize,
    pub src: usize,
    pub dst: usize,
    pub elements: u64,
    pub element_bits: u64,
}

impl CopyAction {
    pub fn bits(&self) -> u64 {
        self.elements * self.element_bits
    }
}

/// One memory-to-memory transfer on the route of a copy action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    pub src: usize,
    pub dst: usize,
    pub elements: u64,
    pub element_bits: u64,
    pub energy_pj: f64,
    pub src_words: u64,
    pub dst_words: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyCost {
    pub actions: Vec<CopyAction>,
    pub hops: Vec<Hop>,
    pub energy_pj: f64,
    pub latency_cycles: u64,
}

impl CopyCost {
    /// Activation-label operand used when reporting copy traffic at `level`.
    pub fn operand_at(acc: &Accelerator, level: usize) -> Operand {
        if acc.memory_levels[level].serves(Operand::I) {
            Operand::I
        } else {
            Operand::O
        }
    }
}

/// Lists the copy actions of one tile.
pub fn copy_actions(acc: &Accelerator, geometry: &StackGeometry, tile: &TileAttr, placement: &Placement) -> Vec<CopyAction> {
    let dram = acc.dram();
    let producer_level = |m: usize| match geometry.maps[m].source {
        MapSource::Layer(id) => {
            let p = geometry
                .layers
                .iter()
                .position(|l| l.layer.id == id)
                .expect("producer is in the stack");
            placement.layers[p].o_top
        }
        _ => dram,
    };
    let mut out = Vec::new();
    let mut push = |kind, map, src, dst, elements: u64| {
        if src != dst && elements > 0 {
            out.push(CopyAction {
                kind,
                map,
                src,
                dst,
                elements,
                element_bits: geometry.maps[map].element_bits(),
            });
        }
    };
    for (p, sl) in geometry.layers.iter().enumerate() {
        let dst = placement.layers[p].i_top;
        for (slot, &m) in sl.inputs.iter().enumerate() {
            let req = tile.required[p][slot];
            let mt = &tile.maps[m];
            let src = producer_level(m);
            push(CopyKind::Fresh, m, src, dst, mt.compute.intersect(&req).area());
            let cache = placement.caches[m];
            let left = mt.left_cached.intersect(&req).area();
            push(CopyKind::CacheRead, m, cache.left.unwrap_or(src), dst, left);
            let row = mt.row_cached.intersect(&req).area();
            push(CopyKind::CacheRead, m, cache.row.unwrap_or(src), dst, row);
        }
    }
    for (m, map) in geometry.maps.iter().enumerate() {
        if map.consumers.is_empty() {
            continue;
        }
        let src = producer_level(m);
        let mt = &tile.maps[m];
        if let Some(l) = placement.caches[m].left {
            push(CopyKind::CacheStore, m, src, l, mt.left_store.area());
        }
        if let Some(l) = placement.caches[m].row {
            push(CopyKind::CacheStore, m, src, l, mt.row_store.area());
        }
    }
    out
}

/// Levels visited moving data from `src` to `dst`, endpoints included.
pub fn route(acc: &Accelerator, src: usize, dst: usize) -> Vec<usize> {
    if src == dst {
        return vec![src];
    }
    if acc.has_direct_path(src, dst) {
        return vec![src, dst];
    }
    let chains: Vec<Vec<usize>> = Operand::ALL.iter().map(|&op| acc.operand_chain(op)).collect();
    let segment = |chain: &[usize], a: usize, b: usize| -> Vec<usize> {
        let ia = chain.iter().position(|&l| l == a).unwrap();
        let ib = chain.iter().position(|&l| l == b).unwrap();
        if ia <= ib {
            chain[ia..=ib].to_vec()
        } else {
            chain[ib..=ia].iter().rev().copied().collect()
        }
    };
    let mut best: Option<Vec<usize>> = None;
    for ca in chains.iter().filter(|c| c.contains(&src)) {
        for cb in chains.iter().filter(|c| c.contains(&dst)) {
            // Only climb: the meeting level sits at or above both endpoints.
            for &h in ca.iter().filter(|&&h| h >= src.max(dst) && cb.contains(&h)) {
                let mut path = segment(ca, src, h);
                path.extend(segment(cb, h, dst).into_iter().skip(1));
                let better = match &best {
                    None => true,
                    Some(b) => path.len() < b.len() || (path.len() == b.len() && path < *b),
                };
                if better {
                    best = Some(path);
                }
            }
        }
    }
    best.expect("every chain ends at the off-chip level")
}

/// Prices a set of copy actions. Latency is the busiest port's total demand.
pub fn price(acc: &Accelerator, actions: Vec<CopyAction>) -> CopyCost {
    let mut hops = Vec::new();
    let mut energy = 0.0;
    let mut port_bits: Vec<Vec<u64>> = acc.memory_levels.iter().map(|l| vec![0; l.ports.len()]).collect();
    for a in &actions {
        let path = route(acc, a.src, a.dst);
        for w in path.windows(2) {
            let (s, d) = (&acc.memory_levels[w[0]], &acc.memory_levels[w[1]]);
            let bits = a.bits();
            let src_words = s.words_for(bits);
            let dst_words = d.words_for(bits);
            let e = src_words as f64 * s.read_energy_pj + dst_words as f64 * d.write_energy_pj;
            energy += e;
            port_bits[w[0]][s.read_port().expect("validated")] += src_words * s.word_length_bits;
            port_bits[w[1]][d.write_port().expect("validated")] += dst_words * d.word_length_bits;
            hops.push(Hop {
                src: w[0],
                dst: w[1],
                elements: a.elements,
                element_bits: a.element_bits,
                energy_pj: e,
                src_words,
                dst_words,
            });
        }
    }
    let latency = port_bits
        .iter()
        .enumerate()
        .flat_map(|(l, ports)| {
            ports
                .iter()
                .enumerate()
                .map(move |(pi, &bits)| bits.div_ceil(acc.memory_levels[l].ports[pi].bw_bits_per_cycle))
        })
        .max()
        .unwrap_or(0);
    CopyCost { actions, hops, energy_pj: energy, latency_cycles: latency }
}
