//! Cross-layer tiling of a fused stack.
//!
//! The stack's final output map is cut into a row-major grid of tiles. For
//! every tile the required regions of all earlier feature maps are found by
//! walking the stack backwards, and the overlap with earlier tiles is either
//! recomputed or served from cached strips depending on the [`OverlapMode`].
//!
//! Backcalculation is separable: a tile's x extents depend only on its column
//! and its y extents only on its row. Both axes are therefore walked once and
//! tile attributes are assembled from a column slice and a row slice.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stack::Stack;
use crate::workload::{Layer, LayerId, WorkloadGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TileError {
    #[error("tile size {tx}x{ty} is outside 1..={ox} x 1..={oy}")]
    OutOfRange { tx: u64, ty: u64, ox: u64, oy: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OverlapMode {
    FullyRecompute,
    HCachedVRecompute,
    FullyCached,
}

impl OverlapMode {
    pub const ALL: [OverlapMode; 3] = [
        OverlapMode::FullyRecompute,
        OverlapMode::HCachedVRecompute,
        OverlapMode::FullyCached,
    ];

    pub fn from_index(i: u8) -> Option<OverlapMode> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    /// Overlap with the tile to the left is cached.
    pub fn caches_x(self) -> bool {
        !matches!(self, OverlapMode::FullyRecompute)
    }

    /// Overlap with the tile row above is cached.
    pub fn caches_y(self) -> bool {
        matches!(self, OverlapMode::FullyCached)
    }
}

impl fmt::Display for OverlapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverlapMode::FullyRecompute => "fully-recompute",
            OverlapMode::HCachedVRecompute => "h-cached-v-recompute",
            OverlapMode::FullyCached => "fully-cached",
        })
    }
}

/// Inclusive 1-D index range; empty when `hi < lo`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub lo: i64,
    pub hi: i64,
}

impl Span {
    pub const EMPTY: Span = Span { lo: 0, hi: -1 };

    pub fn new(lo: i64, hi: i64) -> Span {
        if hi < lo {
            Span::EMPTY
        } else {
            Span { lo, hi }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    pub fn len(&self) -> u64 {
        if self.is_empty() {
            0
        } else {
            (self.hi - self.lo + 1) as u64
        }
    }

    pub fn intersect(&self, other: &Span) -> Span {
        if self.is_empty() || other.is_empty() {
            return Span::EMPTY;
        }
        Span::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }

    pub fn envelope(&self, other: &Span) -> Span {
        match (self.is_empty(), other.is_empty()) {
            (true, _) => *other,
            (_, true) => *self,
            _ => Span::new(self.lo.min(other.lo), self.hi.max(other.hi)),
        }
    }
}

/// Rectangle of features `[x0, x1] x [y0, y1]` (inclusive) in one feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Region {
    pub const EMPTY: Region = Region { x0: 0, y0: 0, x1: -1, y1: -1 };

    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Region {
        Region::from_spans(Span::new(x0, x1), Span::new(y0, y1))
    }

    pub fn from_spans(x: Span, y: Span) -> Region {
        if x.is_empty() || y.is_empty() {
            Region::EMPTY
        } else {
            Region { x0: x.lo, y0: y.lo, x1: x.hi, y1: y.hi }
        }
    }

    pub fn x_span(&self) -> Span {
        Span::new(self.x0, self.x1)
    }

    pub fn y_span(&self) -> Span {
        Span::new(self.y0, self.y1)
    }

    pub fn is_empty(&self) -> bool {
        self.x1 < self.x0 || self.y1 < self.y0
    }

    pub fn width(&self) -> u64 {
        self.x_span().len()
    }

    pub fn height(&self) -> u64 {
        self.y_span().len()
    }

    pub fn area(&self) -> u64 {
        self.width() * self.height()
    }

    pub fn intersect(&self, other: &Region) -> Region {
        Region::from_spans(
            self.x_span().intersect(&other.x_span()),
            self.y_span().intersect(&other.y_span()),
        )
    }

    pub fn envelope(&self, other: &Region) -> Region {
        if self.is_empty() {
            return *other;
        }
        if other.is_empty() {
            return *self;
        }
        Region::from_spans(
            self.x_span().envelope(&other.x_span()),
            self.y_span().envelope(&other.y_span()),
        )
    }
}

/// Combines the cached regions several branches need from one feature map
/// into the outermost envelope.
pub fn merge_branch_cache(regions: &[Region]) -> Region {
    regions
        .iter()
        .fold(Region::EMPTY, |acc, r| acc.envelope(r))
}

fn div_floor(a: i64, b: i64) -> i64 {
    a.div_euclid(b)
}

fn div_ceil(a: i64, b: i64) -> i64 {
    -(-a).div_euclid(b)
}

/// Bounding range of input indices read by outputs `out` of a sliding window
/// with kernel `f`, stride `s` and leading padding `pad_lo`, clipped to an
/// input of length `in_len`. Computed exactly, so strides larger than the
/// kernel and outputs that only touch padding are handled.
pub fn backcalc_span(out: Span, f: u64, s: u64, pad_lo: u64, in_len: u64) -> Span {
    backcalc_clipped(out, f, s, pad_lo, in_len).0
}

/// [`backcalc_span`] plus whether the window was clipped by the low and high
/// map border (padding).
pub fn backcalc_clipped(out: Span, f: u64, s: u64, pad_lo: u64, in_len: u64) -> (Span, [bool; 2]) {
    if out.is_empty() || in_len == 0 {
        return (Span::EMPTY, [false; 2]);
    }
    let (f, s, p, n) = (f as i64, s as i64, pad_lo as i64, in_len as i64);
    // output x reads [x*s - p, x*s - p + f - 1]
    let raw_lo = out.lo * s - p;
    let raw_hi = out.hi * s - p + f - 1;
    let clip = [raw_lo < 0, raw_hi > n - 1];
    let x_lo = out.lo.max(div_ceil(p - f + 1, s));
    let x_hi = out.hi.min(div_floor(n - 1 + p, s));
    if x_hi < x_lo {
        return (Span::EMPTY, clip);
    }
    (Span::new((x_lo * s - p).max(0), (x_hi * s - p + f - 1).min(n - 1)), clip)
}

/// Input region a layer needs to compute the output region `out`
/// (no reuse from any cache).
pub fn required_input_region(layer: &Layer, out: Region) -> Region {
    let x = backcalc_span(
        out.x_span(),
        layer.fx,
        layer.stride[0],
        layer.pad[0],
        layer.input_width().max(0) as u64,
    );
    let y = backcalc_span(
        out.y_span(),
        layer.fy,
        layer.stride[1],
        layer.pad[2],
        layer.input_height().max(0) as u64,
    );
    Region::from_spans(x, y)
}

fn axis_tiles(len: u64, tile: u64) -> Vec<Span> {
    (0..len.div_ceil(tile))
        .map(|k| {
            let lo = (k * tile) as i64;
            Span::new(lo, (((k + 1) * tile).min(len)) as i64 - 1)
        })
        .collect()
}

/// Row-major tile grid over a stack output map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub columns: Vec<Span>,
    pub rows: Vec<Span>,
}

impl TileGrid {
    pub fn tile_count(&self) -> u64 {
        (self.columns.len() * self.rows.len()) as u64
    }

    pub fn region(&self, row: usize, col: usize) -> Region {
        Region::from_spans(self.columns[col], self.rows[row])
    }

    /// Regions in execution order: left to right, then top to bottom.
    pub fn regions(&self) -> impl Iterator<Item = Region> + '_ {
        (0..self.rows.len())
            .flat_map(move |r| (0..self.columns.len()).map(move |c| self.region(r, c)))
    }
}

pub fn tile_grid(ox: u64, oy: u64, tx: u64, ty: u64) -> Result<TileGrid, TileError> {
    if tx == 0 || ty == 0 || tx > ox || ty > oy {
        return Err(TileError::OutOfRange { tx, ty, ox, oy });
    }
    Ok(TileGrid {
        columns: axis_tiles(ox, tx),
        rows: axis_tiles(oy, ty),
    })
}

/// Where the data of a feature map comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MapSource {
    /// Produced inside the stack by this layer.
    Layer(LayerId),
    /// Produced by this layer in an earlier stack.
    External(LayerId),
    /// Network input read by this (first) layer.
    NetworkInput(LayerId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub source: MapSource,
    pub width: u64,
    pub height: u64,
    pub channels: u64,
    pub bits: u32,
    /// (layer position in stack, input slot)
    pub consumers: Vec<(usize, usize)>,
}

impl FeatureMap {
    pub fn is_external(&self) -> bool {
        !matches!(self.source, MapSource::Layer(_))
    }

    pub fn element_bits(&self) -> u64 {
        self.channels * self.bits as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackLayer {
    pub layer: Layer,
    pub output_map: usize,
    /// One map per predecessor slot.
    pub inputs: Vec<usize>,
}

impl StackLayer {
    fn axis(&self, axis: Axis) -> (u64, u64, u64, u64) {
        let l = &self.layer;
        match axis {
            Axis::X => (l.fx, l.stride[0], l.pad[0], l.input_width().max(0) as u64),
            Axis::Y => (l.fy, l.stride[1], l.pad[2], l.input_height().max(0) as u64),
        }
    }

    /// MACs per computed output feature of this layer (all output channels).
    pub fn macs_per_feature(&self) -> u64 {
        self.layer.k * self.layer.macs_per_output()
    }
}

/// Feature maps and layers of one stack, in topological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackGeometry {
    pub maps: Vec<FeatureMap>,
    pub layers: Vec<StackLayer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
}

impl StackGeometry {
    pub fn new(graph: &WorkloadGraph, stack: &Stack) -> StackGeometry {
        let mut maps: Vec<FeatureMap> = Vec::new();
        let mut by_source: HashMap<MapSource, usize> = HashMap::new();
        let mut layers = Vec::with_capacity(stack.layers.len());
        for (pos, &id) in stack.layers.iter().enumerate() {
            let layer = graph.layer(id).clone();
            let mut inputs = Vec::new();
            let sources: Vec<MapSource> = if layer.predecessors.is_empty() {
                vec![MapSource::NetworkInput(id)]
            } else {
                layer
                    .predecessors
                    .iter()
                    .map(|&p| {
                        if stack.contains(p) {
                            MapSource::Layer(p)
                        } else {
                            MapSource::External(p)
                        }
                    })
                    .collect()
            };
            for (slot, src) in sources.into_iter().enumerate() {
                let idx = *by_source.entry(src).or_insert_with(|| {
                    let (width, height, channels, bits) = match src {
                        MapSource::NetworkInput(_) => (
                            layer.input_width() as u64,
                            layer.input_height() as u64,
                            layer.c,
                            layer.act_bits,
                        ),
                        MapSource::Layer(p) | MapSource::External(p) => {
                            let pl = graph.layer(p);
                            (pl.ox, pl.oy, pl.k, pl.act_bits)
                        }
                    };
                    maps.push(FeatureMap {
                        source: src,
                        width,
                        height,
                        channels,
                        bits,
                        consumers: Vec::new(),
                    });
                    maps.len() - 1
                });
                maps[idx].consumers.push((pos, slot));
                inputs.push(idx);
            }
            let src = MapSource::Layer(id);
            maps.push(FeatureMap {
                source: src,
                width: layer.ox,
                height: layer.oy,
                channels: layer.k,
                bits: layer.act_bits,
                consumers: Vec::new(),
            });
            let output_map = maps.len() - 1;
            by_source.insert(src, output_map);
            layers.push(StackLayer { layer, output_map, inputs });
        }
        StackGeometry { maps, layers }
    }

    pub fn output_layer(&self) -> &StackLayer {
        self.layers.last().expect("stack has layers")
    }

    pub fn output_dims(&self) -> (u64, u64) {
        let l = &self.output_layer().layer;
        (l.ox, l.oy)
    }

    fn map_len(&self, map: usize, axis: Axis) -> u64 {
        match axis {
            Axis::X => self.maps[map].width,
            Axis::Y => self.maps[map].height,
        }
    }

    /// Backward walk along one axis for every tile index on that axis.
    fn walk_axis(&self, axis: Axis, tiles: &[Span], caching: bool) -> AxisWalk {
        let nm = self.maps.len();
        let last = self.layers.len() - 1;
        let mut cov = vec![i64::MIN; nm];
        let mut slices: Vec<AxisSlice> = Vec::with_capacity(tiles.len());
        let mut covered = vec![0u64; nm];
        for tile in tiles {
            let mut s = AxisSlice {
                needed: vec![Span::EMPTY; nm],
                compute: vec![Span::EMPTY; nm],
                reuse: vec![Span::EMPTY; nm],
                keep: vec![Span::EMPTY; nm],
                store: vec![Span::EMPTY; nm],
                required: self
                    .layers
                    .iter()
                    .map(|l| vec![Span::EMPTY; l.inputs.len()])
                    .collect(),
                clip: vec![[false; 2]; self.layers.len()],
                phase: vec![0; self.layers.len()],
            };
            let settle = |s: &mut AxisSlice, m: usize, needed: Span, cov: i64| {
                s.needed[m] = needed;
                if caching && !needed.is_empty() && cov >= needed.lo {
                    s.reuse[m] = Span::new(needed.lo, needed.hi.min(cov));
                    s.compute[m] = Span::new(needed.lo.max(cov + 1), needed.hi);
                } else {
                    s.compute[m] = needed;
                }
            };
            for p in (0..self.layers.len()).rev() {
                let sl = &self.layers[p];
                let m = sl.output_map;
                let needed = if p == last {
                    *tile
                } else {
                    self.maps[m]
                        .consumers
                        .iter()
                        .fold(Span::EMPTY, |acc, &(c, slot)| acc.envelope(&s.required[c][slot]))
                };
                settle(&mut s, m, needed, cov[m]);
                let (f, st, pad, in_len) = sl.axis(axis);
                let (req, clip) = backcalc_clipped(s.compute[m], f, st, pad, in_len);
                s.clip[p] = clip;
                s.phase[p] = if req.is_empty() { 0 } else { req.lo.rem_euclid(st as i64) as u64 };
                for slot in 0..sl.inputs.len() {
                    s.required[p][slot] = req;
                }
            }
            for m in 0..nm {
                if !self.maps[m].is_external() {
                    continue;
                }
                let needed = self.maps[m]
                    .consumers
                    .iter()
                    .fold(Span::EMPTY, |acc, &(c, slot)| acc.envelope(&s.required[c][slot]));
                settle(&mut s, m, needed, cov[m]);
            }
            for m in 0..nm {
                if !s.needed[m].is_empty() {
                    cov[m] = cov[m].max(s.needed[m].hi);
                }
                covered[m] += s.compute[m].len();
            }
            slices.push(s);
        }
        if caching {
            for t in 0..slices.len().saturating_sub(1) {
                let next_reuse = slices[t + 1].reuse.clone();
                let s = &mut slices[t];
                for m in 0..nm {
                    s.keep[m] = next_reuse[m];
                    s.store[m] = s.compute[m].intersect(&next_reuse[m]);
                }
            }
        }
        for m in 0..nm {
            debug_assert!(covered[m] <= self.map_len(m, axis) * tiles.len() as u64);
        }
        AxisWalk { slices, covered }
    }
}

#[derive(Debug, Clone)]
struct AxisSlice {
    needed: Vec<Span>,
    compute: Vec<Span>,
    reuse: Vec<Span>,
    keep: Vec<Span>,
    store: Vec<Span>,
    required: Vec<Vec<Span>>,
    clip: Vec<[bool; 2]>,
    phase: Vec<u64>,
}

impl AxisSlice {
    fn signature(&self) -> Vec<u64> {
        let mut sig = Vec::with_capacity(self.needed.len() * 5 + 8);
        for m in 0..self.needed.len() {
            sig.extend([
                self.needed[m].len(),
                self.compute[m].len(),
                self.reuse[m].len(),
                self.keep[m].len(),
                self.store[m].len(),
            ]);
        }
        for r in &self.required {
            sig.extend(r.iter().map(Span::len));
        }
        for (c, ph) in self.clip.iter().zip(&self.phase) {
            sig.extend([c[0] as u64, c[1] as u64, *ph]);
        }
        sig
    }
}

#[derive(Debug, Clone)]
struct AxisWalk {
    slices: Vec<AxisSlice>,
    /// Total computed length per map over all tiles of the axis.
    covered: Vec<u64>,
}

/// Per-tile attributes of one feature map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapTileAttr {
    /// Envelope of what the consumers need from this map for the tile.
    pub needed: Region,
    /// Part of `needed` produced during this tile (computed, or fetched for
    /// maps from outside the stack).
    pub compute: Region,
    /// Read from the strip cached by the tile to the left.
    pub left_cached: Region,
    /// Read from the strip cached by the tile row above.
    pub row_cached: Region,
    /// Live size of the left-neighbour strip kept for the next tile.
    pub left_keep: Region,
    /// Freshly computed part written into the left-neighbour cache.
    pub left_store: Region,
    /// Freshly computed part written into the row cache.
    pub row_store: Region,
    /// Live elements of the row cache: one full map-wide strip, read by this
    /// tile row or kept for the next.
    pub row_keep_elems: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileAttr {
    pub row: usize,
    pub col: usize,
    /// First tile of the stack (weights are still being brought on chip).
    pub first: bool,
    pub first_row: bool,
    pub last_row: bool,
    pub first_col: bool,
    pub last_col: bool,
    pub maps: Vec<MapTileAttr>,
    /// Input region each layer reads, per predecessor slot.
    pub required: Vec<Vec<Region>>,
    /// Per layer: input window clipped at the left, right, top, bottom border.
    pub clipping: Vec<[bool; 4]>,
    /// Per layer: offset of the input region start within the stride (x, y).
    pub phase: Vec<[u64; 2]>,
}

impl TileAttr {
    /// Canonical content signature: every region size and cache size, border
    /// clipping, stride phase and the first-tile flag. Absolute positions are
    /// not part of it.
    pub fn signature(&self) -> Vec<u64> {
        let mut sig = vec![self.first as u64];
        for m in &self.maps {
            for r in [
                &m.needed,
                &m.compute,
                &m.left_cached,
                &m.row_cached,
                &m.left_keep,
                &m.left_store,
                &m.row_store,
            ] {
                sig.push(r.width());
                sig.push(r.height());
            }
            sig.push(m.row_keep_elems);
        }
        for r in self.required.iter().flatten() {
            sig.push(r.width());
            sig.push(r.height());
        }
        for (c, ph) in self.clipping.iter().zip(&self.phase) {
            sig.extend(c.iter().map(|&b| b as u64));
            sig.extend(ph);
        }
        sig
    }
}

/// A group of identical tiles; costs are evaluated once and replicated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileType {
    pub attr: TileAttr,
    pub multiplicity: u64,
}

/// Backcalculated tiling of one stack for a tile size and overlap mode.
#[derive(Debug, Clone)]
pub struct Tiling {
    pub geometry: StackGeometry,
    pub mode: OverlapMode,
    pub grid: TileGrid,
    columns: AxisWalk,
    rows: AxisWalk,
}

impl Tiling {
    pub fn new(geometry: StackGeometry, mode: OverlapMode, tx: u64, ty: u64) -> Result<Tiling, TileError> {
        let (ox, oy) = geometry.output_dims();
        let grid = tile_grid(ox, oy, tx, ty)?;
        let columns = geometry.walk_axis(Axis::X, &grid.columns, mode.caches_x());
        let rows = geometry.walk_axis(Axis::Y, &grid.rows, mode.caches_y());
        Ok(Tiling { geometry, mode, grid, columns, rows })
    }

    pub fn tile_count(&self) -> u64 {
        self.grid.tile_count()
    }

    /// Full attributes of the tile at (`row`, `col`).
    pub fn tile_attr(&self, row: usize, col: usize) -> TileAttr {
        self.attr_from(row, col, row == 0 && col == 0)
    }

    fn attr_from(&self, row: usize, col: usize, first: bool) -> TileAttr {
        let xs = &self.columns.slices[col];
        let ys = &self.rows.slices[row];
        let maps = (0..self.geometry.maps.len())
            .map(|m| MapTileAttr {
                needed: Region::from_spans(xs.needed[m], ys.needed[m]),
                compute: Region::from_spans(xs.compute[m], ys.compute[m]),
                left_cached: Region::from_spans(xs.reuse[m], ys.compute[m]),
                row_cached: Region::from_spans(xs.needed[m], ys.reuse[m]),
                left_keep: Region::from_spans(xs.keep[m], ys.compute[m]),
                left_store: Region::from_spans(xs.store[m], ys.compute[m]),
                row_store: Region::from_spans(xs.compute[m], ys.store[m]),
                row_keep_elems: self.columns.covered[m] * ys.keep[m].len().max(ys.reuse[m].len()),
            })
            .collect();
        let required = xs
            .required
            .iter()
            .zip(&ys.required)
            .map(|(rx, ry)| {
                rx.iter()
                    .zip(ry)
                    .map(|(x, y)| Region::from_spans(*x, *y))
                    .collect()
            })
            .collect();
        let clipping = xs
            .clip
            .iter()
            .zip(&ys.clip)
            .map(|(cx, cy)| [cx[0], cx[1], cy[0], cy[1]])
            .collect();
        let phase = xs.phase.iter().zip(&ys.phase).map(|(&a, &b)| [a, b]).collect();
        TileAttr {
            row,
            col,
            first,
            first_row: row == 0,
            last_row: row + 1 == self.grid.rows.len(),
            first_col: col == 0,
            last_col: col + 1 == self.grid.columns.len(),
            maps,
            required,
            clipping,
            phase,
        }
    }

    /// Groups tiles with identical signatures. Types are listed by their
    /// first tile in execution order.
    pub fn tile_types(&self) -> Vec<TileType> {
        let col_classes = classes(self.columns.slices.iter().map(AxisSlice::signature));
        let row_classes = classes(self.rows.slices.iter().map(AxisSlice::signature));

        // (representative (row, col), first flag, count)
        let mut candidates: Vec<((usize, usize), bool, u64)> = Vec::new();
        for rc in &row_classes {
            for cc in &col_classes {
                let mut count = (rc.len() * cc.len()) as u64;
                let (r0, c0) = (rc[0], cc[0]);
                if r0 == 0 && c0 == 0 {
                    candidates.push(((0, 0), true, 1));
                    count -= 1;
                    if count == 0 {
                        continue;
                    }
                    let next = if cc.len() > 1 { (0, cc[1]) } else { (rc[1], 0) };
                    candidates.push((next, false, count));
                } else {
                    candidates.push(((r0, c0), false, count));
                }
            }
        }
        candidates.sort_by_key(|c| c.0);

        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut types: Vec<TileType> = Vec::new();
        for ((r, c), first, count) in candidates {
            let attr = self.attr_from(r, c, first);
            let sig = attr.signature();
            match index.get(&sig) {
                Some(&i) => types[i].multiplicity += count,
                None => {
                    index.insert(sig, types.len());
                    types.push(TileType { attr, multiplicity: count });
                }
            }
        }
        types
    }

    /// Total MACs over all tiles and layers.
    pub fn mac_count(&self) -> u64 {
        mac_count(&self.geometry, &self.tile_types())
    }
}

fn classes(sigs: impl Iterator<Item = Vec<u64>>) -> Vec<Vec<usize>> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, sig) in sigs.enumerate() {
        let k = *index.entry(sig).or_insert_with(|| {
            out.push(Vec::new());
            out.len() - 1
        });
        out[k].push(i);
    }
    out
}

pub fn identify_tile_types(tiling: &Tiling) -> Vec<TileType> {
    tiling.tile_types()
}

/// Σ over tile types and layers of computed area × MACs per feature × multiplicity.
pub fn mac_count(geometry: &StackGeometry, types: &[TileType]) -> u64 {
    types
        .iter()
        .map(|t| {
            t.multiplicity
                * geometry
                    .layers
                    .iter()
                    .map(|l| t.attr.maps[l.output_map].compute.area() * l.macs_per_feature())
                    .sum::<u64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::StackPlan;
    use crate::workload::Layer;

    fn chain(layers: Vec<Layer>) -> (WorkloadGraph, StackGeometry) {
        let g = WorkloadGraph::new(layers).unwrap();
        let plan = StackPlan::whole(&g);
        let geom = StackGeometry::new(&g, &plan.stacks[0]);
        (g, geom)
    }

    #[test]
    fn grid_shapes() {
        let g = tile_grid(8, 8, 8, 8).unwrap();
        assert_eq!(g.tile_count(), 1);
        let g = tile_grid(960, 540, 60, 72).unwrap();
        assert_eq!((g.columns.len(), g.rows.len()), (16, 8));
        assert_eq!(g.rows[7].len(), 36);
        let g = tile_grid(5, 1, 2, 1).unwrap();
        let widths: Vec<u64> = g.columns.iter().map(Span::len).collect();
        assert_eq!(widths, vec![2, 2, 1]);
        assert!(tile_grid(5, 5, 0, 1).is_err());
        assert!(tile_grid(5, 5, 6, 1).is_err());
    }

    #[test]
    fn backcalc_simple_cases() {
        let l = Layer::conv(0, 1, 1, 10, 10, 3, 3);
        let r = required_input_region(&l, Region::new(2, 2, 5, 5));
        assert_eq!((r.width(), r.height()), (6, 6));
        let id = Layer::conv(0, 1, 1, 10, 10, 1, 1);
        let out = Region::new(3, 1, 7, 4);
        assert_eq!(required_input_region(&id, out), out);
        // stride larger than kernel with padding: first output reads padding only.
        assert_eq!(backcalc_span(Span::new(0, 2), 1, 2, 1, 5), Span::new(1, 3));
        assert_eq!(backcalc_span(Span::new(0, 0), 1, 2, 1, 5), Span::EMPTY);
    }

    #[test]
    fn fully_cached_two_convs_compute_each_feature_once() {
        let (_, geom) = chain(vec![
            Layer::conv(0, 4, 3, 12, 12, 3, 3).with_pad([1; 4]),
            Layer::conv(1, 4, 4, 12, 12, 3, 3).with_pad([1; 4]).with_preds(&[0]),
        ]);
        let t = Tiling::new(geom, OverlapMode::FullyCached, 4, 4).unwrap();
        let attr = t.tile_attr(1, 1);
        for l in &t.geometry.layers {
            assert_eq!(attr.maps[l.output_map].compute.area(), 16);
        }
    }

    #[test]
    fn recompute_on_2x2_grid_gives_four_types() {
        let (_, geom) = chain(vec![Layer::conv(0, 4, 3, 8, 8, 3, 3).with_pad([1; 4])]);
        let t = Tiling::new(geom, OverlapMode::FullyRecompute, 4, 4).unwrap();
        let types = t.tile_types();
        assert_eq!(types.len(), 4);
        assert_eq!(types.iter().map(|t| t.multiplicity).sum::<u64>(), 4);
    }

    #[test]
    fn single_tile_single_type() {
        let (_, geom) = chain(vec![Layer::conv(0, 4, 3, 8, 8, 3, 3).with_pad([1; 4])]);
        for mode in OverlapMode::ALL {
            let t = Tiling::new(geom.clone(), mode, 8, 8).unwrap();
            assert_eq!(t.tile_types().len(), 1);
        }
    }

    #[test]
    fn merge_branch_envelope() {
        let a = Region::new(0, 5, 9, 6);
        let b = Region::new(0, 4, 9, 6);
        let m = merge_branch_cache(&[a, b]);
        assert_eq!(m.height(), 3);
        assert_eq!(merge_branch_cache(&[a]), a);
        assert_eq!(merge_branch_cache(&[a, a]), a);
    }

    #[test]
    fn mac_ordering_and_full_map_equality() {
        let (g, geom) = chain(vec![
            Layer::conv(0, 4, 3, 16, 16, 3, 3).with_pad([1; 4]),
            Layer::conv(1, 4, 4, 16, 16, 3, 3).with_pad([1; 4]).with_preds(&[0]),
        ]);
        let lbl = g.total_macs();
        let macs = |mode, tx, ty| Tiling::new(geom.clone(), mode, tx, ty).unwrap().mac_count();
        for mode in OverlapMode::ALL {
            assert_eq!(macs(mode, 16, 16), lbl);
        }
        let fr = macs(OverlapMode::FullyRecompute, 2, 2);
        let hc = macs(OverlapMode::HCachedVRecompute, 2, 2);
        let fc = macs(OverlapMode::FullyCached, 2, 2);
        assert!(fr > hc && hc > fc);
        assert_eq!(fc, lbl);
    }
}
