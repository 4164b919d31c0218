//! DNN workload description: a DAG of convolution-like layers.
//!
//! Every layer is a 6-D loop nest over `K, C, OX, OY, FX, FY` with explicit
//! stride and per-edge padding. Batch is fixed to 1.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type LayerId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("layer {layer}: {message}")]
    Layer { layer: LayerId, message: String },
    #[error("workload: {0}")]
    Graph(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv,
    #[serde(alias = "depthwise")]
    DepthwiseConv,
    Pooling,
    #[serde(alias = "add")]
    ElementwiseAdd,
}

impl LayerKind {
    pub fn has_weights(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::DepthwiseConv)
    }

    /// Whether each output channel only reads its own input channel.
    pub fn is_channelwise(self) -> bool {
        !matches!(self, LayerKind::Conv)
    }
}

fn default_stride() -> [u64; 2] {
    [1, 1]
}

fn default_bits() -> u32 {
    8
}

fn default_batch() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub id: LayerId,
    pub kind: LayerKind,
    #[serde(rename = "K")]
    pub k: u64,
    #[serde(rename = "C")]
    pub c: u64,
    #[serde(rename = "OX")]
    pub ox: u64,
    #[serde(rename = "OY")]
    pub oy: u64,
    #[serde(rename = "FX")]
    pub fx: u64,
    #[serde(rename = "FY")]
    pub fy: u64,
    #[serde(default = "default_stride")]
    pub stride: [u64; 2],
    /// left, right, top, bottom
    #[serde(default)]
    pub pad: [u64; 4],
    #[serde(default)]
    pub predecessors: Vec<LayerId>,
    #[serde(default = "default_bits")]
    pub act_bits: u32,
    #[serde(default = "default_bits")]
    pub weight_bits: u32,
    /// Reserved; only 1 is accepted.
    #[serde(rename = "B", default = "default_batch")]
    pub batch: u64,
}

impl Layer {
    /// A stride-1 convolution without padding or predecessors.
    pub fn conv(id: LayerId, k: u64, c: u64, ox: u64, oy: u64, fx: u64, fy: u64) -> Self {
        Layer {
            id,
            kind: LayerKind::Conv,
            k,
            c,
            ox,
            oy,
            fx,
            fy,
            stride: [1, 1],
            pad: [0; 4],
            predecessors: Vec::new(),
            act_bits: 8,
            weight_bits: 8,
            batch: 1,
        }
    }

    pub fn with_preds(mut self, preds: &[LayerId]) -> Self {
        self.predecessors = preds.to_vec();
        self
    }

    pub fn with_stride(mut self, sx: u64, sy: u64) -> Self {
        self.stride = [sx, sy];
        self
    }

    pub fn with_pad(mut self, pad: [u64; 4]) -> Self {
        self.pad = pad;
        self
    }

    pub fn with_kind(mut self, kind: LayerKind) -> Self {
        self.kind = kind;
        self
    }

    /// Input feature-map width implied by the output width, kernel, stride and padding.
    pub fn input_width(&self) -> i64 {
        input_extent(self.ox, self.fx, self.stride[0], self.pad[0], self.pad[1])
    }

    pub fn input_height(&self) -> i64 {
        input_extent(self.oy, self.fy, self.stride[1], self.pad[2], self.pad[3])
    }

    pub fn weight_size_bits(&self) -> u64 {
        weight_size_bits(self)
    }

    /// MACs per output feature (kernel elements times contributing input channels).
    pub fn macs_per_output(&self) -> u64 {
        match self.kind {
            LayerKind::Conv => self.c * self.fx * self.fy,
            LayerKind::DepthwiseConv | LayerKind::Pooling => self.fx * self.fy,
            LayerKind::ElementwiseAdd => 1,
        }
    }

    pub fn mac_count(&self) -> u64 {
        self.k * self.ox * self.oy * self.macs_per_output()
    }
}

fn input_extent(out: u64, f: u64, s: u64, pad_lo: u64, pad_hi: u64) -> i64 {
    (out as i64 - 1) * s as i64 + f as i64 - pad_lo as i64 - pad_hi as i64
}

/// conv: K·C·FX·FY, depthwise: C·FX·FY, weightless kinds: 0. In bits.
pub fn weight_size_bits(layer: &Layer) -> u64 {
    let elems = match layer.kind {
        LayerKind::Conv => layer.k * layer.c * layer.fx * layer.fy,
        LayerKind::DepthwiseConv => layer.c * layer.fx * layer.fy,
        LayerKind::Pooling | LayerKind::ElementwiseAdd => 0,
    };
    elems * layer.weight_bits as u64
}

pub fn stack_weight_size_bits<'a>(layers: impl IntoIterator<Item = &'a Layer>) -> u64 {
    layers.into_iter().map(weight_size_bits).sum()
}

#[derive(Debug, Serialize, Deserialize)]
struct WorkloadDoc {
    #[serde(default)]
    name: Option<String>,
    layers: Vec<Layer>,
}

/// Validated workload DAG. Layers are stored in deterministic topological
/// order (ascending id among ready layers).
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadGraph {
    name: Option<String>,
    layers: Vec<Layer>,
    index: HashMap<LayerId, usize>,
    successors: Vec<Vec<LayerId>>,
}

impl WorkloadGraph {
    pub fn new(layers: Vec<Layer>) -> Result<Self, WorkloadError> {
        Self::build(None, layers)
    }

    fn build(name: Option<String>, layers: Vec<Layer>) -> Result<Self, WorkloadError> {
        if layers.is_empty() {
            return Err(WorkloadError::Graph("no layers".into()));
        }
        let mut by_id: HashMap<LayerId, Layer> = HashMap::new();
        for layer in layers {
            check_layer_local(&layer)?;
            let id = layer.id;
            if by_id.insert(id, layer).is_some() {
                return Err(WorkloadError::Layer {
                    layer: id,
                    message: "duplicate layer id".into(),
                });
            }
        }
        for layer in by_id.values() {
            for p in &layer.predecessors {
                if !by_id.contains_key(p) {
                    return Err(WorkloadError::Layer {
                        layer: layer.id,
                        message: format!("unknown predecessor {p}"),
                    });
                }
            }
        }

        // Kahn's algorithm, smallest ready id first.
        let mut indegree: HashMap<LayerId, usize> = by_id
            .values()
            .map(|l| (l.id, l.predecessors.iter().collect::<BTreeSet<_>>().len()))
            .collect();
        let mut succ_of: HashMap<LayerId, BTreeSet<LayerId>> = HashMap::new();
        for l in by_id.values() {
            for p in &l.predecessors {
                succ_of.entry(*p).or_default().insert(l.id);
            }
        }
        let mut ready: BTreeSet<LayerId> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(id, _)| *id)
            .collect();
        let mut order = Vec::with_capacity(by_id.len());
        while let Some(id) = ready.pop_first() {
            order.push(id);
            if let Some(succs) = succ_of.get(&id) {
                for s in succs {
                    let d = indegree.get_mut(s).expect("known layer");
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(*s);
                    }
                }
            }
        }
        if order.len() != by_id.len() {
            return Err(WorkloadError::Graph("layer graph contains a cycle".into()));
        }

        let layers: Vec<Layer> = order
            .iter()
            .map(|id| by_id.remove(id).expect("ordered id"))
            .collect();
        let index: HashMap<LayerId, usize> =
            layers.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
        let successors: Vec<Vec<LayerId>> = layers
            .iter()
            .map(|l| {
                succ_of
                    .get(&l.id)
                    .map(|s| s.iter().copied().collect())
                    .unwrap_or_default()
            })
            .collect();

        let sinks: Vec<LayerId> = layers
            .iter()
            .zip(&successors)
            .filter(|(_, s)| s.is_empty())
            .map(|(l, _)| l.id)
            .collect();
        if sinks.len() != 1 {
            return Err(WorkloadError::Graph(format!(
                "expected exactly one final layer, found {sinks:?}"
            )));
        }

        let graph = WorkloadGraph {
            name,
            layers,
            index,
            successors,
        };
        for layer in &graph.layers {
            graph.check_edges(layer)?;
        }
        Ok(graph)
    }

    fn check_edges(&self, layer: &Layer) -> Result<(), WorkloadError> {
        let err = |message: String| WorkloadError::Layer {
            layer: layer.id,
            message,
        };
        let (iw, ih) = (layer.input_width(), layer.input_height());
        if iw < 1 || ih < 1 {
            return Err(err(format!("implied input extent {iw}x{ih} is empty")));
        }
        for p in &layer.predecessors {
            let pred = self.layer(*p);
            if pred.ox as i64 != iw || pred.oy as i64 != ih {
                return Err(err(format!(
                    "predecessor {p} produces {}x{} but stride/kernel/padding imply {iw}x{ih}",
                    pred.ox, pred.oy
                )));
            }
            if pred.k != layer.c {
                return Err(err(format!(
                    "predecessor {p} has K={} but C={}",
                    pred.k, layer.c
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    /// Layers in topological order.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, id: LayerId) -> &Layer {
        &self.layers[self.index[&id]]
    }

    pub fn get(&self, id: LayerId) -> Option<&Layer> {
        self.index.get(&id).map(|&i| &self.layers[i])
    }

    /// Position of a layer in the topological order.
    pub fn position(&self, id: LayerId) -> usize {
        self.index[&id]
    }

    pub fn successors(&self, id: LayerId) -> &[LayerId] {
        &self.successors[self.index[&id]]
    }

    pub fn final_layer(&self) -> &Layer {
        self.layers
            .iter()
            .zip(&self.successors)
            .find(|(_, s)| s.is_empty())
            .map(|(l, _)| l)
            .expect("validated graph has a final layer")
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(Layer::mac_count).sum()
    }

    pub fn total_weight_bits(&self) -> u64 {
        stack_weight_size_bits(&self.layers)
    }

    pub fn to_json(&self) -> String {
        let doc = WorkloadDoc {
            name: self.name.clone(),
            layers: self.layers.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("workload serializes")
    }
}

fn check_layer_local(layer: &Layer) -> Result<(), WorkloadError> {
    let err = |message: &str| WorkloadError::Layer {
        layer: layer.id,
        message: message.to_string(),
    };
    let dims = [layer.k, layer.c, layer.ox, layer.oy, layer.fx, layer.fy];
    if dims.contains(&0) {
        return Err(err("all dimensions must be >= 1"));
    }
    if layer.stride.contains(&0) {
        return Err(err("strides must be >= 1"));
    }
    if layer.batch != 1 {
        return Err(err("only batch size 1 is supported"));
    }
    if layer.act_bits == 0 || layer.weight_bits == 0 {
        return Err(err("precisions must be >= 1 bit"));
    }
    match layer.kind {
        LayerKind::DepthwiseConv | LayerKind::Pooling if layer.k != layer.c => {
            Err(err("depthwise and pooling layers require K == C"))
        }
        LayerKind::ElementwiseAdd => {
            if layer.k != layer.c || layer.fx != 1 || layer.fy != 1 {
                return Err(err("elementwise-add requires K == C and FX == FY == 1"));
            }
            if layer.stride != [1, 1] || layer.pad != [0; 4] {
                return Err(err("elementwise-add must have unit stride and no padding"));
            }
            if layer.predecessors.len() < 2 {
                return Err(err("elementwise-add needs at least two predecessors"));
            }
            Ok(())
        }
        _ if layer.predecessors.len() > 1 => {
            Err(err("only elementwise-add may have several predecessors"))
        }
        _ => Ok(()),
    }
}

pub fn parse_workload(text: &str) -> Result<WorkloadGraph, WorkloadError> {
    let doc: WorkloadDoc = serde_json::from_str(text).map_err(|e| WorkloadError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    WorkloadGraph::build(doc.name, doc.layers)
}
