//! Partitioning of a workload into fused-layer stacks.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hardware::{Accelerator, Operand};
use crate::workload::{weight_size_bits, LayerId, WorkloadGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StackError {
    #[error("stack {stack}: {message}")]
    Invalid { stack: usize, message: String },
    #[error("plan does not cover layers {0:?}")]
    Uncovered(Vec<LayerId>),
}

/// Layers fused into one stack, in topological order. The last layer is the
/// stack output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stack {
    pub layers: Vec<LayerId>,
}

impl Stack {
    pub fn output(&self) -> LayerId {
        *self.layers.last().expect("stack is never empty")
    }

    pub fn contains(&self, id: LayerId) -> bool {
        self.layers.contains(&id)
    }

    /// Layers reading at least one feature map produced outside the stack.
    pub fn input_layers(&self, graph: &WorkloadGraph) -> Vec<LayerId> {
        self.layers
            .iter()
            .copied()
            .filter(|&id| {
                let l = graph.layer(id);
                l.predecessors.is_empty() || l.predecessors.iter().any(|p| !self.contains(*p))
            })
            .collect()
    }

    pub fn weight_bits(&self, graph: &WorkloadGraph) -> u64 {
        self.layers
            .iter()
            .map(|&id| weight_size_bits(graph.layer(id)))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackPlan {
    pub stacks: Vec<Stack>,
}

impl StackPlan {
    /// Every layer in its own stack.
    pub fn single_layer(graph: &WorkloadGraph) -> StackPlan {
        StackPlan {
            stacks: graph
                .layers()
                .iter()
                .map(|l| Stack { layers: vec![l.id] })
                .collect(),
        }
    }

    /// The whole graph as one stack.
    pub fn whole(graph: &WorkloadGraph) -> StackPlan {
        StackPlan {
            stacks: vec![Stack {
                layers: graph.layers().iter().map(|l| l.id).collect(),
            }],
        }
    }

    pub fn len(&self) -> usize {
        self.stacks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stacks.is_empty()
    }
}

impl std::fmt::Display for StackPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, s) in self.stacks.iter().enumerate() {
            let ids: Vec<String> = s.layers.iter().map(|id| id.to_string()).collect();
            writeln!(f, "stack {i}: [{}]", ids.join(", "))?;
        }
        Ok(())
    }
}

/// Validates a user-provided partition.
pub fn explicit_plan(graph: &WorkloadGraph, stacks: Vec<Vec<LayerId>>) -> Result<StackPlan, StackError> {
    let mut seen = HashSet::new();
    let mut plan = Vec::with_capacity(stacks.len());
    for (si, mut ids) in stacks.into_iter().enumerate() {
        let invalid = |message: String| StackError::Invalid { stack: si, message };
        if ids.is_empty() {
            return Err(invalid("empty stack".into()));
        }
        for id in &ids {
            if graph.get(*id).is_none() {
                return Err(invalid(format!("unknown layer {id}")));
            }
            if !seen.insert(*id) {
                return Err(invalid(format!("layer {id} appears in more than one stack")));
            }
        }
        ids.sort_by_key(|id| graph.position(*id));
        let first = graph.position(ids[0]);
        for (k, id) in ids.iter().enumerate() {
            if graph.position(*id) != first + k {
                return Err(invalid(format!(
                    "layers must be contiguous in topological order; {id} breaks the run"
                )));
            }
        }
        let stack = Stack { layers: ids };
        let out = stack.output();
        for &id in &stack.layers {
            if id == out {
                continue;
            }
            let succ = graph.successors(id);
            if succ.is_empty() || succ.iter().any(|s| !stack.contains(*s)) {
                return Err(invalid(format!(
                    "layer {id} sends data out of the stack but is not its output layer {out}"
                )));
            }
        }
        plan.push(stack);
    }
    let missing: Vec<LayerId> = graph
        .layers()
        .iter()
        .map(|l| l.id)
        .filter(|id| !seen.contains(id))
        .collect();
    if !missing.is_empty() {
        return Err(StackError::Uncovered(missing));
    }
    plan.sort_by_key(|s| graph.position(s.layers[0]));
    Ok(StackPlan { stacks: plan })
}

/// Positions `p` such that cutting after the `p`-th layer leaves exactly one
/// live feature map (the output of layer `p`).
pub fn cut_points(graph: &WorkloadGraph) -> Vec<usize> {
    let layers = graph.layers();
    let n = layers.len();
    let mut cuts = Vec::new();
    for p in 0..n {
        let ok = layers[..=p].iter().enumerate().all(|(i, l)| {
            i == p
                || graph
                    .successors(l.id)
                    .iter()
                    .all(|s| graph.position(*s) <= p)
        });
        if ok {
            cuts.push(p);
        }
    }
    cuts
}

/// Weight capacity used for automatic fusion: the highest on-chip level holding weights.
pub fn fusion_weight_capacity(acc: &Accelerator) -> u64 {
    acc.highest_onchip(Operand::W)
        .map(|i| acc.memory_levels[i].capacity_bits)
        .unwrap_or(0)
}

/// Greedy forward packing of branch-free segments into stacks while the
/// accumulated weights fit the fusion weight capacity.
pub fn auto_stack(graph: &WorkloadGraph, acc: &Accelerator) -> StackPlan {
    auto_stack_with_capacity(graph, fusion_weight_capacity(acc))
}

pub fn auto_stack_with_capacity(graph: &WorkloadGraph, capacity_bits: u64) -> StackPlan {
    let layers = graph.layers();
    let mut stacks: Vec<Stack> = Vec::new();
    let mut current: Vec<LayerId> = Vec::new();
    let mut current_bits = 0u64;
    let mut start = 0usize;
    for cut in cut_points(graph) {
        let segment: Vec<LayerId> = layers[start..=cut].iter().map(|l| l.id).collect();
        let seg_bits: u64 = layers[start..=cut].iter().map(weight_size_bits).sum();
        start = cut + 1;
        if seg_bits > capacity_bits {
            if !current.is_empty() {
                stacks.push(Stack { layers: std::mem::take(&mut current) });
                current_bits = 0;
            }
            stacks.extend(segment.into_iter().map(|id| Stack { layers: vec![id] }));
        } else if current_bits + seg_bits <= capacity_bits {
            current.extend(segment);
            current_bits += seg_bits;
        } else {
            stacks.push(Stack { layers: std::mem::take(&mut current) });
            current = segment;
            current_bits = seg_bits;
        }
    }
    if !current.is_empty() {
        stacks.push(Stack { layers: current });
    }
    StackPlan { stacks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{Layer, LayerKind};

    /// 0 -> 1 -> {2, 3} -> 4 (add) -> 5
    pub(crate) fn branch_toy(mid_c: u64) -> WorkloadGraph {
        WorkloadGraph::new(vec![
            Layer::conv(0, 8, 3, 16, 16, 1, 1),
            Layer::conv(1, mid_c, 8, 16, 16, 1, 1).with_preds(&[0]),
            Layer::conv(2, 8, mid_c, 16, 16, 1, 1).with_preds(&[1]),
            Layer::conv(3, 8, mid_c, 16, 16, 1, 1).with_preds(&[1]),
            Layer::conv(4, 8, 8, 16, 16, 1, 1)
                .with_kind(LayerKind::ElementwiseAdd)
                .with_preds(&[2, 3]),
            Layer::conv(5, 4, 8, 16, 16, 1, 1).with_preds(&[4]),
        ])
        .unwrap()
    }

    #[test]
    fn cut_points_skip_branch_region() {
        let g = branch_toy(8);
        assert_eq!(cut_points(&g), vec![0, 1, 4, 5]);
    }

    #[test]
    fn greedy_hand_trace() {
        let g = branch_toy(64);
        let bits = |id| weight_size_bits(g.layer(id));
        assert_eq!(bits(2) + bits(3), 2 * 8 * 64 * 8);
        // Capacity holds l0 + l1 (+ l5) but not the branch region alone.
        let cap = bits(0) + bits(1) + bits(5);
        let plan = auto_stack_with_capacity(&g, cap);
        let got: Vec<Vec<LayerId>> = plan.stacks.iter().map(|s| s.layers.clone()).collect();
        assert_eq!(got, vec![vec![0, 1], vec![2], vec![3], vec![4], vec![5]]);
        explicit_plan(&g, got).unwrap();
    }

    #[test]
    fn everything_fits_in_one_stack() {
        let g = branch_toy(8);
        let plan = auto_stack_with_capacity(&g, u64::MAX);
        assert_eq!(plan, StackPlan::whole(&g));
    }

    #[test]
    fn single_layer_network() {
        let g = WorkloadGraph::new(vec![Layer::conv(0, 4, 4, 4, 4, 3, 3)]).unwrap();
        assert_eq!(auto_stack_with_capacity(&g, 0).stacks.len(), 1);
    }

    #[test]
    fn explicit_plan_rejects_mid_stack_exit() {
        let g = branch_toy(8);
        assert!(explicit_plan(&g, vec![vec![0, 1, 2], vec![3, 4, 5]]).is_err());
        assert!(explicit_plan(&g, vec![vec![0, 1], vec![2, 3, 4, 5]]).is_ok());
        assert!(matches!(
            explicit_plan(&g, vec![vec![0, 1]]),
            Err(StackError::Uncovered(_))
        ));
        let sl = explicit_plan(&g, (0..6).map(|i| vec![i]).collect()).unwrap();
        assert_eq!(sl, StackPlan::single_layer(&g));
    }
}
