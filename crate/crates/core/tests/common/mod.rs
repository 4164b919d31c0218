//! Generators shared by the integration tests.
#![allow(dead_code)]

use proptest::prelude::*;

use depthfirst::cli::{load_accelerator, load_workload};
use depthfirst::hardware::Accelerator;
use depthfirst::workload::{Layer, LayerKind, WorkloadGraph};

pub fn fsrcnn() -> WorkloadGraph {
    load_workload("fsrcnn_like").unwrap()
}

pub fn hw(name: &str) -> Accelerator {
    load_accelerator(name).unwrap()
}

/// Backbone chain `0 -> 1 -> ... -> n-1` with optional skip edges. A layer
/// with a skip edge becomes an elementwise add. All maps are 8x8x4.
pub fn dag() -> impl Strategy<Value = WorkloadGraph> {
    (2usize..10)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(proptest::option::weighted(0.3, any::<prop::sample::Index>()), n),
                proptest::collection::vec(prop::sample::select(vec![2u32, 4, 8, 16]), n),
            )
        })
        .prop_map(|(skips, bits)| {
            let layers = (0u32..)
                .zip(skips.iter().zip(&bits))
                .map(|(i, (skip, &wb))| {
                    let mut l = Layer::conv(i, 4, 4, 8, 8, 1, 1);
                    l.weight_bits = wb;
                    if i == 0 {
                        return l;
                    }
                    match skip {
                        Some(ix) if i >= 2 => {
                            let j = ix.index(i as usize - 1) as u32;
                            l.with_kind(LayerKind::ElementwiseAdd).with_preds(&[i - 1, j])
                        }
                        _ => l.with_preds(&[i - 1]),
                    }
                })
                .collect();
            WorkloadGraph::new(layers).expect("generator builds valid graphs")
        })
}
