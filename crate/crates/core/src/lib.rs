//! Cost model and design-space exploration for depth-first (layer-fused)
//! scheduling of convolutional networks on multi-level memory accelerators.
//!
//! A workload is split into stacks of fused layers. Each stack's output is
//! cut into tiles, every tile is backcalculated through the stack, and the
//! overlap between neighbouring tiles is either recomputed or cached. Tiles
//! with identical attributes are grouped into tile types; each type is
//! placed in the memory hierarchy, its inter-level copies are priced, and
//! every layer of it is mapped with a single-layer temporal mapping search.
//!
//! Module order follows the evaluation pipeline:
//! [`workload`] and [`hardware`] describe the inputs, [`stack`] partitions
//! the network, [`tiling`] produces tile types, [`allocation`] chooses top
//! memory levels, [`copy`] prices data movement, [`mapper`] costs single
//! layers and [`dse`] ties it together and runs sweeps.

pub mod allocation;
pub mod cli;
pub mod copy;
pub mod dse;
pub mod hardware;
pub mod mapper;
pub mod report;
pub mod stack;
pub mod tiling;
pub mod workload;

pub use dse::{CostResult, DfStrategy, Evaluator, StackStrategy, SweepGrid, SweepSettings};
pub use hardware::{parse_accelerator, Accelerator, Dim, Operand};
pub use mapper::OptimizationTarget;
pub use stack::{auto_stack, explicit_plan, Stack, StackPlan};
pub use tiling::OverlapMode;
pub use workload::{parse_workload, Layer, LayerKind, WorkloadGraph};
