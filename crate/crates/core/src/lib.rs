//! Dataflow modelling and design space exploration for streaming ConvNet
//! accelerators.

pub mod descriptor;
pub mod dse;
pub mod model;
pub mod perf;
pub mod rational;
pub mod report;
pub mod sdf;
pub mod sim;
pub mod synth;
pub mod transforms;
pub mod validate;

pub use model::{ConvNetModel, LayerKind, LayerSpec, ModelError, PoolOp, Shape};
pub use rational::Rate;
pub use sdf::{BlockKind, BuildingBlock, SdfArc, SdfError, SdfGraph, TopologyMatrix, WorkloadMatrix};
pub use dse::{DesignConfig, DesignPoint, Objective, ParetoFront, SearchBounds, Strategy};
pub use perf::{PerfEstimate, PlatformSpec, ResourceUsage};
