//! Planning, simulation and control of CPU co-location for bulk-synchronous
//! MPI jobs on a shared cluster.
//!
//! - [`trace`]: per-rank MPI traces, duty cycles, reclaimable capacity.
//! - [`decomp`]: weighted concentric mesh decomposition.
//! - [`alloc`]: proportional CPU requests and cluster-level checks.
//! - [`model`]: the linear contention model, Pareto and cost tables.
//! - [`sim`]: discrete-event proportional-share simulator.
//! - [`controller`]: the profile, resize, pack and monitor loop.
//! - [`k8s`]: manifests, hostfiles and resize patches.

pub mod alloc;
pub mod controller;
pub mod decomp;
pub mod k8s;
pub mod model;
pub mod sim;
pub mod trace;

pub use alloc::{AllocError, AllocationPlan, ClusterSpec, QuotaSpec};
pub use controller::{ActionLog, Actuator, ControllerConfig, PipelineReport, SimActuator};
pub use decomp::{Assignment, CellCloud, WeightVector};
pub use model::{BetaFit, ContentionModel, MeasuredPoint};
pub use sim::{SimJobSpec, SimResult};
pub use trace::{DutyCycleReport, MpiCall, RankTrace, TraceEvent};
