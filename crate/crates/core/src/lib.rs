//! Task-parallel workflow designs for two-stage heterogeneous image analysis.
//!
//! Each image goes through a CPU-bound tiling task followed by a GPU-bound
//! counting task that must run on the same compute node. The crate models
//! three ways of organising that work on a multi-node cluster:
//!
//! * **Design 1**: one pipeline per image, with a tagged scheduler pinning
//!   the counting task to the node that tiled the image.
//! * **Design 2**: long-running workers fed by a global image queue and a
//!   per-node tile queue.
//! * **Design 2.A**: as Design 2, but images are bound to nodes up front by a
//!   load-balancing partitioner.
//!
//! Every design runs on a deterministic discrete-event simulator or on a
//! real-thread backend, and produces a [`designs::Trace`] from which
//! utilization, time-to-completion and overheads are derived
//! ([`metrics`]). Task durations come from the linear execution-time models
//! in [`perfmodel`].

pub mod cluster;
pub mod designs;
mod des;
mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod parallel;
pub mod perfmodel;
pub mod protocol;
pub mod workload;

pub use error::{Error, Result};
