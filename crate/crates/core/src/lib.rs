//! Analytical latency prediction and scheduling optimization for
//! coarse-grained spatially sparse (dynamic) convolution blocks.
//!
//! A spatial-wise dynamic block computes its convolutions only on the
//! feature patches selected by a binary mask. Whether that saves wall-clock
//! time on a real device depends on far more than the FLOPs: gather/scatter
//! traffic, memory-transaction efficiency of small patch reads, operator
//! fusion, and the compute/bandwidth balance of the hardware. This crate
//! models all of that analytically:
//!
//! - [`model`] — hardware and network descriptions with built-in presets.
//! - [`mask`] — binary spatial masks, coarsening/upsampling, patch indices,
//!   and the Gumbel-Softmax relaxation used at training time.
//! - [`flops`] — static and dynamic MAC accounting plus the FLOPs-target
//!   loss arithmetic.
//! - [`latcost`] — the latency model: tile enumeration and search,
//!   data-movement and computation terms per operator.
//! - [`sched`] — operator-graph rewriting for the three fusions, fusion
//!   thresholds, granularity/rate sweeps, and network-level aggregation.
//! - [`simexec`] — a small functional executor with a byte-level traffic
//!   trace, used as a correctness and traffic oracle for the cost model.

pub mod error;
pub mod flops;
pub mod latcost;
pub mod mask;
pub mod model;
pub mod sched;
pub mod simexec;

pub use error::Error;

/// Bytes per tensor element; everything in the model is FP32.
pub const ELEM_BYTES: u64 = 4;
