//! Command-level simulator for a near-subarray DRAM accelerator running
//! RNS-FHE operator graphs.
//!
//! The crate is organized along the pipeline a run takes:
//!
//! - [`kernels`]: reference modular / RNS / NTT arithmetic, the functional
//!   ground truth every simulated schedule is co-checked against.
//! - [`dram`]: hierarchy geometry, command timing constraints and the
//!   per-subarray state machines that produce legal issue/complete cycles.
//! - [`fabric`]: the compute-and-interconnect overlay — PEs between subarray
//!   pairs, PE chains, the bank-group skip network and the chip mesh.
//! - [`layout`]: placement of polynomial tiles onto the hierarchy and the
//!   runtime remapping that doubles or halves `poly_col`.
//! - [`compiler`]: lowers operator graphs onto the fabric as
//!   dependency-carrying command schedules.
//! - [`engine`]: deterministic event-driven executor producing cycle counts,
//!   per-level breakdowns and bandwidth utilization, with optional
//!   co-simulation of functional values.
//! - [`harness`]: run configuration, workload declarations, the ablation
//!   ladder and the design-space sweep drivers behind the CLI.

pub mod compiler;
pub mod dram;
pub mod engine;
pub mod fabric;
pub mod harness;
pub mod kernels;
pub mod layout;
