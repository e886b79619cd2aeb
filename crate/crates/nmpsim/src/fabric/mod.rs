//! The compute-and-interconnect overlay: PEs between subarray pairs, the
//! per-pair PE chain, the bank-group skip network with routers, the chip
//! mesh and the DIMM-link bridges.
//!
//! Routing functions are pure; link occupancy and contention are resolved by
//! the engine through resource claims.

mod banknet;
mod chipnet;
mod pe;

pub use banknet::{BankLink, BankNetwork};
pub use chipnet::{ChipHop, ChipNetwork};
pub use pe::{chain_path_cycles, chain_transfer, crossbar_permute, PeConfig, PeRegisterFile, PeUop};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FabricError {
    #[error("register file over capacity: need {need} words, {free} free")]
    RfOverflow { need: u32, free: u32 },
    #[error("operand {0} not resident in RF or open row")]
    OperandNotResident(String),
    #[error("lane map is not a bijection")]
    NotBijective,
    #[error("PEs {0} and {1} are not adjacent in the chain")]
    NotAdjacent(u32, u32),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}
