//! DRAM hierarchy geometry, command timing constraints and the subarray
//! state machines that yield the earliest legal issue/complete cycle for
//! every memory command.
//!
//! Simulation granularity is command-level: each command is an event with a
//! computed duration, not a per-cycle signal trace. One cycle is one PE clock
//! (1 GHz), so ns-domain presets are carried over 1:1.

mod state;
mod stride;

pub use state::{DramState, MemCommand, MemCommandKind, SubarrayId, SubarrayState};
pub use stride::{row_access_envelope, stride_access_cost};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DramError {
    #[error("row {want} not open on {chip}/{bank}/{subarray} (open: {open:?})")]
    RowMiss {
        chip: u32,
        bank: u32,
        subarray: u32,
        want: u32,
        open: Option<u32>,
    },
    #[error("command overlaps an open row on {chip}/{bank}/{subarray}")]
    Busy { chip: u32, bank: u32, subarray: u32 },
    #[error("subarrays {0} and {1} are not an adjacent pair in the same bank")]
    NotAdjacent(u32, u32),
    #[error("inter-bank transfer requires same chip, different banks")]
    BadTransferTarget,
    #[error("target out of range: {0}")]
    TargetOutOfRange(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

/// Command timing constraints in PE-clock cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingParams {
    pub t_ccds: u64,
    pub t_ccd: u64,
    pub t_wr: u64,
    pub t_pre: u64,
    pub t_act: u64,
    pub t_rcd: u64,
    pub t_rrd: u64,
    /// Data-return slot of one column command at GRB granularity.
    pub read_slot: u64,
    /// Row-to-row beat of an inter-subarray link copy.
    pub lisa_link: u64,
}

impl Default for TimingParams {
    fn default() -> Self {
        Self::table1()
    }
}

impl TimingParams {
    /// The DDR5 configuration table used throughout.
    pub fn table1() -> Self {
        Self {
            t_ccds: 4,
            t_ccd: 2,
            t_wr: 8,
            t_pre: 12,
            t_act: 24,
            t_rcd: 24,
            t_rrd: 24,
            read_slot: 1,
            lisa_link: 8,
        }
    }

    /// The ns-domain stride-example preset; cycle == ns at 1 GHz. Values
    /// not quoted there keep their table1 defaults.
    pub fn fig1_ns() -> Self {
        Self {
            t_act: 12,
            t_rcd: 12,
            t_ccd: 4,
            t_wr: 8,
            t_pre: 12,
            ..Self::table1()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "table1" => Some(Self::table1()),
            "fig1-ns" => Some(Self::fig1_ns()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), DramError> {
        let fields = [
            ("t_ccds", self.t_ccds),
            ("t_ccd", self.t_ccd),
            ("t_wr", self.t_wr),
            ("t_pre", self.t_pre),
            ("t_act", self.t_act),
            ("t_rcd", self.t_rcd),
            ("t_rrd", self.t_rrd),
            ("read_slot", self.read_slot),
            ("lisa_link", self.lisa_link),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(DramError::BadConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Shape of the modeled hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DramGeometry {
    pub channels: u32,
    pub dimms_per_channel: u32,
    pub chips_per_dimm: u32,
    pub banks_per_chip: u32,
    pub subarrays_per_bank: u32,
    pub rows_per_subarray: u32,
    pub row_buffer_bytes: u32,
    pub grb_bytes: u32,
}

impl Default for DramGeometry {
    fn default() -> Self {
        Self::table1()
    }
}

impl DramGeometry {
    pub fn table1() -> Self {
        Self {
            channels: 1,
            dimms_per_channel: 2,
            chips_per_dimm: 4,
            banks_per_chip: 64,
            subarrays_per_bank: 32,
            rows_per_subarray: 1024,
            row_buffer_bytes: 2048,
            grb_bytes: 32,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "table1" => Some(Self::table1()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), DramError> {
        if self.subarrays_per_bank % 2 != 0 {
            return Err(DramError::BadConfig(
                "subarrays_per_bank must be even (subarrays are paired)".into(),
            ));
        }
        if self.grb_bytes == 0 || self.row_buffer_bytes % self.grb_bytes != 0 {
            return Err(DramError::BadConfig(
                "row buffer must be a whole number of GRB widths".into(),
            ));
        }
        if [
            self.channels,
            self.dimms_per_channel,
            self.chips_per_dimm,
            self.banks_per_chip,
            self.subarrays_per_bank,
            self.rows_per_subarray,
        ]
        .iter()
        .any(|&v| v == 0)
        {
            return Err(DramError::BadConfig("geometry fields must be positive".into()));
        }
        Ok(())
    }

    pub fn chips(&self) -> u32 {
        self.channels * self.dimms_per_channel * self.chips_per_dimm
    }

    pub fn pairs_per_bank(&self) -> u32 {
        self.subarrays_per_bank / 2
    }

    /// 32-bit columns in one row.
    pub fn row_cols(&self) -> u32 {
        self.row_buffer_bytes / 4
    }

    /// 32-bit words in one GRB fetch.
    pub fn grb_words(&self) -> u32 {
        self.grb_bytes / 4
    }

    /// GRB-width column fetches in one row.
    pub fn grb_cols_per_row(&self) -> u32 {
        self.row_buffer_bytes / self.grb_bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_matches_published_values() {
        let t = TimingParams::table1();
        assert_eq!(
            (t.t_ccds, t.t_ccd, t.t_wr, t.t_pre, t.t_act, t.t_rcd, t.t_rrd),
            (4, 2, 8, 12, 24, 24, 24)
        );
        let g = DramGeometry::table1();
        assert_eq!(g.chips(), 8);
        assert_eq!(g.banks_per_chip, 64);
        assert_eq!(g.subarrays_per_bank, 32);
        assert_eq!(g.rows_per_subarray, 1024);
        assert_eq!(g.row_cols(), 512);
        assert_eq!(g.grb_words(), 8);
        assert!(g.validate().is_ok());
        assert!(t.validate().is_ok());
    }

    #[test]
    fn presets_resolve() {
        assert!(TimingParams::preset("table1").is_some());
        assert!(TimingParams::preset("fig1-ns").is_some());
        assert!(TimingParams::preset("nope").is_none());
        let f = TimingParams::fig1_ns();
        assert_eq!((f.t_act, f.t_rcd, f.t_ccd, f.t_wr, f.t_pre), (12, 12, 4, 8, 12));
    }

    #[test]
    fn validation_catches_bad_shapes() {
        let mut g = DramGeometry::table1();
        g.subarrays_per_bank = 31;
        assert!(g.validate().is_err());
        let mut t = TimingParams::table1();
        t.t_ccd = 0;
        assert!(t.validate().is_err());
    }
}
