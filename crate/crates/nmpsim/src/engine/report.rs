//! Simulation report: total cycles, per-level busy/byte breakdown,
//! bandwidth utilization and the per-operator latency table.
//!
//! Level busy time is the union of that level's command intervals, so
//! overlapping commands are not double counted. Near-memory bandwidth
//! utilization divides delivered subarray bytes by the tCCD-limited peak of
//! the engaged pairs; because the metric's window is ambiguous, both the
//! whole-run and the access-active-window variants are reported.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::compiler::{CommandSchedule, OpTag, OpTagKind};

use super::Res;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    PeCompute,
    Subarray,
    PeChain,
    Lisa,
    BankNet,
    ChipNet,
    DimmLink,
    External,
}

impl Level {
    pub const ALL: [Level; 8] = [
        Level::PeCompute,
        Level::Subarray,
        Level::PeChain,
        Level::Lisa,
        Level::BankNet,
        Level::ChipNet,
        Level::DimmLink,
        Level::External,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Level::PeCompute => "pe_compute",
            Level::Subarray => "subarray",
            Level::PeChain => "pe_chain",
            Level::Lisa => "lisa",
            Level::BankNet => "bank_net",
            Level::ChipNet => "chip_net",
            Level::DimmLink => "dimm_link",
            Level::External => "external",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LevelStats {
    /// Union of busy intervals at this level, in cycles.
    pub busy_cycles: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub total_cycles: u64,
    pub levels: BTreeMap<Level, LevelStats>,
    /// Subarray access share of the run.
    pub read_write_fraction: f64,
    /// Share of the run with any in-memory or external movement in flight.
    pub movement_fraction: f64,
    /// Delivered subarray bytes over the engaged pairs' peak, whole run.
    pub utilization_whole_run: f64,
    /// Same numerator over the subarray-active window only.
    pub utilization_active_window: f64,
    pub remap_fraction: f64,
    /// Subarray pairs that issued at least one column command.
    pub engaged_pairs: u64,
    /// Executed PE work in PE-cycles; equals the schedule's uop census.
    pub pe_busy_pe_cycles: u64,
    pub commands_executed: u64,
    /// Aggregate latency per operator kind: (instances, total cycles).
    pub op_latency: BTreeMap<&'static str, (u64, u64)>,
}

impl SimReport {
    /// Machine-readable key-value text plus the per-level table; stable
    /// across runs for byte-identical reports.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "total_cycles = {}", self.total_cycles);
        let _ = writeln!(s, "commands_executed = {}", self.commands_executed);
        let _ = writeln!(s, "engaged_pairs = {}", self.engaged_pairs);
        let _ = writeln!(s, "pe_busy_pe_cycles = {}", self.pe_busy_pe_cycles);
        let _ = writeln!(s, "read_write_fraction = {:.6}", self.read_write_fraction);
        let _ = writeln!(s, "movement_fraction = {:.6}", self.movement_fraction);
        let _ = writeln!(s, "utilization_whole_run = {:.6}", self.utilization_whole_run);
        let _ = writeln!(
            s,
            "utilization_active_window = {:.6}",
            self.utilization_active_window
        );
        let _ = writeln!(s, "remap_fraction = {:.6}", self.remap_fraction);
        let _ = writeln!(s, "\n[levels]");
        for level in Level::ALL {
            let st = self.levels.get(&level).copied().unwrap_or_default();
            let _ = writeln!(
                s,
                "{} = {{ busy_cycles = {}, bytes = {} }}",
                level.name(),
                st.busy_cycles,
                st.bytes
            );
        }
        let _ = writeln!(s, "\n[operators]");
        for (kind, (count, cycles)) in &self.op_latency {
            let _ = writeln!(s, "{kind} = {{ instances = {count}, total_cycles = {cycles} }}");
        }
        s
    }

    pub fn level(&self, level: Level) -> LevelStats {
        self.levels.get(&level).copied().unwrap_or_default()
    }

    /// Chip-level transfer share: mesh, DIMM links and host traffic.
    pub fn chip_transfer_fraction(&self) -> f64 {
        if self.total_cycles == 0 {
            return 0.0;
        }
        let busy = self.level(Level::ChipNet).busy_cycles
            + self.level(Level::DimmLink).busy_cycles
            + self.level(Level::External).busy_cycles;
        busy as f64 / self.total_cycles as f64
    }

    pub fn external_fraction(&self) -> f64 {
        if self.total_cycles == 0 {
            return 0.0;
        }
        self.level(Level::External).busy_cycles as f64 / self.total_cycles as f64
    }
}

pub(super) fn name_of(k: OpTagKind) -> &'static str {
    match k {
        OpTagKind::Ntt => "ntt",
        OpTagKind::Intt => "intt",
        OpTagKind::Ew => "ew",
        OpTagKind::MulAcc => "mulacc",
        OpTagKind::Bconv => "bconv",
        OpTagKind::Reduce => "reduce",
        OpTagKind::Rotate => "rotate",
        OpTagKind::Copy => "copy",
        OpTagKind::Remap => "remap",
        OpTagKind::Stream => "stream",
    }
}

#[derive(Debug, Default)]
pub(super) struct ReportBuilder {
    pub end: u64,
    pub pe_busy: u64,
    intervals: BTreeMap<Level, Vec<(u64, u64)>>,
    bytes: BTreeMap<Level, u64>,
    remap_intervals: Vec<(u64, u64)>,
    claims: BTreeMap<Res, Vec<(u64, u64)>>,
    ops: BTreeMap<OpTag, (u64, u64)>,
    commands: u64,
    engaged: std::collections::BTreeSet<(u32, u32, u32)>,
}

impl ReportBuilder {
    pub fn add_interval(&mut self, level: Level, start: u64, end: u64, bytes: u64) {
        if end > start {
            self.intervals.entry(level).or_default().push((start, end));
        }
        *self.bytes.entry(level).or_default() += bytes;
    }

    pub fn add_remap(&mut self, start: u64, end: u64) {
        if end > start {
            self.remap_intervals.push((start, end));
        }
    }

    pub fn record_claim(&mut self, res: Res, start: u64, end: u64) {
        if end > start {
            self.claims.entry(res).or_default().push((start, end));
        }
        if let Res::Subarray(chip, bank, sa) = res {
            self.engaged.insert((chip, bank, sa / 2));
        }
    }

    pub fn record_op(&mut self, op: OpTag, start: u64, end: u64) {
        self.commands += 1;
        let e = self.ops.entry(op).or_insert((u64::MAX, 0));
        e.0 = e.0.min(start);
        e.1 = e.1.max(end);
    }

    /// No two commands may hold the same resource in overlapping intervals.
    pub fn exclusivity_check(&self) -> Result<(), String> {
        for (res, spans) in &self.claims {
            let mut sorted = spans.clone();
            sorted.sort_unstable();
            for w in sorted.windows(2) {
                if w[1].0 < w[0].1 {
                    return Err(format!(
                        "resource {res:?} double-claimed: [{}, {}) overlaps [{}, {})",
                        w[0].0, w[0].1, w[1].0, w[1].1
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn finish(self, schedule: &CommandSchedule) -> SimReport {
        let total = self.end;
        let mut levels = BTreeMap::new();
        let mut movement_spans = Vec::new();
        for level in Level::ALL {
            let busy = union_len(self.intervals.get(&level).cloned().unwrap_or_default());
            if !matches!(level, Level::PeCompute | Level::Subarray) {
                if let Some(v) = self.intervals.get(&level) {
                    movement_spans.extend_from_slice(v);
                }
            }
            levels.insert(
                level,
                LevelStats { busy_cycles: busy, bytes: self.bytes.get(&level).copied().unwrap_or(0) },
            );
        }
        let sa_busy = levels[&Level::Subarray].busy_cycles;
        let sa_bytes = levels[&Level::Subarray].bytes;
        let movement = union_len(movement_spans);
        let remap = union_len(self.remap_intervals.clone());
        let frac = |num: u64| if total == 0 { 0.0 } else { num as f64 / total as f64 };

        // peak delivery: one GRB width per tCCD per engaged pair
        let peak_bpc = 16.0 * self.engaged.len() as f64;
        let util = |window: u64| {
            if window == 0 || peak_bpc == 0.0 {
                0.0
            } else {
                (sa_bytes as f64 / (window as f64 * peak_bpc)).min(1.0)
            }
        };

        let mut op_latency: BTreeMap<&'static str, (u64, u64)> = BTreeMap::new();
        for (tag, (start, end)) in &self.ops {
            let e = op_latency.entry(name_of(tag.kind)).or_insert((0, 0));
            e.0 += 1;
            e.1 += end.saturating_sub(*start);
        }

        SimReport {
            total_cycles: total,
            read_write_fraction: frac(sa_busy),
            movement_fraction: frac(movement),
            utilization_whole_run: util(total),
            utilization_active_window: util(sa_busy),
            remap_fraction: frac(remap),
            engaged_pairs: self.engaged.len() as u64,
            pe_busy_pe_cycles: self.pe_busy,
            commands_executed: self.commands,
            levels,
            op_latency,
        }
        .tap_check(schedule)
    }
}

impl SimReport {
    fn tap_check(self, schedule: &CommandSchedule) -> Self {
        // work accounting: executed PE cycles equal the schedule's census
        debug_assert_eq!(self.pe_busy_pe_cycles, schedule.uop_census().total);
        self
    }
}

fn union_len(mut spans: Vec<(u64, u64)>) -> u64 {
    spans.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (s, e) in spans {
        match cur {
            Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                cur = Some((s, e));
                let _ = cs;
            }
            None => cur = Some((s, e)),
        }
    }
    if let Some((cs, ce)) = cur {
        total += ce - cs;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_merges_overlaps() {
        assert_eq!(union_len(vec![]), 0);
        assert_eq!(union_len(vec![(0, 10)]), 10);
        assert_eq!(union_len(vec![(0, 10), (5, 15)]), 15);
        assert_eq!(union_len(vec![(0, 10), (20, 30)]), 20);
        assert_eq!(union_len(vec![(20, 30), (0, 10), (9, 21)]), 30);
    }
}
