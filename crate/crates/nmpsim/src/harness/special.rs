//! Constructed schedules that exercise the memory system directly: the
//! bandwidth-saturation pattern and the ping-pong streaming loop. These are
//! built as raw command sequences rather than lowered graphs, because the
//! point is the exact row-level shape of the traffic.

use crate::compiler::{CmdKind, CommandSchedule, OpTag, OpTagKind};
use crate::dram::{DramGeometry, MemCommand, MemCommandKind, SubarrayId};
use crate::fabric::PeUop;

fn tag() -> OpTag {
    OpTag { op_index: 0, kind: OpTagKind::Stream }
}

/// Alternating full-row read streams over the two subarrays of one pair.
/// Reads are chained so the column bursts abut; while one subarray streams,
/// the other precharges and activates its next row, so the pair delivers at
/// the tCCD-limited rate with only the first activate and last precharge
/// exposed.
pub fn build_saturation(geometry: &DramGeometry, rows: u32) -> CommandSchedule {
    let mut sched = CommandSchedule::default();
    let gcols = geometry.grb_cols_per_row();
    let mut prev_read: Option<u32> = None;
    let mut prev_trio: [Option<u32>; 2] = [None, None];
    for r in 0..rows {
        let side = (r % 2) as usize;
        let sa = SubarrayId { chip: 0, bank: 0, subarray: side as u32 };
        let row = r / 2;
        let mut act_deps = Vec::new();
        if let Some(p) = prev_trio[side] {
            act_deps.push(p);
        }
        let act = sched.push(
            CmdKind::Mem(MemCommand { target: sa, kind: MemCommandKind::Act { row } }),
            act_deps,
            tag(),
        );
        let mut read_deps = vec![act];
        if let Some(p) = prev_read {
            read_deps.push(p); // abut the bursts across subarrays
        }
        let read = sched.push(
            CmdKind::Mem(MemCommand { target: sa, kind: MemCommandKind::Read { row, grb_cols: gcols } }),
            read_deps,
            tag(),
        );
        let pre = sched.push(
            CmdKind::Mem(MemCommand { target: sa, kind: MemCommandKind::Pre }),
            vec![read],
            tag(),
        );
        prev_read = Some(read);
        prev_trio[side] = Some(pre);
    }
    sched
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamStyle {
    /// Read from one subarray while the previous row's result is written to
    /// the partner.
    PingPong,
    /// Each row's read, compute and write fully drain before the next row.
    Serial,
}

/// Read-compute-write loop over one subarray pair, `rows` rows long.
pub fn build_stream(geometry: &DramGeometry, rows: u32, style: StreamStyle) -> CommandSchedule {
    let mut sched = CommandSchedule::default();
    let gcols = geometry.grb_cols_per_row();
    let src = SubarrayId { chip: 0, bank: 0, subarray: 0 };
    let dst = SubarrayId { chip: 0, bank: 0, subarray: 1 };
    let mut prev_src_pre: Option<u32> = None;
    let mut prev_dst_pre: Option<u32> = None;
    let mut prev_write: Option<u32> = None;
    for row in 0..rows {
        let mut act_deps = Vec::new();
        if let Some(p) = prev_src_pre {
            act_deps.push(p);
        }
        if style == StreamStyle::Serial {
            if let Some(w) = prev_write {
                act_deps.push(w); // drain the write before the next read
            }
        }
        let act = sched.push(
            CmdKind::Mem(MemCommand { target: src, kind: MemCommandKind::Act { row } }),
            act_deps,
            tag(),
        );
        let read = sched.push(
            CmdKind::Mem(MemCommand { target: src, kind: MemCommandKind::Read { row, grb_cols: gcols } }),
            vec![act],
            tag(),
        );
        let src_pre = sched.push(
            CmdKind::Mem(MemCommand { target: src, kind: MemCommandKind::Pre }),
            vec![read],
            tag(),
        );
        let compute = sched.push(
            CmdKind::Pe { chip: 0, bank: 0, pair: 0, uop: PeUop::Ew, uops_per_pe: 8, pes: 8 },
            vec![read],
            tag(),
        );
        let mut wact_deps = Vec::new();
        if let Some(p) = prev_dst_pre {
            wact_deps.push(p);
        }
        let wact = sched.push(
            CmdKind::Mem(MemCommand { target: dst, kind: MemCommandKind::Act { row } }),
            wact_deps,
            tag(),
        );
        let write = sched.push(
            CmdKind::Mem(MemCommand { target: dst, kind: MemCommandKind::Write { row, grb_cols: gcols } }),
            vec![wact, compute],
            tag(),
        );
        let dst_pre = sched.push(
            CmdKind::Mem(MemCommand { target: dst, kind: MemCommandKind::Pre }),
            vec![write],
            tag(),
        );
        prev_src_pre = Some(src_pre);
        prev_dst_pre = Some(dst_pre);
        prev_write = Some(write);
    }
    sched
}
