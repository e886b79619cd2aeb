//! Structural schedule validation, run before anything is timed: dependency
//! acyclicity, DRAM protocol legality (row open/close discipline), operand
//! residency of the functional payloads, and target well-formedness.
//! Returns every violation found; it never panics on malformed input.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::compiler::{BufInit, CmdKind, CommandSchedule, FuncOp, OperatorGraph};
use crate::dram::{DramGeometry, MemCommandKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MissingDep { cmd: u32, dep: u32 },
    Cycle,
    RowMiss { cmd: u32, chip: u32, bank: u32, subarray: u32, want: u32, open: Option<u32> },
    DoubleActivate { cmd: u32, chip: u32, bank: u32, subarray: u32 },
    TargetOutOfRange { cmd: u32, what: String },
    NotResident { cmd: u32, buf: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingDep { cmd, dep } => {
                write!(f, "command {cmd} depends on missing command {dep}")
            }
            Violation::Cycle => write!(f, "dependency cycle"),
            Violation::RowMiss { cmd, chip, bank, subarray, want, open } => write!(
                f,
                "command {cmd}: row {want} not open on {chip}/{bank}/{subarray} (open: {open:?})"
            ),
            Violation::DoubleActivate { cmd, chip, bank, subarray } => {
                write!(f, "command {cmd}: activate over open row on {chip}/{bank}/{subarray}")
            }
            Violation::TargetOutOfRange { cmd, what } => {
                write!(f, "command {cmd}: target out of range: {what}")
            }
            Violation::NotResident { cmd, buf } => {
                write!(f, "command {cmd}: reads buffer {buf} before any producer")
            }
        }
    }
}

/// Checks a schedule without running it.
pub fn validate(
    schedule: &CommandSchedule,
    graph: &OperatorGraph,
    geometry: &DramGeometry,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = schedule.commands.len();

    // dependency sanity and topological order
    let mut indegree = vec![0u32; n];
    let mut dependents: Vec<Vec<u32>> = vec![Vec::new(); n];
    for c in &schedule.commands {
        for &d in &c.deps {
            if d as usize >= n {
                out.push(Violation::MissingDep { cmd: c.id, dep: d });
            } else {
                indegree[c.id as usize] += 1;
                dependents[d as usize].push(c.id);
            }
        }
    }
    if !out.is_empty() {
        return out;
    }
    let mut queue: VecDeque<u32> =
        (0..n as u32).filter(|&i| indegree[i as usize] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(id) = queue.pop_front() {
        order.push(id);
        for &s in &dependents[id as usize] {
            indegree[s as usize] -= 1;
            if indegree[s as usize] == 0 {
                queue.push_back(s);
            }
        }
    }
    if order.len() != n {
        out.push(Violation::Cycle);
        return out;
    }

    // DRAM protocol scan and target ranges, in dependency order
    let mut open: BTreeMap<(u32, u32, u32), u32> = BTreeMap::new();
    let mut resident: BTreeSet<u32> = graph
        .buffers
        .iter()
        .enumerate()
        .filter(|(_, b)| matches!(b.init, BufInit::Input(_) | BufInit::Zero))
        .map(|(i, _)| i as u32)
        .collect();
    for &id in &order {
        let cmd = &schedule.commands[id as usize];
        if let CmdKind::Mem(m) = &cmd.kind {
            let t = m.target;
            let key = (t.chip, t.bank, t.subarray);
            if t.chip >= geometry.chips()
                || t.bank >= geometry.banks_per_chip
                || t.subarray >= geometry.subarrays_per_bank
            {
                out.push(Violation::TargetOutOfRange { cmd: id, what: format!("{t:?}") });
                continue;
            }
            match m.kind {
                MemCommandKind::Act { row } => {
                    if row >= geometry.rows_per_subarray {
                        out.push(Violation::TargetOutOfRange { cmd: id, what: format!("row {row}") });
                    } else if open.contains_key(&key) {
                        out.push(Violation::DoubleActivate {
                            cmd: id,
                            chip: t.chip,
                            bank: t.bank,
                            subarray: t.subarray,
                        });
                    } else {
                        open.insert(key, row);
                    }
                }
                MemCommandKind::Read { row, grb_cols } | MemCommandKind::Write { row, grb_cols } => {
                    if grb_cols == 0 || grb_cols > geometry.grb_cols_per_row() {
                        out.push(Violation::TargetOutOfRange {
                            cmd: id,
                            what: format!("{grb_cols} grb columns"),
                        });
                    }
                    let held = open.get(&key).copied();
                    if held != Some(row) {
                        out.push(Violation::RowMiss {
                            cmd: id,
                            chip: t.chip,
                            bank: t.bank,
                            subarray: t.subarray,
                            want: row,
                            open: held,
                        });
                    }
                }
                MemCommandKind::Pre => {
                    open.remove(&key);
                }
                // self-contained ops end precharged on both sides
                MemCommandKind::LisaCopy { dst_subarray, .. }
                | MemCommandKind::GrbTransfer { dst_subarray, .. } => {
                    open.remove(&key);
                    open.remove(&(t.chip, t.bank, dst_subarray));
                }
                MemCommandKind::InterbankXfer { dst_bank, dst_subarray, .. } => {
                    open.remove(&key);
                    open.remove(&(t.chip, dst_bank, dst_subarray));
                }
            }
        }
        if let Some(func) = &cmd.func {
            let (reads, writes) = func_buffers(func);
            for b in reads {
                if !resident.contains(&b) {
                    out.push(Violation::NotResident { cmd: id, buf: b });
                }
            }
            for b in writes {
                resident.insert(b);
            }
        }
    }
    out
}

fn func_buffers(func: &FuncOp) -> (Vec<u32>, Vec<u32>) {
    match func {
        FuncOp::NttStage { buf, .. } | FuncOp::InttStage { buf, .. } | FuncOp::InttScale { buf } => {
            (vec![*buf], vec![*buf])
        }
        FuncOp::Ew { a, b, dst, .. } => (vec![*a, *b], vec![*dst]),
        FuncOp::MulAcc { acc, a, b } => (vec![*acc, *a, *b], vec![*acc]),
        FuncOp::Bconv { src, dst } => (vec![*src], vec![*dst]),
        FuncOp::Reduce { srcs, dst } => (srcs.clone(), vec![*dst]),
        FuncOp::Rotate { src, dst, .. } | FuncOp::Copy { src, dst } => (vec![*src], vec![*dst]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{CommandSchedule, OpTag, OpTagKind};
    use crate::dram::{MemCommand, SubarrayId};

    fn tag() -> OpTag {
        OpTag { op_index: 0, kind: OpTagKind::Stream }
    }

    fn sa() -> SubarrayId {
        SubarrayId { chip: 0, bank: 0, subarray: 0 }
    }

    #[test]
    fn read_before_act_is_row_miss() {
        let mut sched = CommandSchedule::default();
        sched.push(
            CmdKind::Mem(MemCommand {
                target: sa(),
                kind: MemCommandKind::Read { row: 0, grb_cols: 1 },
            }),
            vec![],
            tag(),
        );
        let v = validate(&sched, &OperatorGraph::new(8), &DramGeometry::table1());
        assert!(matches!(v[0], Violation::RowMiss { want: 0, open: None, .. }));
    }

    #[test]
    fn legal_trio_passes() {
        let mut sched = CommandSchedule::default();
        let a = sched.push(
            CmdKind::Mem(MemCommand { target: sa(), kind: MemCommandKind::Act { row: 3 } }),
            vec![],
            tag(),
        );
        let r = sched.push(
            CmdKind::Mem(MemCommand {
                target: sa(),
                kind: MemCommandKind::Read { row: 3, grb_cols: 8 },
            }),
            vec![a],
            tag(),
        );
        sched.push(
            CmdKind::Mem(MemCommand { target: sa(), kind: MemCommandKind::Pre }),
            vec![r],
            tag(),
        );
        assert!(validate(&sched, &OperatorGraph::new(8), &DramGeometry::table1()).is_empty());
    }

    #[test]
    fn cycle_and_missing_dep_detected() {
        let mut sched = CommandSchedule::default();
        let a = sched.push(CmdKind::Barrier, vec![], tag());
        let b = sched.push(CmdKind::Barrier, vec![a], tag());
        sched.commands[a as usize].deps.push(b);
        let v = validate(&sched, &OperatorGraph::new(8), &DramGeometry::table1());
        assert_eq!(v, vec![Violation::Cycle]);

        let mut sched = CommandSchedule::default();
        sched.push(CmdKind::Barrier, vec![17], tag());
        let v = validate(&sched, &OperatorGraph::new(8), &DramGeometry::table1());
        assert!(matches!(v[0], Violation::MissingDep { dep: 17, .. }));
    }

    #[test]
    fn double_activate_detected() {
        let mut sched = CommandSchedule::default();
        let a = sched.push(
            CmdKind::Mem(MemCommand { target: sa(), kind: MemCommandKind::Act { row: 0 } }),
            vec![],
            tag(),
        );
        sched.push(
            CmdKind::Mem(MemCommand { target: sa(), kind: MemCommandKind::Act { row: 1 } }),
            vec![a],
            tag(),
        );
        let v = validate(&sched, &OperatorGraph::new(8), &DramGeometry::table1());
        assert!(matches!(v[0], Violation::DoubleActivate { .. }));
    }
}
