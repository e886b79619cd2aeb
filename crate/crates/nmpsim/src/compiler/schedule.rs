//! Timestampable command schedules: the compiler's output and the engine's
//! input. Every command carries dependency edges, a physical target that
//! implies its resource claims, and an optional functional payload applied
//! during co-simulation.

use crate::dram::MemCommand;
use crate::fabric::PeUop;
use crate::kernels::EwOp;

use super::graph::BufId;

pub type CmdId = u32;

/// Operator instance a command belongs to, for the per-operator latency
/// table and movement attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct OpTag {
    pub op_index: u32,
    pub kind: OpTagKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OpTagKind {
    Ntt,
    Intt,
    Ew,
    MulAcc,
    Bconv,
    Reduce,
    Rotate,
    Copy,
    Remap,
    Stream,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CmdKind {
    /// A raw DRAM command, timed by the dram state machines.
    Mem(MemCommand),
    /// A batch of identical uops on the PEs of one subarray pair.
    Pe {
        chip: u32,
        bank: u32,
        pair: u32,
        uop: PeUop,
        uops_per_pe: u64,
        pes: u32,
    },
    /// Words through the per-pair PE chain.
    Chain {
        chip: u32,
        bank: u32,
        pair: u32,
        words: u64,
        hops: u64,
        pipelined: bool,
    },
    /// Transfer over the bank-level skip network.
    BankXfer {
        chip: u32,
        src_bank: u32,
        dst_bank: u32,
        bytes: u64,
    },
    /// Transfer over the chip mesh (and DIMM links where the path crosses).
    ChipXfer { src_chip: u32, dst_chip: u32, bytes: u64 },
    /// Host-mediated transfer over the external interface (fallback when
    /// the chip network is disabled).
    ExtXfer { bytes: u64 },
    /// Zero-duration synchronization point.
    Barrier,
}

/// Functional payload co-computed when the command completes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FuncOp {
    NttStage { buf: BufId, stage: u32 },
    InttStage { buf: BufId, stage: u32 },
    InttScale { buf: BufId },
    Ew { op: EwOp, a: BufId, b: BufId, dst: BufId },
    MulAcc { acc: BufId, a: BufId, b: BufId },
    Bconv { src: BufId, dst: BufId },
    Reduce { srcs: Vec<BufId>, dst: BufId },
    Rotate { src: BufId, dst: BufId, k: usize },
    Copy { src: BufId, dst: BufId },
}

#[derive(Debug, Clone)]
pub struct Command {
    pub id: CmdId,
    pub kind: CmdKind,
    pub deps: Vec<CmdId>,
    pub op: OpTag,
    pub func: Option<FuncOp>,
    /// Remap-attributed work, for the remap-overhead fraction.
    pub remap: bool,
}

#[derive(Debug, Clone, Default)]
pub struct CommandSchedule {
    pub commands: Vec<Command>,
}

impl CommandSchedule {
    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn push(&mut self, kind: CmdKind, deps: Vec<CmdId>, op: OpTag) -> CmdId {
        let id = self.commands.len() as CmdId;
        self.commands.push(Command {
            id,
            kind,
            deps,
            op,
            func: None,
            remap: false,
        });
        id
    }

    pub fn push_func(
        &mut self,
        kind: CmdKind,
        deps: Vec<CmdId>,
        op: OpTag,
        func: FuncOp,
    ) -> CmdId {
        let id = self.push(kind, deps, op);
        self.commands[id as usize].func = Some(func);
        id
    }

    pub fn mark_remap(&mut self, from: CmdId) {
        for c in &mut self.commands[from as usize..] {
            c.remap = true;
        }
    }

    /// Census of compute uops by kind, PE-cycles each.
    pub fn uop_census(&self) -> UopCensus {
        let mut census = UopCensus::default();
        for c in &self.commands {
            if let CmdKind::Pe { uop, uops_per_pe, pes, .. } = c.kind {
                let n = uops_per_pe * pes as u64;
                census.total += n;
                match uop {
                    PeUop::Butterfly => census.butterfly += n,
                    PeUop::Mac => census.mac += n,
                    PeUop::Ew => census.ew += n,
                    PeUop::Shift => census.shift += n,
                }
            }
        }
        census
    }

    pub fn count_kind(&self, pred: impl Fn(&CmdKind) -> bool) -> usize {
        self.commands.iter().filter(|c| pred(&c.kind)).count()
    }

    /// One command per line: id, kind, target, deps.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for c in &self.commands {
            let kind = match &c.kind {
                CmdKind::Mem(m) => format!(
                    "mem {:?} chip {} bank {} sa {}",
                    m.kind, m.target.chip, m.target.bank, m.target.subarray
                ),
                CmdKind::Pe { chip, bank, pair, uop, uops_per_pe, pes } => format!(
                    "pe {uop:?} chip {chip} bank {bank} pair {pair} uops/pe {uops_per_pe} pes {pes}"
                ),
                CmdKind::Chain { chip, bank, pair, words, hops, pipelined } => format!(
                    "chain chip {chip} bank {bank} pair {pair} words {words} hops {hops} pipelined {pipelined}"
                ),
                CmdKind::BankXfer { chip, src_bank, dst_bank, bytes } => {
                    format!("banknet chip {chip} {src_bank}->{dst_bank} {bytes}B")
                }
                CmdKind::ChipXfer { src_chip, dst_chip, bytes } => {
                    format!("chipnet {src_chip}->{dst_chip} {bytes}B")
                }
                CmdKind::ExtXfer { bytes } => format!("ext {bytes}B"),
                CmdKind::Barrier => "barrier".to_string(),
            };
            let deps: Vec<String> = c.deps.iter().map(|d| d.to_string()).collect();
            out.push_str(&format!(
                "{} {:?}#{} {} deps [{}]\n",
                c.id,
                c.op.kind,
                c.op.op_index,
                kind,
                deps.join(",")
            ));
        }
        out
    }
}

/// Totals of PE work in the schedule, in PE-cycles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UopCensus {
    pub total: u64,
    pub butterfly: u64,
    pub mac: u64,
    pub ew: u64,
    pub shift: u64,
}
