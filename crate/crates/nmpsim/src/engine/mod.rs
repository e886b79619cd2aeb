//! Deterministic event-driven executor: consumes a command schedule,
//! advances the DRAM and fabric state machines, co-computes functional
//! values against the kernels, and emits the simulation report.
//!
//! Events are ordered by (ready-time, command-id); a command starts at the
//! latest of its ready time and its resources' free times, so contention
//! resolution is reproducible. Co-simulation applies each command's
//! functional payload at completion; a final bit-exact comparison against
//! the reference execution of the operator graph is the correctness gate
//! for every timing claim.

mod report;
mod validate;

pub use report::{Level, LevelStats, SimReport};
pub use validate::{validate, Violation};

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use thiserror::Error;

use crate::compiler::{
    reference_execute, BufId, CmdKind, CommandSchedule, CompileError, FuncOp, OperatorGraph,
};
use crate::dram::{DramError, DramState, MemCommandKind};
use crate::fabric::{chain_path_cycles, BankNetwork, ChipNetwork, PeConfig};
use crate::kernels::{self, elementwise, EwOp, RnsPolynomial, TwiddleTable};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("illegal schedule: {0}")]
    ScheduleIllegal(String),
    #[error("co-simulation mismatch on buffer {buf} channel {channel} index {index}: engine {engine}, reference {reference}")]
    ValueMismatch { buf: BufId, channel: usize, index: usize, engine: u32, reference: u32 },
    #[error(transparent)]
    Dram(#[from] DramError),
    #[error(transparent)]
    Compile(#[from] CompileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    TimingOnly,
    CoSim,
}

/// Everything the engine needs to time a schedule.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub pe: PeConfig,
    pub bank_net: BankNetwork,
    pub chip_net: ChipNetwork,
    /// Host-mediated external link (PCIe class), bytes per cycle.
    pub ext_bytes_per_cycle: u64,
}

impl EngineConfig {
    pub fn for_geometry(geometry: &crate::dram::DramGeometry, pe: PeConfig) -> Self {
        Self {
            pe,
            bank_net: BankNetwork::new(geometry.banks_per_chip, 16)
                .expect("geometry validated before engine construction"),
            chip_net: ChipNetwork::new(
                geometry.channels * geometry.dimms_per_channel,
                geometry.chips_per_dimm,
            )
            .expect("geometry validated before engine construction"),
            ext_bytes_per_cycle: 32,
        }
    }
}

/// Resources a command can hold exclusively for its duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Res {
    Subarray(u32, u32, u32),
    PairPes(u32, u32, u32),
    PairChain(u32, u32, u32),
    BankLink(u32, u32, u32),
    ChipLink(u32, u32),
    DimmLink(u32, u32),
    Ext,
}

struct Exec<'a> {
    graph: &'a OperatorGraph,
    config: &'a EngineConfig,
    dram: DramState,
    free_at: BTreeMap<Res, u64>,
    store: BTreeMap<BufId, Vec<Vec<u32>>>,
    tables: BTreeMap<(usize, u32), TwiddleTable>,
    report: report::ReportBuilder,
    mode: Mode,
}

/// Runs a validated schedule. In co-sim mode the returned map holds the
/// final contents of every live buffer, already checked bit-exactly against
/// the reference execution.
pub fn run(
    schedule: &CommandSchedule,
    graph: &OperatorGraph,
    inputs: &BTreeMap<BufId, Vec<Vec<u32>>>,
    mode: Mode,
    dram: DramState,
    config: &EngineConfig,
) -> Result<(SimReport, BTreeMap<BufId, Vec<Vec<u32>>>), EngineError> {
    let violations = validate(schedule, graph, dram.geometry());
    if let Some(v) = violations.first() {
        return Err(EngineError::ScheduleIllegal(v.to_string()));
    }

    let mut store = BTreeMap::new();
    if mode == Mode::CoSim {
        for (id, decl) in graph.buffers.iter().enumerate() {
            let id = id as BufId;
            match decl.init {
                crate::compiler::BufInit::Input(_) => {
                    let v = inputs.get(&id).ok_or_else(|| {
                        EngineError::ScheduleIllegal(format!("missing input for buffer {id}"))
                    })?;
                    store.insert(id, v.clone());
                }
                crate::compiler::BufInit::Zero => {
                    store.insert(
                        id,
                        vec![vec![0u32; graph.degree]; graph.channels_of(id) as usize],
                    );
                }
                crate::compiler::BufInit::Derived => {}
            }
        }
    }

    let mut exec = Exec {
        graph,
        config,
        dram,
        free_at: BTreeMap::new(),
        store,
        tables: BTreeMap::new(),
        report: report::ReportBuilder::default(),
        mode,
    };

    // dependency bookkeeping
    let n = schedule.commands.len();
    let mut remaining: Vec<u32> = vec![0; n];
    let mut dependents: Vec<Vec<u32>> = vec![Vec::new(); n];
    for c in &schedule.commands {
        remaining[c.id as usize] = c.deps.len() as u32;
        for &d in &c.deps {
            dependents[d as usize].push(c.id);
        }
    }
    let mut ready_time: Vec<u64> = vec![0; n];
    let mut heap: BinaryHeap<Reverse<(u64, u32)>> = (0..n as u32)
        .filter(|&i| remaining[i as usize] == 0)
        .map(|i| Reverse((0, i)))
        .collect();

    let mut completed = 0usize;
    while let Some(Reverse((t, id))) = heap.pop() {
        let cmd = &schedule.commands[id as usize];
        let end = exec.execute(cmd, t)?;
        completed += 1;
        for &dep in &dependents[id as usize] {
            let d = dep as usize;
            ready_time[d] = ready_time[d].max(end);
            remaining[d] -= 1;
            if remaining[d] == 0 {
                heap.push(Reverse((ready_time[d], dep)));
            }
        }
    }
    if completed != n {
        return Err(EngineError::ScheduleIllegal(format!(
            "{} commands never became ready",
            n - completed
        )));
    }
    exec.report.exclusivity_check().map_err(EngineError::ScheduleIllegal)?;

    let report = exec.report.finish(schedule);
    let outputs = exec.store;

    if mode == Mode::CoSim {
        let reference = reference_execute(graph, inputs)?;
        for (buf, ref_channels) in &reference {
            let got = outputs.get(buf).ok_or_else(|| {
                EngineError::ScheduleIllegal(format!("buffer {buf} never materialized in engine"))
            })?;
            for (ch, (rc, gc)) in ref_channels.iter().zip(got).enumerate() {
                for (i, (rv, gv)) in rc.iter().zip(gc).enumerate() {
                    if rv != gv {
                        return Err(EngineError::ValueMismatch {
                            buf: *buf,
                            channel: ch,
                            index: i,
                            engine: *gv,
                            reference: *rv,
                        });
                    }
                }
            }
        }
    }
    Ok((report, outputs))
}

impl<'a> Exec<'a> {
    fn execute(&mut self, cmd: &crate::compiler::Command, ready: u64) -> Result<u64, EngineError> {
        let (resources, level) = self.resources_of(&cmd.kind);
        let mut start = ready;
        for r in &resources {
            start = start.max(self.free_at.get(r).copied().unwrap_or(0));
        }
        let (end, bytes) = match &cmd.kind {
            CmdKind::Mem(m) => {
                let end = self.dram.issue(m, start)?;
                let bytes = match m.kind {
                    MemCommandKind::Read { grb_cols, .. } | MemCommandKind::Write { grb_cols, .. } => {
                        grb_cols as u64 * self.dram.geometry().grb_bytes as u64
                    }
                    MemCommandKind::LisaCopy { rows, .. } => {
                        rows as u64 * self.dram.geometry().row_buffer_bytes as u64
                    }
                    MemCommandKind::GrbTransfer { bytes, .. }
                    | MemCommandKind::InterbankXfer { bytes, .. } => bytes as u64,
                    _ => 0,
                };
                (end, bytes)
            }
            CmdKind::Pe { uops_per_pe, pes, .. } => {
                self.report.pe_busy += uops_per_pe * *pes as u64;
                (start + uops_per_pe, 0)
            }
            CmdKind::Chain { words, hops, pipelined, .. } => {
                let cycles = chain_path_cycles(*words, *hops, *pipelined, &self.config.pe);
                (start + cycles, words * 4)
            }
            CmdKind::BankXfer { src_bank, dst_bank, bytes, .. } => {
                let (_, cycles) = self
                    .config
                    .bank_net
                    .route_banks(*src_bank, *dst_bank, *bytes)
                    .ok_or_else(|| {
                        EngineError::ScheduleIllegal(format!(
                            "no bank route {src_bank}->{dst_bank}"
                        ))
                    })?;
                (start + cycles, *bytes)
            }
            CmdKind::ChipXfer { src_chip, dst_chip, bytes } => {
                let (path, cycles) = self.config.chip_net.route_chips(*src_chip, *dst_chip, *bytes);
                // attribute the DIMM-link share of the path separately
                let dimm_hops = path.iter().filter(|h| h.dimm_link).count() as u64;
                if dimm_hops > 0 {
                    let per_hop = bytes.div_ceil(self.config.chip_net.dimm_link_bytes_per_cycle)
                        + self.config.chip_net.router_latency;
                    self.report
                        .add_interval(Level::DimmLink, start, start + dimm_hops * per_hop, *bytes);
                }
                (start + cycles, *bytes)
            }
            CmdKind::ExtXfer { bytes } => {
                (start + bytes.div_ceil(self.config.ext_bytes_per_cycle), *bytes)
            }
            CmdKind::Barrier => (start, 0),
        };
        for r in resources {
            self.free_at.insert(r, end);
            self.report.record_claim(r, start, end);
        }
        if let Some(level) = level {
            self.report.add_interval(level, start, end, bytes);
        }
        if cmd.remap {
            self.report.add_remap(start, end);
        }
        self.report.record_op(cmd.op, start, end);
        self.report.end = self.report.end.max(end);
        if self.mode == Mode::CoSim {
            if let Some(func) = &cmd.func {
                self.apply(func)?;
            }
        }
        Ok(end)
    }

    fn resources_of(&self, kind: &CmdKind) -> (Vec<Res>, Option<Level>) {
        match kind {
            CmdKind::Mem(m) => {
                let t = m.target;
                let mut res = vec![Res::Subarray(t.chip, t.bank, t.subarray)];
                let level = match m.kind {
                    MemCommandKind::LisaCopy { dst_subarray, .. } => {
                        res.push(Res::Subarray(t.chip, t.bank, dst_subarray));
                        Level::Lisa
                    }
                    MemCommandKind::GrbTransfer { dst_subarray, .. } => {
                        res.push(Res::Subarray(t.chip, t.bank, dst_subarray));
                        Level::Lisa
                    }
                    MemCommandKind::InterbankXfer { dst_bank, dst_subarray, .. } => {
                        res.push(Res::Subarray(t.chip, dst_bank, dst_subarray));
                        Level::BankNet
                    }
                    _ => Level::Subarray,
                };
                (res, Some(level))
            }
            CmdKind::Pe { chip, bank, pair, .. } => {
                (vec![Res::PairPes(*chip, *bank, *pair)], Some(Level::PeCompute))
            }
            CmdKind::Chain { chip, bank, pair, .. } => {
                (vec![Res::PairChain(*chip, *bank, *pair)], Some(Level::PeChain))
            }
            CmdKind::BankXfer { chip, src_bank, dst_bank, bytes } => {
                let links = self
                    .config
                    .bank_net
                    .route_banks(*src_bank, *dst_bank, *bytes)
                    .map(|(path, _)| path)
                    .unwrap_or_default();
                (
                    links
                        .into_iter()
                        .map(|(a, b)| Res::BankLink(*chip, a, b))
                        .collect(),
                    Some(Level::BankNet),
                )
            }
            CmdKind::ChipXfer { src_chip, dst_chip, bytes } => {
                let (path, _) = self.config.chip_net.route_chips(*src_chip, *dst_chip, *bytes);
                (
                    path.into_iter()
                        .map(|h| {
                            let (a, b) = (h.from.min(h.to), h.from.max(h.to));
                            if h.dimm_link {
                                Res::DimmLink(a, b)
                            } else {
                                Res::ChipLink(a, b)
                            }
                        })
                        .collect(),
                    Some(Level::ChipNet),
                )
            }
            CmdKind::ExtXfer { .. } => (vec![Res::Ext], Some(Level::External)),
            CmdKind::Barrier => (Vec::new(), None),
        }
    }

    fn table(&mut self, basis_idx: usize, ch: u32) -> Result<TwiddleTable, EngineError> {
        if let Some(t) = self.tables.get(&(basis_idx, ch)) {
            return Ok(t.clone());
        }
        let basis = &self.graph.bases[basis_idx];
        let t = TwiddleTable::new(self.graph.degree, *basis.modulus(ch as usize))
            .map_err(CompileError::Kernel)?;
        self.tables.insert((basis_idx, ch), t.clone());
        Ok(t)
    }

    fn buf(&self, id: BufId) -> Result<&Vec<Vec<u32>>, EngineError> {
        self.store.get(&id).ok_or_else(|| {
            EngineError::ScheduleIllegal(format!("buffer {id} consumed before production"))
        })
    }

    fn as_poly(&self, id: BufId) -> Result<RnsPolynomial, EngineError> {
        let channels = self.buf(id)?.clone();
        RnsPolynomial::new(self.graph.basis_of(id).clone(), channels)
            .map_err(|e| EngineError::Compile(CompileError::Kernel(e)))
    }

    fn apply(&mut self, func: &FuncOp) -> Result<(), EngineError> {
        match func {
            FuncOp::NttStage { buf, stage } | FuncOp::InttStage { buf, stage } => {
                let fwd = matches!(func, FuncOp::NttStage { .. });
                let basis_idx = self.graph.buffers[*buf as usize].basis;
                let channels = self.graph.channels_of(*buf);
                let mut v = self.store.remove(buf).ok_or_else(|| {
                    EngineError::ScheduleIllegal(format!("buffer {buf} consumed before production"))
                })?;
                for ch in 0..channels {
                    let tw = self.table(basis_idx, ch)?;
                    if fwd {
                        kernels::ntt_stage(&mut v[ch as usize], &tw, *stage);
                    } else {
                        kernels::intt_stage(&mut v[ch as usize], &tw, *stage);
                    }
                }
                self.store.insert(*buf, v);
            }
            FuncOp::InttScale { buf } => {
                let basis_idx = self.graph.buffers[*buf as usize].basis;
                let channels = self.graph.channels_of(*buf);
                let mut v = self.store.remove(buf).ok_or_else(|| {
                    EngineError::ScheduleIllegal(format!("buffer {buf} consumed before production"))
                })?;
                for ch in 0..channels {
                    let tw = self.table(basis_idx, ch)?;
                    kernels::intt_scale(&mut v[ch as usize], &tw);
                }
                self.store.insert(*buf, v);
            }
            FuncOp::Ew { op, a, b, dst } => {
                let pa = self.as_poly(*a)?;
                let pb = self.as_poly(*b)?;
                let out = elementwise(*op, &pa, &pb)
                    .map_err(|e| EngineError::Compile(CompileError::Kernel(e)))?;
                self.store.insert(*dst, out.channels().to_vec());
            }
            FuncOp::MulAcc { acc, a, b } => {
                let pa = self.as_poly(*a)?;
                let pb = self.as_poly(*b)?;
                let pacc = self.as_poly(*acc)?;
                let prod = elementwise(EwOp::Mul, &pa, &pb)
                    .map_err(|e| EngineError::Compile(CompileError::Kernel(e)))?;
                let sum = elementwise(EwOp::Add, &pacc, &prod)
                    .map_err(|e| EngineError::Compile(CompileError::Kernel(e)))?;
                self.store.insert(*acc, sum.channels().to_vec());
            }
            FuncOp::Bconv { src, dst } => {
                let x = self.as_poly(*src)?;
                let out = kernels::bconv(&x, self.graph.basis_of(*dst))
                    .map_err(|e| EngineError::Compile(CompileError::Kernel(e)))?;
                self.store.insert(*dst, out.channels().to_vec());
            }
            FuncOp::Reduce { srcs, dst } => {
                let polys = srcs
                    .iter()
                    .map(|&s| self.as_poly(s))
                    .collect::<Result<Vec<_>, _>>()?;
                let out = kernels::reduce_sum(&polys)
                    .map_err(|e| EngineError::Compile(CompileError::Kernel(e)))?;
                self.store.insert(*dst, out.channels().to_vec());
            }
            FuncOp::Rotate { src, dst, k } => {
                let basis = self.graph.basis_of(*src).clone();
                let v = self.buf(*src)?.clone();
                let out = v
                    .iter()
                    .enumerate()
                    .map(|(ch, c)| {
                        crate::compiler::rotate_negacyclic(c, *k, basis.modulus(ch).value())
                    })
                    .collect();
                self.store.insert(*dst, out);
            }
            FuncOp::Copy { src, dst } => {
                if src != dst {
                    let v = self.buf(*src)?.clone();
                    self.store.insert(*dst, v);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{CommandSchedule, OpTag, OpTagKind};
    use crate::dram::{DramGeometry, MemCommand, SubarrayId, TimingParams};

    fn empty_graph() -> OperatorGraph {
        OperatorGraph::new(8)
    }

    fn engine_bits() -> (DramState, EngineConfig) {
        let g = DramGeometry::table1();
        (
            DramState::new(g, TimingParams::table1()),
            EngineConfig::for_geometry(&g, PeConfig::default()),
        )
    }

    fn tag() -> OpTag {
        OpTag { op_index: 0, kind: OpTagKind::Stream }
    }

    #[test]
    fn empty_schedule_is_zero_cycles() {
        let (dram, cfg) = engine_bits();
        let sched = CommandSchedule::default();
        let graph = empty_graph();
        let (report, _) =
            run(&sched, &graph, &BTreeMap::new(), Mode::TimingOnly, dram, &cfg).unwrap();
        assert_eq!(report.total_cycles, 0);
        assert_eq!(report.read_write_fraction, 0.0);
        assert_eq!(report.movement_fraction, 0.0);
    }

    #[test]
    fn act_reads_pre_matches_closed_form() {
        let (dram, cfg) = engine_bits();
        let t = TimingParams::table1();
        let graph = empty_graph();
        let mut sched = CommandSchedule::default();
        let sa = SubarrayId { chip: 0, bank: 0, subarray: 0 };
        let act = sched.push(
            CmdKind::Mem(MemCommand { target: sa, kind: MemCommandKind::Act { row: 0 } }),
            vec![],
            tag(),
        );
        let read = sched.push(
            CmdKind::Mem(MemCommand {
                target: sa,
                kind: MemCommandKind::Read { row: 0, grb_cols: 4 },
            }),
            vec![act],
            tag(),
        );
        sched.push(
            CmdKind::Mem(MemCommand { target: sa, kind: MemCommandKind::Pre }),
            vec![read],
            tag(),
        );
        let (report, _) =
            run(&sched, &graph, &BTreeMap::new(), Mode::TimingOnly, dram, &cfg).unwrap();
        assert_eq!(
            report.total_cycles,
            (t.t_act + t.t_rcd) + 3 * t.t_ccd + t.read_slot + t.t_pre
        );
    }

    #[test]
    fn determinism_across_runs() {
        let (dram, cfg) = engine_bits();
        let graph = empty_graph();
        let mut sched = CommandSchedule::default();
        // two contending PE batches plus a chain transfer
        for _ in 0..2 {
            sched.push(
                CmdKind::Pe { chip: 0, bank: 0, pair: 0, uop: crate::fabric::PeUop::Ew, uops_per_pe: 17, pes: 8 },
                vec![],
                tag(),
            );
        }
        sched.push(
            CmdKind::Chain { chip: 0, bank: 0, pair: 0, words: 64, hops: 2, pipelined: true },
            vec![0, 1],
            tag(),
        );
        let r1 = run(&sched, &graph, &BTreeMap::new(), Mode::TimingOnly, dram.clone(), &cfg)
            .unwrap()
            .0;
        let r2 = run(&sched, &graph, &BTreeMap::new(), Mode::TimingOnly, dram, &cfg)
            .unwrap()
            .0;
        assert_eq!(r1.total_cycles, r2.total_cycles);
        assert_eq!(r1.to_text(), r2.to_text());
        // contending PE batches serialize: 17 + 17, then 64+1 chain cycles
        assert_eq!(r1.total_cycles, 34 + 65);
    }
}
