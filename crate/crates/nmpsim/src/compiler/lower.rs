//! Graph-to-schedule lowering.
//!
//! Every polynomial operator turns into per-pair row streams (activate,
//! column burst, precharge), PE uop batches and the interconnect exchanges
//! its stage structure demands. Reads come from the data side of each
//! subarray pair and writes go to the ping-pong partner, so the engine can
//! overlap them. Barriers (zero-duration commands) fan dependencies in and
//! out between phases and carry the functional payloads for co-simulation.
//!
//! Disabled topology levels fall back to their slower equivalents at
//! lowering time: chain traffic routes through the bank's global row buffer,
//! the bank network falls back to the serial inter-bank bus, and chip
//! traffic without a mesh goes through the host's external link.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dram::{MemCommand, MemCommandKind, SubarrayId};
use crate::fabric::PeUop;
use crate::kernels::EwOp;
use crate::layout::{PlacementMap, PolyPlacement, RemapDirection};

use super::graph::{BufId, OpKind, OperatorGraph};
use super::schedule::{CmdId, CmdKind, CommandSchedule, FuncOp, OpTag, OpTagKind};
use super::CompileError;

/// Which interconnect levels exist in this build, and whether runtime
/// remapping is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub pe_chain: bool,
    pub bank_net: bool,
    pub chip_net: bool,
    pub dimm_link: bool,
    pub remap: bool,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self { pe_chain: true, bank_net: true, chip_net: true, dimm_link: true, remap: true }
    }
}

impl TopologyConfig {
    pub fn baseline() -> Self {
        Self { pe_chain: false, bank_net: false, chip_net: false, dimm_link: false, remap: false }
    }
}

/// Stage counts per hierarchy level for one transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NttSplit {
    pub local: u32,
    pub chain: u32,
    pub lisa: u32,
    pub bank: u32,
}

impl NttSplit {
    /// Stage-to-level split of a transform on a placed polynomial.
    pub fn for_poly(map: &PlacementMap, p: &PolyPlacement) -> NttSplit {
        let cpp = map.coeffs_per_pair(p);
        let pes = pes_for_pair_block(cpp, map.pe().pe_num_per_pair);
        let pairs_in_bank = p.pairs_engaged.min(map.geometry().pairs_per_bank());
        let banks = map.banks_engaged(p);
        NttSplit {
            local: (cpp / pes).trailing_zeros(),
            chain: pes.trailing_zeros(),
            lisa: pairs_in_bank.trailing_zeros(),
            bank: banks.trailing_zeros(),
        }
    }

    pub fn total(&self) -> u32 {
        self.local + self.chain + self.lisa + self.bank
    }

    pub fn as_tuple(&self) -> (u32, u32, u32, u32) {
        (self.local, self.chain, self.lisa, self.bank)
    }
}

/// PEs engaged on one pair block: one PE per 32-coefficient granule, capped
/// by the configured PE count. Extra PEs idle, which is where the PE
/// utilization knee comes from.
pub fn pes_for_pair_block(coeffs_per_pair: u32, pe_num: u32) -> u32 {
    (coeffs_per_pair / 32).clamp(1, pe_num)
}

struct Lowerer<'g> {
    graph: &'g OperatorGraph,
    map: PlacementMap,
    topo: TopologyConfig,
    sched: CommandSchedule,
    /// Protocol chain: last command on each subarray, so activates never
    /// overlap an open row.
    sa_last: BTreeMap<(u32, u32, u32), CmdId>,
    op_counter: u32,
}

/// Lowers a graph over an initial placement. Returns the schedule and the
/// placement as left by any remap nodes.
pub fn lower(
    graph: &OperatorGraph,
    map: PlacementMap,
    topo: TopologyConfig,
) -> Result<(CommandSchedule, PlacementMap), CompileError> {
    let mut lw = Lowerer {
        graph,
        map,
        topo,
        sched: CommandSchedule::default(),
        sa_last: BTreeMap::new(),
        op_counter: 0,
    };
    let order = graph.topo_order()?;
    // pending read counts per buffer, so a remap only re-streams data that
    // already exists and some later node still consumes
    let mut pending_reads: BTreeMap<BufId, u32> = BTreeMap::new();
    for node in &graph.nodes {
        for b in node_reads(&node.kind) {
            *pending_reads.entry(b).or_default() += 1;
        }
    }
    let mut produced: std::collections::BTreeSet<BufId> = graph
        .buffers
        .iter()
        .enumerate()
        .filter(|(_, b)| matches!(b.init, super::BufInit::Input(_) | super::BufInit::Zero))
        .map(|(i, _)| i as BufId)
        .collect();
    let mut node_barrier: Vec<Option<CmdId>> = vec![None; graph.nodes.len()];
    for id in order {
        let node = &graph.nodes[id];
        let deps: Vec<CmdId> = node
            .deps
            .iter()
            .map(|&d| node_barrier[d].expect("topological order"))
            .collect();
        let barrier = if let OpKind::Remap { direction } = node.kind {
            let live: Vec<u32> = pending_reads
                .iter()
                .filter(|(b, &n)| n > 0 && produced.contains(b))
                .map(|(&b, _)| lw.graph.buffers[b as usize].placement)
                .collect();
            lw.lower_remap(direction, &live, &deps)?
        } else {
            lw.lower_node(&node.kind, &deps)?
        };
        for b in node_reads(&node.kind) {
            if let Some(n) = pending_reads.get_mut(&b) {
                *n = n.saturating_sub(1);
            }
        }
        if let Some(b) = node_writes(&node.kind) {
            produced.insert(b);
        }
        node_barrier[id] = Some(barrier);
    }
    Ok((lw.sched, lw.map))
}

/// The buffer a node produces, if any.
fn node_writes(kind: &OpKind) -> Option<BufId> {
    match kind {
        OpKind::Ntt { buf } | OpKind::Intt { buf } => Some(*buf),
        OpKind::Ew { dst, .. }
        | OpKind::Bconv { dst, .. }
        | OpKind::Reduce { dst, .. }
        | OpKind::Rotate { dst, .. }
        | OpKind::Copy { dst, .. } => Some(*dst),
        OpKind::MulAcc { acc, .. } => Some(*acc),
        OpKind::Remap { .. } => None,
    }
}

/// Buffers a node consumes.
fn node_reads(kind: &OpKind) -> Vec<BufId> {
    match kind {
        OpKind::Ntt { buf } | OpKind::Intt { buf } => vec![*buf],
        OpKind::Ew { a, b, .. } => vec![*a, *b],
        OpKind::MulAcc { acc, a, b } => vec![*acc, *a, *b],
        OpKind::Bconv { src, .. } => vec![*src],
        OpKind::Reduce { srcs, .. } => srcs.clone(),
        OpKind::Rotate { src, .. } | OpKind::Copy { src, .. } => vec![*src],
        OpKind::Remap { .. } => Vec::new(),
    }
}

impl<'g> Lowerer<'g> {
    fn tag(&mut self, kind: OpTagKind) -> OpTag {
        self.op_counter += 1;
        OpTag { op_index: self.op_counter - 1, kind }
    }

    fn placement(&self, buf: BufId) -> PolyPlacement {
        *self
            .map
            .poly(self.graph.buffers[buf as usize].placement)
            .expect("buffer placements are created before lowering")
    }

    /// Chains a memory command after the previous command on its subarray.
    fn push_mem(
        &mut self,
        target: SubarrayId,
        kind: MemCommandKind,
        mut deps: Vec<CmdId>,
        tag: OpTag,
    ) -> CmdId {
        let key = (target.chip, target.bank, target.subarray);
        if let Some(&last) = self.sa_last.get(&key) {
            deps.push(last);
        }
        // copies occupy a second subarray; chain on it as well
        let other = match kind {
            MemCommandKind::LisaCopy { dst_subarray, .. }
            | MemCommandKind::GrbTransfer { dst_subarray, .. } => Some(dst_subarray),
            _ => None,
        };
        if let Some(sa) = other {
            if let Some(&last) = self.sa_last.get(&(target.chip, target.bank, sa)) {
                deps.push(last);
            }
        }
        let id = self
            .sched
            .push(CmdKind::Mem(MemCommand { target, kind }), deps, tag);
        self.sa_last.insert(key, id);
        if let Some(sa) = other {
            self.sa_last.insert((target.chip, target.bank, sa), id);
        }
        id
    }

    fn barrier(&mut self, deps: Vec<CmdId>, tag: OpTag) -> CmdId {
        self.sched.push(CmdKind::Barrier, deps, tag)
    }

    /// Occupied GRB columns of one row of this polynomial.
    fn row_gcols(&self, _p: &PolyPlacement, channels: u32) -> u32 {
        let words = channels * self.map.poly_col();
        words
            .div_ceil(self.map.geometry().grb_words())
            .clamp(1, self.map.geometry().grb_cols_per_row())
    }

    /// Streams all rows of a pair block out of the data subarray.
    /// Returns (last READ id, all ids) — compute depends on the READ, not
    /// the trailing precharge.
    fn read_pair_rows(
        &mut self,
        p: &PolyPlacement,
        k: u32,
        channels: u32,
        deps: &[CmdId],
        tag: OpTag,
    ) -> (CmdId, Vec<CmdId>) {
        let (bank, pair) = self.map.pair_coords(p, k);
        let sa = SubarrayId { chip: p.chip, bank, subarray: self.map.data_subarray(pair) };
        let rows = self.map.rows_per_pair(p);
        let gcols = self.row_gcols(p, channels);
        let mut ids = Vec::with_capacity(rows as usize * 3);
        let mut last_read = 0;
        for r in 0..rows {
            let row = p.row_base + r;
            let act = self.push_mem(sa, MemCommandKind::Act { row }, deps.to_vec(), tag);
            let read =
                self.push_mem(sa, MemCommandKind::Read { row, grb_cols: gcols }, vec![act], tag);
            let pre = self.push_mem(sa, MemCommandKind::Pre, vec![read], tag);
            ids.extend([act, read, pre]);
            last_read = read;
        }
        (last_read, ids)
    }

    /// Streams all rows of a pair block into the ping-pong partner
    /// subarray. The activate may overlap compute; the column write waits
    /// for `data_ready`. Returns (last WRITE id, all ids).
    fn write_pair_rows(
        &mut self,
        p: &PolyPlacement,
        k: u32,
        channels: u32,
        deps: &[CmdId],
        data_ready: CmdId,
        tag: OpTag,
    ) -> (CmdId, Vec<CmdId>) {
        let (bank, pair) = self.map.pair_coords(p, k);
        let sa = SubarrayId { chip: p.chip, bank, subarray: self.map.partner_subarray(pair) };
        let rows = self.map.rows_per_pair(p);
        let gcols = self.row_gcols(p, channels);
        let mut ids = Vec::with_capacity(rows as usize * 3);
        let mut last_write = 0;
        for r in 0..rows {
            let row = p.row_base + r;
            let act = self.push_mem(sa, MemCommandKind::Act { row }, deps.to_vec(), tag);
            let write = self.push_mem(
                sa,
                MemCommandKind::Write { row, grb_cols: gcols },
                vec![act, data_ready],
                tag,
            );
            let pre = self.push_mem(sa, MemCommandKind::Pre, vec![write], tag);
            ids.extend([act, write, pre]);
            last_write = write;
        }
        (last_write, ids)
    }

    /// PE batch on one pair.
    fn pe(
        &mut self,
        p: &PolyPlacement,
        k: u32,
        uop: PeUop,
        total_uops: u64,
        pes: u32,
        deps: Vec<CmdId>,
        tag: OpTag,
    ) -> CmdId {
        let (bank, pair) = self.map.pair_coords(p, k);
        self.sched.push(
            CmdKind::Pe {
                chip: p.chip,
                bank,
                pair,
                uop,
                uops_per_pe: total_uops.div_ceil(pes as u64),
                pes,
            },
            deps,
            tag,
        )
    }

    /// Exchange over the PE chain of one pair, or the GRB fallback when the
    /// chain is disabled.
    fn chain_xfer(
        &mut self,
        p: &PolyPlacement,
        k: u32,
        words: u64,
        hops: u64,
        deps: Vec<CmdId>,
        tag: OpTag,
    ) -> CmdId {
        let (bank, pair) = self.map.pair_coords(p, k);
        if self.topo.pe_chain {
            self.sched.push(
                CmdKind::Chain { chip: p.chip, bank, pair, words, hops, pipelined: true },
                deps,
                tag,
            )
        } else {
            // inter-PE movement through the bank's global row buffer
            let sa = SubarrayId { chip: p.chip, bank, subarray: self.map.data_subarray(pair) };
            self.push_mem(
                sa,
                MemCommandKind::GrbTransfer {
                    row: p.row_base,
                    dst_subarray: self.map.partner_subarray(pair),
                    dst_row: p.row_base,
                    bytes: (words * 4) as u32,
                },
                deps,
                tag,
            )
        }
    }

    /// Exchange between two banks: skip network, or the serial inter-bank
    /// bus when the network is disabled.
    fn bank_xfer(
        &mut self,
        chip: u32,
        src_bank: u32,
        dst_bank: u32,
        src_sa: u32,
        dst_sa: u32,
        row: u32,
        bytes: u64,
        deps: Vec<CmdId>,
        tag: OpTag,
    ) -> CmdId {
        if self.topo.bank_net {
            self.sched
                .push(CmdKind::BankXfer { chip, src_bank, dst_bank, bytes }, deps, tag)
        } else {
            let sa = SubarrayId { chip, bank: src_bank, subarray: src_sa };
            self.push_mem(
                sa,
                MemCommandKind::InterbankXfer {
                    row,
                    dst_bank,
                    dst_subarray: dst_sa,
                    dst_row: row,
                    bytes: bytes as u32,
                },
                deps,
                tag,
            )
        }
    }

    /// Transfer between chips: mesh, DIMM link, or the host's external
    /// interface when the needed level is disabled.
    fn chip_xfer(
        &mut self,
        src_chip: u32,
        dst_chip: u32,
        bytes: u64,
        deps: Vec<CmdId>,
        tag: OpTag,
    ) -> CmdId {
        let per_dimm = self.map.geometry().chips_per_dimm;
        let crosses_dimm = src_chip / per_dimm != dst_chip / per_dimm;
        let routable = self.topo.chip_net && (!crosses_dimm || self.topo.dimm_link);
        if routable {
            self.sched
                .push(CmdKind::ChipXfer { src_chip, dst_chip, bytes }, deps, tag)
        } else {
            self.sched.push(CmdKind::ExtXfer { bytes }, deps, tag)
        }
    }

    fn lower_node(&mut self, kind: &OpKind, deps: &[CmdId]) -> Result<CmdId, CompileError> {
        match kind {
            OpKind::Ntt { buf } => self.lower_transform(*buf, true, deps),
            OpKind::Intt { buf } => self.lower_transform(*buf, false, deps),
            OpKind::Ew { op, a, b, dst } => self.lower_ew(*op, *a, *b, *dst, deps),
            OpKind::MulAcc { acc, a, b } => self.lower_mulacc(*acc, *a, *b, deps),
            OpKind::Bconv { src, dst } => self.lower_bconv(*src, *dst, deps),
            OpKind::Reduce { srcs, dst } => self.lower_reduce(srcs, *dst, deps),
            OpKind::Rotate { src, dst, k } => self.lower_rotate(*src, *dst, *k, deps),
            OpKind::Copy { src, dst } => self.lower_copy(*src, *dst, deps),
            OpKind::Remap { .. } => unreachable!("remap nodes are handled by the driver loop"),
        }
    }

    /// The staged transform. Local and chain stages run on RF-resident
    /// data inside one read/write envelope; every wider stage streams the
    /// block through the PEs around its exchange. The forward transform
    /// walks stage distances downward (bank exchanges first), the inverse
    /// walks them back up; the per-level stage counts are identical.
    fn lower_transform(
        &mut self,
        buf: BufId,
        forward: bool,
        deps: &[CmdId],
    ) -> Result<CmdId, CompileError> {
        let p = self.placement(buf);
        let tag = self.tag(if forward { OpTagKind::Ntt } else { OpTagKind::Intt });
        let channels = self.graph.channels_of(buf);
        let n = p.degree;
        let m = n.trailing_zeros();
        let cpp = self.map.coeffs_per_pair(&p);
        let pes = pes_for_pair_block(cpp, self.map.pe().pe_num_per_pair);
        let split = NttSplit::for_poly(&self.map, &p);
        debug_assert_eq!(split.total(), m);

        let stage_order: Vec<u32> =
            if forward { (0..m).rev().collect() } else { (0..m).collect() };
        // butterflies per pair per stage, across all channels
        let bf_per_pair = channels as u64 * cpp as u64 / 2;
        let half_block_bytes = channels as u64 * cpp as u64 * 2;

        let mut prev = self.barrier(deps.to_vec(), tag);
        let mut resident = false; // block loaded and held in RFs

        for (i, &s) in stage_order.iter().enumerate() {
            let d = 1u64 << s;
            let level = self.stage_level(&split, d, cpp);
            let mut stage_cmds: Vec<CmdId> = Vec::new();

            match level {
                StageLevel::Local | StageLevel::Chain => {
                    if !resident {
                        // one streaming read covers the whole local+chain run
                        let mut reads = Vec::new();
                        for k in 0..p.pairs_engaged {
                            let (r, _) = self.read_pair_rows(&p, k, channels, &[prev], tag);
                            reads.push(r);
                        }
                        prev = self.barrier(reads, tag);
                        resident = true;
                    }
                    for k in 0..p.pairs_engaged {
                        let mut pe_deps = vec![prev];
                        if let StageLevel::Chain = level {
                            let hops = (d / (cpp as u64 / pes as u64)).max(1);
                            let words = channels as u64 * (cpp as u64 / pes as u64) / 2;
                            let x = self.chain_xfer(&p, k, words, hops, vec![prev], tag);
                            pe_deps.push(x);
                        }
                        stage_cmds.push(self.pe(
                            &p,
                            k,
                            PeUop::Butterfly,
                            bf_per_pair,
                            pes,
                            pe_deps,
                            tag,
                        ));
                    }
                }
                StageLevel::Lisa | StageLevel::Bank => {
                    if resident {
                        // flush RF-resident results before wide exchanges
                        let mut writes = Vec::new();
                        for k in 0..p.pairs_engaged {
                            let (w, _) =
                                self.write_pair_rows(&p, k, channels, &[prev], prev, tag);
                            writes.push(w);
                        }
                        prev = self.barrier(writes, tag);
                        resident = false;
                    }
                    // exchange half of every pair's block with its partner
                    let mut xfers = Vec::new();
                    for k in 0..p.pairs_engaged {
                        xfers.push(self.stage_exchange(&p, k, level, d, cpp, half_block_bytes, prev, tag)?);
                    }
                    let exchanged = self.barrier(xfers, tag);
                    // stream, butterfly, write back per pair
                    let mut stage_done = Vec::new();
                    for k in 0..p.pairs_engaged {
                        let (read, _) = self.read_pair_rows(&p, k, channels, &[exchanged], tag);
                        let pe = self.pe(&p, k, PeUop::Butterfly, bf_per_pair, pes, vec![read], tag);
                        let (w, _) = self.write_pair_rows(&p, k, channels, &[exchanged], pe, tag);
                        stage_done.push(w);
                    }
                    stage_cmds = stage_done;
                }
            }

            let func = if forward {
                FuncOp::NttStage { buf, stage: s }
            } else {
                FuncOp::InttStage { buf, stage: s }
            };
            prev = self
                .sched
                .push_func(CmdKind::Barrier, stage_cmds, tag, func);

            // last stage of the resident run writes the block back
            let is_last = i == stage_order.len() - 1;
            let next_wide = stage_order
                .get(i + 1)
                .map(|&ns| {
                    matches!(
                        self.stage_level(&split, 1u64 << ns, cpp),
                        StageLevel::Lisa | StageLevel::Bank
                    )
                })
                .unwrap_or(true);
            if resident && (is_last || next_wide) {
                let mut writes = Vec::new();
                for k in 0..p.pairs_engaged {
                    let (w, _) = self.write_pair_rows(&p, k, channels, &[prev], prev, tag);
                    writes.push(w);
                }
                prev = self.barrier(writes, tag);
                resident = false;
            }
        }

        if !forward {
            // fold the 1/n scaling into a final elementwise pass
            let mut scales = Vec::new();
            for k in 0..p.pairs_engaged {
                scales.push(self.pe(
                    &p,
                    k,
                    PeUop::Ew,
                    channels as u64 * cpp as u64,
                    pes,
                    vec![prev],
                    tag,
                ));
            }
            prev = self
                .sched
                .push_func(CmdKind::Barrier, scales, tag, FuncOp::InttScale { buf });
        }
        Ok(prev)
    }

    fn stage_level(&self, split: &NttSplit, d: u64, cpp: u32) -> StageLevel {
        let cpe = cpp as u64 >> split.chain; // coefficients per engaged PE
        let pairs_in_bank_span = cpp as u64 * (1u64 << split.lisa);
        if d < cpe {
            StageLevel::Local
        } else if d < cpp as u64 {
            StageLevel::Chain
        } else if d < pairs_in_bank_span {
            StageLevel::Lisa
        } else {
            StageLevel::Bank
        }
    }

    /// The coefficient exchange of one wide stage for pair `k`.
    #[allow(clippy::too_many_arguments)]
    fn stage_exchange(
        &mut self,
        p: &PolyPlacement,
        k: u32,
        level: StageLevel,
        d: u64,
        cpp: u32,
        half_block_bytes: u64,
        prev: CmdId,
        tag: OpTag,
    ) -> Result<CmdId, CompileError> {
        let rows = self.map.rows_per_pair(p);
        let (bank, pair) = self.map.pair_coords(p, k);
        match level {
            StageLevel::Lisa => {
                // partner pair within the bank; relay row copies across the
                // intervening subarrays hop by hop
                let delta = (d / cpp as u64) as u32;
                let partner_k = k ^ delta;
                let (pbank, ppair) = self.map.pair_coords(p, partner_k);
                debug_assert_eq!(pbank, bank, "lisa exchange stays inside the bank");
                let from_sa = self.map.data_subarray(pair);
                let to_sa = self.map.data_subarray(ppair);
                let step = if to_sa > from_sa { 1i64 } else { -1 };
                let mut cur = from_sa as i64;
                let mut dep = prev;
                let moved_rows = rows.div_ceil(2).max(1);
                while cur != to_sa as i64 {
                    let next = cur + step;
                    let sa = SubarrayId { chip: p.chip, bank, subarray: cur as u32 };
                    dep = self.push_mem(
                        sa,
                        MemCommandKind::LisaCopy {
                            row: p.row_base,
                            dst_subarray: next as u32,
                            dst_row: p.row_base,
                            rows: moved_rows,
                        },
                        vec![dep],
                        tag,
                    );
                    cur = next;
                }
                Ok(dep)
            }
            StageLevel::Bank => {
                let pairs_in_bank = p.pairs_engaged.min(self.map.geometry().pairs_per_bank());
                let delta_banks = (d / (cpp as u64 * pairs_in_bank as u64)) as u32;
                let bank_index_in_group = k / self.map.geometry().pairs_per_bank();
                let partner_index = bank_index_in_group ^ delta_banks;
                let dst_bank = p.group * crate::layout::BANK_GROUP_SIZE + partner_index;
                Ok(self.bank_xfer(
                    p.chip,
                    bank,
                    dst_bank,
                    self.map.data_subarray(pair),
                    self.map.data_subarray(pair),
                    p.row_base,
                    half_block_bytes,
                    vec![prev],
                    tag,
                ))
            }
            _ => unreachable!("only wide stages exchange"),
        }
    }

    /// Stream both operands through the PEs, one elementwise pass, stream
    /// the result to the partner side.
    fn lower_ew(
        &mut self,
        op: EwOp,
        a: BufId,
        b: BufId,
        dst: BufId,
        deps: &[CmdId],
    ) -> Result<CmdId, CompileError> {
        let tag = self.tag(OpTagKind::Ew);
        let done = self.binary_streams(a, b, dst, PeUop::Ew, deps, tag)?;
        Ok(self
            .sched
            .push_func(CmdKind::Barrier, done, tag, FuncOp::Ew { op, a, b, dst }))
    }

    fn lower_mulacc(
        &mut self,
        acc: BufId,
        a: BufId,
        b: BufId,
        deps: &[CmdId],
    ) -> Result<CmdId, CompileError> {
        let tag = self.tag(OpTagKind::MulAcc);
        let done = self.binary_streams(a, b, acc, PeUop::Mac, deps, tag)?;
        Ok(self
            .sched
            .push_func(CmdKind::Barrier, done, tag, FuncOp::MulAcc { acc, a, b }))
    }

    /// Shared two-operand stream pattern.
    fn binary_streams(
        &mut self,
        a: BufId,
        b: BufId,
        dst: BufId,
        uop: PeUop,
        deps: &[CmdId],
        tag: OpTag,
    ) -> Result<Vec<CmdId>, CompileError> {
        let pa = self.placement(a);
        let pb = self.placement(b);
        let pd = self.placement(dst);
        let channels = self.graph.channels_of(a);
        let cpp = self.map.coeffs_per_pair(&pa);
        let pes = pes_for_pair_block(cpp, self.map.pe().pe_num_per_pair);
        debug_assert_eq!(pa.pairs_engaged, pb.pairs_engaged);
        let mut done = Vec::new();
        for k in 0..pa.pairs_engaged {
            let (ra, _) = self.read_pair_rows(&pa, k, channels, deps, tag);
            let (rb, _) = self.read_pair_rows(&pb, k, channels, deps, tag);
            let pe = self.pe(
                &pa,
                k,
                uop,
                channels as u64 * cpp as u64,
                pes,
                vec![ra, rb],
                tag,
            );
            let (w, _) = self.write_pair_rows(&pd, k, channels, &[ra], pe, tag);
            done.push(w);
        }
        Ok(done)
    }

    /// Basis conversion: the scaling pass, then a cross-channel
    /// multiply-accumulate reduction on the ACC path with chain combines.
    /// No inter-subarray or inter-bank commands: all channels share rows.
    fn lower_bconv(
        &mut self,
        src: BufId,
        dst: BufId,
        deps: &[CmdId],
    ) -> Result<CmdId, CompileError> {
        let tag = self.tag(OpTagKind::Bconv);
        let ps = self.placement(src);
        let pd = self.placement(dst);
        let l = self.graph.channels_of(src) as u64;
        let k_out = self.graph.channels_of(dst) as u64;
        let cpp = self.map.coeffs_per_pair(&ps) as u64;
        let pes = pes_for_pair_block(cpp as u32, self.map.pe().pe_num_per_pair);
        let mut done = Vec::new();
        for k in 0..ps.pairs_engaged {
            let (read, _) = self.read_pair_rows(&ps, k, l as u32, deps, tag);
            // step 1: tmp_i = x_i * qhat_inv_i
            let scale = self.pe(&ps, k, PeUop::Ew, l * cpp, pes, vec![read], tag);
            // step 2: per output channel, accumulate l scaled products
            let mac = self.pe(&ps, k, PeUop::Mac, k_out * l * cpp, pes, vec![scale], tag);
            // partials combined across the PEs of the pair
            let mut combine = mac;
            for _round in 0..pes.trailing_zeros() {
                let words = k_out * cpp / pes as u64 / 2;
                let x = self.chain_xfer(&ps, k, words.max(1), 1, vec![combine], tag);
                combine = self.pe(&ps, k, PeUop::Mac, k_out * cpp / 2, pes, vec![x], tag);
            }
            let (w, _) = self.write_pair_rows(&pd, k, k_out as u32, &[read], combine, tag);
            done.push(w);
        }
        Ok(self
            .sched
            .push_func(CmdKind::Barrier, done, tag, FuncOp::Bconv { src, dst }))
    }

    /// Adder-tree reduction of co-located polynomials: per-PE leaf sums on
    /// the ACC path, then log2(pes) chain-hop combine rounds. Emits no
    /// inter-subarray or inter-bank movement.
    fn lower_reduce(
        &mut self,
        srcs: &[BufId],
        dst: BufId,
        deps: &[CmdId],
    ) -> Result<CmdId, CompileError> {
        let tag = self.tag(OpTagKind::Reduce);
        if srcs.is_empty() {
            return Err(CompileError::BadGraph("reduce of zero polynomials".into()));
        }
        let placements: Vec<PolyPlacement> = srcs.iter().map(|&s| self.placement(s)).collect();
        let p0 = placements[0];
        for (i, p) in placements.iter().enumerate() {
            if (p.chip, p.group, p.pairs_engaged) != (p0.chip, p0.group, p0.pairs_engaged) {
                return Err(CompileError::NotCoLocated(format!(
                    "operand {i} on chip {} group {} (expected chip {} group {})",
                    p.chip, p.group, p0.chip, p0.group
                )));
            }
        }
        let pd = self.placement(dst);
        let channels = self.graph.channels_of(dst);
        let cpp = self.map.coeffs_per_pair(&p0) as u64;
        let pes = pes_for_pair_block(cpp as u32, self.map.pe().pe_num_per_pair);
        let mut done = Vec::new();
        for k in 0..p0.pairs_engaged {
            let mut reads = Vec::new();
            for p in &placements {
                let (r, _) = self.read_pair_rows(p, k, channels, deps, tag);
                reads.push(r);
            }
            // leaf accumulation of all operands
            let mut combine = self.pe(
                &p0,
                k,
                PeUop::Mac,
                srcs.len() as u64 * channels as u64 * cpp,
                pes,
                reads,
                tag,
            );
            for _round in 0..pes.trailing_zeros() {
                let words = (channels as u64 * cpp / pes as u64 / 2).max(1);
                let x = self.chain_xfer(&p0, k, words, 1, vec![combine], tag);
                combine = self.pe(&p0, k, PeUop::Mac, channels as u64 * cpp / 2, pes, vec![x], tag);
            }
            let (w, _) = self.write_pair_rows(&pd, k, channels, &[combine], combine, tag);
            done.push(w);
        }
        Ok(self.sched.push_func(
            CmdKind::Barrier,
            done,
            tag,
            FuncOp::Reduce { srcs: srcs.to_vec(), dst },
        ))
    }

    /// Rotation: stream, shift through the crossbar lanes, stream out.
    fn lower_rotate(
        &mut self,
        src: BufId,
        dst: BufId,
        k_amount: usize,
        deps: &[CmdId],
    ) -> Result<CmdId, CompileError> {
        let tag = self.tag(OpTagKind::Rotate);
        let ps = self.placement(src);
        let pd = self.placement(dst);
        let channels = self.graph.channels_of(src);
        let cpp = self.map.coeffs_per_pair(&ps) as u64;
        let pes = pes_for_pair_block(cpp as u32, self.map.pe().pe_num_per_pair);
        let mut done = Vec::new();
        for k in 0..ps.pairs_engaged {
            let (read, _) = self.read_pair_rows(&ps, k, channels, deps, tag);
            let shift = self.pe(&ps, k, PeUop::Shift, channels as u64 * cpp, pes, vec![read], tag);
            // carry coefficients that cross the pair boundary move one hop
            let x = self.chain_xfer(
                &ps,
                k,
                (k_amount as u64).min(cpp) * channels as u64,
                1,
                vec![shift],
                tag,
            );
            let (w, _) = self.write_pair_rows(&pd, k, channels, &[read], x, tag);
            done.push(w);
        }
        Ok(self.sched.push_func(
            CmdKind::Barrier,
            done,
            tag,
            FuncOp::Rotate { src, dst, k: k_amount },
        ))
    }

    /// Copy, possibly across chips: read at the source, network transfer
    /// when the placements live on different chips, write at the target.
    fn lower_copy(&mut self, src: BufId, dst: BufId, deps: &[CmdId]) -> Result<CmdId, CompileError> {
        let tag = self.tag(OpTagKind::Copy);
        let ps = self.placement(src);
        let pd = self.placement(dst);
        let channels = self.graph.channels_of(src);
        let mut reads = Vec::new();
        for k in 0..ps.pairs_engaged {
            let (r, _) = self.read_pair_rows(&ps, k, channels, deps, tag);
            reads.push(r);
        }
        let read_done = self.barrier(reads, tag);
        let moved = if ps.chip != pd.chip {
            let bytes = ps.degree as u64 * channels as u64 * 4;
            self.chip_xfer(ps.chip, pd.chip, bytes, vec![read_done], tag)
        } else {
            read_done
        };
        let mut writes = Vec::new();
        for k in 0..pd.pairs_engaged {
            let (w, _) = self.write_pair_rows(&pd, k, channels, &[moved], moved, tag);
            writes.push(w);
        }
        Ok(self
            .sched
            .push_func(CmdKind::Barrier, writes, tag, FuncOp::Copy { src, dst }))
    }

    /// Layout mutation. With remapping disabled this is a no-op marker;
    /// enabled, every occupied row of every placed polynomial streams
    /// bottom-up through the PEs, shifts, and lands packed on the partner
    /// side. All emitted work is tagged as remap overhead.
    fn lower_remap(
        &mut self,
        direction: RemapDirection,
        live_placements: &[u32],
        deps: &[CmdId],
    ) -> Result<CmdId, CompileError> {
        let tag = self.tag(OpTagKind::Remap);
        if !self.topo.remap {
            return Ok(self.barrier(deps.to_vec(), tag));
        }
        let first_cmd = self.sched.len() as CmdId;
        let next = self.map.remap(direction)?;
        // one stream per distinct physical row set; co-resident buffers
        // move together, so keep the widest channel count per row set
        let mut by_rows: BTreeMap<(u32, u32, u32, u32), PolyPlacement> = BTreeMap::new();
        for &id in live_placements {
            if let Ok(p) = self.map.poly(id) {
                let key = (p.chip, p.group, p.row_base, p.pairs_engaged);
                let e = by_rows.entry(key).or_insert(*p);
                if p.channels > e.channels {
                    *e = *p;
                }
            }
        }
        let polys: Vec<PolyPlacement> = by_rows.into_values().collect();
        let mut done = Vec::new();
        for p in &polys {
            let channels = p.channels;
            let cpp = self.map.coeffs_per_pair(p) as u64;
            let pes = pes_for_pair_block(cpp as u32, self.map.pe().pe_num_per_pair);
            for k in 0..p.pairs_engaged {
                // rows activated bottom-up, read into the PEs, shifted, and
                // written back packed at the new width
                let (read, _) = self.read_pair_rows(p, k, channels, deps, tag);
                let shift = self.pe(p, k, PeUop::Shift, channels as u64 * cpp, pes, vec![read], tag);
                // write at the post-remap footprint
                let (bank, pair) = self.map.pair_coords(p, k);
                let sa = SubarrayId {
                    chip: p.chip,
                    bank,
                    subarray: self.map.partner_subarray(pair),
                };
                let rows = next.rows_per_pair(p);
                let gcols = (channels * next.poly_col())
                    .div_ceil(self.map.geometry().grb_words())
                    .clamp(1, self.map.geometry().grb_cols_per_row());
                let mut last = shift;
                for r in 0..rows {
                    let row = p.row_base + r;
                    let act = self.push_mem(sa, MemCommandKind::Act { row }, deps.to_vec(), tag);
                    let write = self.push_mem(
                        sa,
                        MemCommandKind::Write { row, grb_cols: gcols },
                        vec![act, last],
                        tag,
                    );
                    last = self.push_mem(sa, MemCommandKind::Pre, vec![write], tag);
                }
                done.push(last);
            }
        }
        self.map = next;
        let b = self.barrier(done, tag);
        self.sched.mark_remap(first_cmd);
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StageLevel {
    Local,
    Chain,
    Lisa,
    Bank,
}
