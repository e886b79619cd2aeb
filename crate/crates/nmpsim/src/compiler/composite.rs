//! Composite operator expansion and ciphertext-level dataflow building.
//!
//! Composites are configuration-driven graph rewrites, not code baked into
//! the lowerer: a key switch is the declared sequence of transforms, basis
//! conversions and digit accumulations; ciphertext stages are pipelined
//! distribution along the chip pairs followed by logarithmic neighbor-wise
//! collection.

use crate::kernels::EwOp;
use crate::layout::{PlacementMap, RemapDirection};

use super::graph::{BufId, BufInit, NodeId, OpKind, OperatorGraph};
use super::CompileError;

/// Graph plus placement under construction; derived buffers get placements
/// carved out of the map as they appear.
pub struct Builder {
    pub graph: OperatorGraph,
    pub map: PlacementMap,
    next_input: usize,
}

impl Builder {
    pub fn new(graph: OperatorGraph, map: PlacementMap) -> Self {
        Self { graph, map, next_input: 0 }
    }

    /// Binds an input buffer to an already-placed polynomial.
    pub fn input_buf(&mut self, basis: usize, placement: u32) -> BufId {
        let idx = self.next_input;
        self.next_input += 1;
        self.graph.add_buffer(basis, placement, BufInit::Input(idx))
    }

    pub fn zero_buf(&mut self, basis: usize, like: BufId) -> Result<BufId, CompileError> {
        let buf = self.derived_buf(basis, like)?;
        self.graph.buffers[buf as usize].init = BufInit::Zero;
        Ok(buf)
    }

    /// A derived buffer co-located with `like`, sized for `basis`.
    pub fn derived_buf(&mut self, basis: usize, like: BufId) -> Result<BufId, CompileError> {
        let src_place = self.graph.buffers[like as usize].placement;
        let channels = self.graph.bases[basis].len() as u32;
        let place = self.map.derive_poly(src_place, channels)?;
        Ok(self.graph.add_buffer(basis, place, BufInit::Derived))
    }

    /// An input buffer co-located with `like` (plaintexts and key digits
    /// stored next to the data they are computed with).
    pub fn input_buf_like(&mut self, basis: usize, like: BufId) -> Result<BufId, CompileError> {
        let buf = self.derived_buf(basis, like)?;
        let idx = self.next_input;
        self.next_input += 1;
        self.graph.buffers[buf as usize].init = BufInit::Input(idx);
        Ok(buf)
    }

    /// A derived buffer placed on another chip (distribution targets).
    pub fn derived_buf_on_chip(
        &mut self,
        basis: usize,
        like: BufId,
        chip: u32,
    ) -> Result<BufId, CompileError> {
        let buf = self.derived_buf(basis, like)?;
        let place = self.graph.buffers[buf as usize].placement;
        self.map.move_poly(place, chip)?;
        Ok(buf)
    }

    pub fn node(&mut self, kind: OpKind, deps: Vec<NodeId>, stage: u32) -> NodeId {
        self.graph.add_node(kind, deps, stage)
    }
}

/// Basis conversion with the remap policy: shrinking the channel count
/// schedules a poly_col doubling after the operator to refill the rows;
/// growing schedules a halving before it to make room.
pub fn bconv_with_remap_policy(
    b: &mut Builder,
    src: BufId,
    target_basis: usize,
    deps: Vec<NodeId>,
    stage: u32,
) -> Result<(BufId, NodeId), CompileError> {
    let l = b.graph.channels_of(src);
    let k = b.graph.bases[target_basis].len() as u32;
    let mut deps = deps;
    if k > l {
        let pre = b.node(OpKind::Remap { direction: RemapDirection::Halve }, deps, stage);
        deps = vec![pre];
    }
    let dst = b.derived_buf(target_basis, src)?;
    let conv = b.node(OpKind::Bconv { src, dst }, deps, stage);
    let last = if k < l {
        b.node(OpKind::Remap { direction: RemapDirection::Double }, vec![conv], stage)
    } else {
        conv
    };
    Ok((dst, last))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeySwitchParams {
    /// Decomposition digits; one up-conversion and accumulation per digit.
    pub dnum: u32,
}

impl Default for KeySwitchParams {
    fn default() -> Self {
        Self { dnum: 1 }
    }
}

/// One key-switch output polynomial on one chip. `key_digits` must be
/// resident replicas on the same chip pair.
#[allow(clippy::too_many_arguments)]
fn keyswitch_side(
    b: &mut Builder,
    x: BufId,
    key_digits: &[BufId],
    basis_q: usize,
    basis_p: usize,
    deps: Vec<NodeId>,
    stage: u32,
) -> Result<(BufId, NodeId), CompileError> {
    let intt = b.node(OpKind::Intt { buf: x }, deps, stage);
    let acc = b.zero_buf(basis_p, x)?;
    let mut last = intt;
    for key in key_digits {
        let u = b.derived_buf(basis_p, x)?;
        let conv = b.node(OpKind::Bconv { src: x, dst: u }, vec![last], stage);
        let ntt = b.node(OpKind::Ntt { buf: u }, vec![conv], stage);
        last = b.node(OpKind::MulAcc { acc, a: u, b: *key }, vec![ntt], stage);
    }
    let intt2 = b.node(OpKind::Intt { buf: acc }, vec![last], stage);
    let v = b.derived_buf(basis_q, acc)?;
    let down = b.node(OpKind::Bconv { src: acc, dst: v }, vec![intt2], stage);
    let ntt2 = b.node(OpKind::Ntt { buf: v }, vec![down], stage);
    let out = b.derived_buf(basis_q, x)?;
    let add = b.node(OpKind::Ew { op: EwOp::Add, a: v, b: x, dst: out }, vec![ntt2], stage);
    Ok((out, add))
}

/// Key switch of a two-polynomial ciphertext on its chip pair; the two
/// output polynomials are built symmetrically and run concurrently on the
/// pair's chips. Requires a key replica on the pair.
#[allow(clippy::too_many_arguments)]
pub fn keyswitch(
    b: &mut Builder,
    chip_pair: u32,
    ct: (BufId, BufId),
    keys: (&[BufId], &[BufId]),
    basis_q: usize,
    basis_p: usize,
    deps: Vec<NodeId>,
    stage: u32,
) -> Result<((BufId, BufId), (NodeId, NodeId)), CompileError> {
    if !b.map.aux.key_replica_pairs.contains(&chip_pair) {
        return Err(CompileError::KeyMissing(chip_pair));
    }
    let (o0, n0) = keyswitch_side(b, ct.0, keys.0, basis_q, basis_p, deps.clone(), stage)?;
    let (o1, n1) = keyswitch_side(b, ct.1, keys.1, basis_q, basis_p, deps, stage)?;
    Ok(((o0, o1), (n0, n1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PbsParams {
    /// Blind-rotation iterations (the LWE dimension of the desk analogue).
    pub lwe_iters: u32,
    /// Gadget decomposition levels; each iteration accumulates 2*levels
    /// digit products.
    pub decomp_levels: u32,
    pub batch: u32,
    /// Distribute batch members across chips instead of running serially
    /// on one chip.
    pub parallel: bool,
}

impl Default for PbsParams {
    fn default() -> Self {
        Self { lwe_iters: 16, decomp_levels: 2, batch: 1, parallel: false }
    }
}

/// Programmable-bootstrapping analogue for one batch member: a blind
/// rotation loop of rotate plus digit multiply-accumulates, entirely on one
/// chip. Returns the accumulator buffer and its last node.
pub fn pbs_member(
    b: &mut Builder,
    acc: BufId,
    keys: &[BufId],
    params: &PbsParams,
    deps: Vec<NodeId>,
    stage: u32,
) -> Result<(BufId, NodeId), CompileError> {
    let basis = b.graph.buffers[acc as usize].basis;
    let rot = b.derived_buf(basis, acc)?;
    let mut last_nodes = deps;
    for i in 0..params.lwe_iters {
        // rotation amount drawn from the iteration index; the schedule
        // structure is what matters, not the key distribution
        let k = (7 * i as usize + 3) % (2 * b.graph.degree);
        let r = b.node(OpKind::Rotate { src: acc, dst: rot, k }, last_nodes.clone(), stage);
        let mut last = r;
        for key in keys {
            last = b.node(OpKind::MulAcc { acc, a: rot, b: *key }, vec![last], stage);
        }
        last_nodes = vec![last];
    }
    Ok((acc, last_nodes[0]))
}

/// Pipelined distribution of a ciphertext along chip pairs: every pair
/// forwards to the next while its own computation starts, so forwarding
/// never waits on compute. Returns one buffer pair per target.
pub fn distribute(
    b: &mut Builder,
    src: (BufId, BufId),
    pairs: &[u32],
    basis: usize,
    deps: Vec<NodeId>,
    stage: u32,
) -> Result<Vec<((BufId, BufId), NodeId)>, CompileError> {
    let available = b.map.geometry().chips() / 2;
    if pairs.iter().any(|&p| p >= available) {
        return Err(CompileError::InsufficientChips {
            need: pairs.iter().max().copied().unwrap_or(0) + 1,
            have: available,
        });
    }
    let mut out = Vec::with_capacity(pairs.len());
    let mut prev = (src, deps);
    for (i, &pair) in pairs.iter().enumerate() {
        if i == 0 {
            let ready = prev.1.clone();
            let n = if ready.is_empty() {
                b.node(OpKind::Copy { src: src.0, dst: src.0 }, vec![], stage)
            } else {
                ready[0]
            };
            out.push((src, n));
            continue;
        }
        let (c0, c1) = (
            b.derived_buf_on_chip(basis, prev.0 .0, pair * 2)?,
            b.derived_buf_on_chip(basis, prev.0 .1, pair * 2 + 1)?,
        );
        let f0 = b.node(OpKind::Copy { src: prev.0 .0, dst: c0 }, prev.1.clone(), stage);
        let f1 = b.node(OpKind::Copy { src: prev.0 .1, dst: c1 }, prev.1.clone(), stage);
        out.push(((c0, c1), f0));
        prev = ((c0, c1), vec![f0, f1]);
    }
    Ok(out)
}

/// Neighbor-wise collection: log2(n) rounds of moving the upper half onto
/// the lower and adding, ending on the first pair.
pub fn collect(
    b: &mut Builder,
    results: &[(BufId, NodeId)],
    basis: usize,
    stage: u32,
) -> Result<(BufId, NodeId), CompileError> {
    assert!(!results.is_empty());
    let mut cur: Vec<(BufId, NodeId)> = results.to_vec();
    while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len().div_ceil(2));
        for pair in cur.chunks(2) {
            if pair.len() == 1 {
                next.push(pair[0]);
                continue;
            }
            let (lo, hi) = (pair[0], pair[1]);
            let tmp = b.derived_buf(basis, lo.0)?;
            let mv = b.node(OpKind::Copy { src: hi.0, dst: tmp }, vec![lo.1, hi.1], stage);
            let sum = b.derived_buf(basis, lo.0)?;
            let add = b.node(
                OpKind::Ew { op: EwOp::Add, a: lo.0, b: tmp, dst: sum },
                vec![mv],
                stage,
            );
            next.push((sum, add));
        }
        cur = next;
    }
    Ok(cur[0])
}

impl PlacementMap {
    /// Re-homes a derived polynomial onto another chip, keeping its group
    /// and pair shape (used for distribution targets).
    pub fn move_poly(&mut self, id: u32, chip: u32) -> Result<(), crate::layout::LayoutError> {
        if chip >= self.geometry().chips() {
            return Err(crate::layout::LayoutError::CapacityExceeded(format!(
                "chip {chip} out of range"
            )));
        }
        self.poly_mut(id)?.chip = chip;
        Ok(())
    }
}
