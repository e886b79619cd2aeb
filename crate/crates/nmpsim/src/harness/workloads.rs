//! Workload declarations and their graph builders.
//!
//! A workload file names one of the bundled graph shapes and its
//! parameters; the builder turns it into an operator graph over a placement
//! map plus seeded random inputs. The shapes are desk-scale analogues that
//! preserve the structure the full benchmarks exercise: stage-parallel
//! ciphertext operators, channel-count changes around basis conversions,
//! blind-rotation loops, and streaming patterns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compiler::composite::{self, Builder};
use crate::compiler::{BufId, BufInit, NodeId, OpKind, OperatorGraph};
use crate::dram::DramGeometry;
use crate::fabric::PeConfig;
use crate::kernels::{EwOp, RnsBasis};
use crate::layout::{LayoutRequest, PlacementMap};

use super::{HarnessError, WorkloadParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    /// Independent forward transforms over `polys` polynomials.
    Ntt,
    /// One basis conversion with the remap policy applied.
    Bconv,
    /// One ciphertext key switch on a chip pair.
    Keyswitch,
    /// Three-phase stage graph with distribution, per-pair rotations and
    /// multiplications, channel shrinks and neighbor-wise collection.
    Bootstrap,
    /// Blind-rotation batch, serial on one chip or parallel across chips.
    Pbs,
    /// Two stages of parallel elementwise ciphertext ops with collection.
    Lola,
    /// Constructed back-to-back streaming pattern that saturates one
    /// subarray pair's delivery rate.
    Saturation,
    /// Row-granular read-compute-write streaming loop over one pair.
    Stream,
}

/// Parsed workload declaration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadDecl {
    pub name: String,
    pub kind: WorkloadKind,
    pub degree: usize,
    /// Primes of the main basis Q.
    pub q: Vec<u32>,
    /// Primes of the auxiliary basis P (conversion targets), may be empty.
    #[serde(default)]
    pub p: Vec<u32>,
    #[serde(default = "one")]
    pub polys: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: WorkloadParams,
}

fn one() -> u32 {
    1
}

impl WorkloadDecl {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::WorkloadParse(e.to_string()))
    }

    pub fn load(path: &str) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io { path: path.into(), err: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn basis_q(&self) -> Result<RnsBasis, HarnessError> {
        RnsBasis::from_primes(&self.q).map_err(|e| HarnessError::WorkloadParse(e.to_string()))
    }

    pub fn basis_p(&self) -> Result<RnsBasis, HarnessError> {
        RnsBasis::from_primes(&self.p).map_err(|e| HarnessError::WorkloadParse(e.to_string()))
    }
}

/// Graph, placement and inputs, ready to lower and run.
pub struct BuiltWorkload {
    pub graph: OperatorGraph,
    pub map: PlacementMap,
    pub inputs: BTreeMap<BufId, Vec<Vec<u32>>>,
}

/// Deterministic input generator; a tiny xorshift keyed by (seed, buffer)
/// keeps workload inputs reproducible without an RNG dependency.
struct InputGen {
    seed: u64,
}

impl InputGen {
    fn channels(&mut self, basis: &RnsBasis, degree: usize, buf: BufId) -> Vec<Vec<u32>> {
        basis
            .moduli()
            .iter()
            .enumerate()
            .map(|(ch, m)| {
                let mut state = self
                    .seed
                    .wrapping_mul(0x9e3779b97f4a7c15)
                    .wrapping_add((buf as u64) << 32 | ch as u64)
                    | 1;
                (0..degree)
                    .map(|_| {
                        state ^= state << 13;
                        state ^= state >> 7;
                        state ^= state << 17;
                        (state % m.value() as u64) as u32
                    })
                    .collect()
            })
            .collect()
    }
}

/// Builds the declared workload over the given hardware shape.
pub fn build(
    decl: &WorkloadDecl,
    geometry: DramGeometry,
    pe: PeConfig,
    poly_col_override: Option<u32>,
) -> Result<BuiltWorkload, HarnessError> {
    match decl.kind {
        WorkloadKind::Ntt => build_ntt(decl, geometry, pe, poly_col_override),
        WorkloadKind::Bconv => build_bconv(decl, geometry, pe, poly_col_override),
        WorkloadKind::Keyswitch => build_keyswitch(decl, geometry, pe, poly_col_override),
        WorkloadKind::Bootstrap => build_bootstrap(decl, geometry, pe, poly_col_override),
        WorkloadKind::Pbs => build_pbs(decl, geometry, pe, poly_col_override),
        WorkloadKind::Lola => build_lola(decl, geometry, pe, poly_col_override),
        WorkloadKind::Saturation | WorkloadKind::Stream => Err(HarnessError::WorkloadParse(
            "constructed workloads are built by the drivers, not the graph builder".into(),
        )),
    }
}

fn place(
    _decl: &WorkloadDecl,
    geometry: DramGeometry,
    pe: PeConfig,
    req: LayoutRequest,
    poly_col_override: Option<u32>,
) -> Result<PlacementMap, HarnessError> {
    Ok(PlacementMap::build_with(&req, geometry, pe, poly_col_override)?)
}

fn build_ntt(
    decl: &WorkloadDecl,
    geometry: DramGeometry,
    pe: PeConfig,
    pc: Option<u32>,
) -> Result<BuiltWorkload, HarnessError> {
    let basis = decl.basis_q()?;
    let req = LayoutRequest {
        degree: decl.degree,
        channels: basis.len() as u32,
        ciphertexts: 0,
        standalone_polys: decl.polys,
        key_replica_pairs: 0,
    };
    let map = place(decl, geometry, pe, req, pc)?;
    let mut g = OperatorGraph::new(decl.degree);
    let b = g.add_basis(basis.clone());
    let mut gen = InputGen { seed: decl.seed };
    let mut inputs = BTreeMap::new();
    for i in 0..decl.polys {
        let x = g.add_buffer(b, i, BufInit::Input(i as usize));
        g.add_node(OpKind::Ntt { buf: x }, vec![], 0);
        g.outputs.push(x);
        inputs.insert(x, gen.channels(&basis, decl.degree, x));
    }
    Ok(BuiltWorkload { graph: g, map, inputs })
}

fn build_bconv(
    decl: &WorkloadDecl,
    geometry: DramGeometry,
    pe: PeConfig,
    pc: Option<u32>,
) -> Result<BuiltWorkload, HarnessError> {
    let q = decl.basis_q()?;
    let p = decl.basis_p()?;
    let req = LayoutRequest {
        degree: decl.degree,
        channels: q.len() as u32,
        ciphertexts: 0,
        standalone_polys: decl.polys,
        key_replica_pairs: 0,
    };
    let map = place(decl, geometry, pe, req, pc)?;
    let mut g = OperatorGraph::new(decl.degree);
    let bq = g.add_basis(q.clone());
    let bp = g.add_basis(p);
    let mut gen = InputGen { seed: decl.seed };
    let mut inputs = BTreeMap::new();
    let mut builder = Builder::new(g, map);
    for i in 0..decl.polys {
        let x = builder.input_buf(bq, i);
        inputs.insert(x, gen.channels(&q, decl.degree, x));
        let (dst, _) = composite::bconv_with_remap_policy(&mut builder, x, bp, vec![], 0)?;
        builder.graph.outputs.push(dst);
    }
    Ok(BuiltWorkload { graph: builder.graph, map: builder.map, inputs })
}

/// Key material for one chip pair: `dnum` digit polynomials per side.
fn key_inputs(
    b: &mut Builder,
    gen: &mut InputGen,
    inputs: &mut BTreeMap<BufId, Vec<Vec<u32>>>,
    basis: &RnsBasis,
    basis_idx: usize,
    like: (BufId, BufId),
    dnum: u32,
    degree: usize,
) -> Result<(Vec<BufId>, Vec<BufId>), HarnessError> {
    let mut k0 = Vec::new();
    let mut k1 = Vec::new();
    for _ in 0..dnum {
        for (keys, like) in [(&mut k0, like.0), (&mut k1, like.1)] {
            let kb = b.input_buf_like(basis_idx, like)?;
            inputs.insert(kb, gen.channels(basis, degree, kb));
            keys.push(kb);
        }
    }
    Ok((k0, k1))
}

fn build_keyswitch(
    decl: &WorkloadDecl,
    geometry: DramGeometry,
    pe: PeConfig,
    pc: Option<u32>,
) -> Result<BuiltWorkload, HarnessError> {
    let q = decl.basis_q()?;
    let p = decl.basis_p()?;
    let req = LayoutRequest {
        degree: decl.degree,
        channels: q.len() as u32,
        ciphertexts: 1,
        standalone_polys: 0,
        key_replica_pairs: 1,
    };
    let map = place(decl, geometry, pe, req, pc)?;
    let mut g = OperatorGraph::new(decl.degree);
    let bq = g.add_basis(q.clone());
    let bp = g.add_basis(p.clone());
    let mut gen = InputGen { seed: decl.seed };
    let mut inputs = BTreeMap::new();
    let mut b = Builder::new(g, map);
    let c0 = b.input_buf(bq, 0);
    let c1 = b.input_buf(bq, 1);
    inputs.insert(c0, gen.channels(&q, decl.degree, c0));
    inputs.insert(c1, gen.channels(&q, decl.degree, c1));
    let keys = key_inputs(
        &mut b,
        &mut gen,
        &mut inputs,
        &p,
        bp,
        (c0, c1),
        decl.params.keyswitch.dnum,
        decl.degree,
    )?;
    let (out, _) = composite::keyswitch(
        &mut b,
        0,
        (c0, c1),
        (&keys.0, &keys.1),
        bq,
        bp,
        vec![],
        0,
    )?;
    b.graph.outputs.push(out.0);
    b.graph.outputs.push(out.1);
    Ok(BuiltWorkload { graph: b.graph, map: b.map, inputs })
}

/// The three-phase stage graph: distribute a ciphertext across chip pairs,
/// run parallel per-pair rotations, shrink the basis (remap), run parallel
/// multiplications, shrink again, run the elementwise tail, then collect
/// with neighbor-wise reduction.
fn build_bootstrap(
    decl: &WorkloadDecl,
    geometry: DramGeometry,
    pe: PeConfig,
    pc: Option<u32>,
) -> Result<BuiltWorkload, HarnessError> {
    let q = decl.basis_q()?; // wide basis for phase 1
    let p = decl.basis_p()?; // mid basis after the first shrink
    if p.len() >= q.len() {
        return Err(HarnessError::WorkloadParse(
            "bootstrap expects p to be a shrink of q".into(),
        ));
    }
    let tail = RnsBasis::from_primes(&decl.p[..1])
        .map_err(|e| HarnessError::WorkloadParse(e.to_string()))?;
    let bp_count = decl.params.bootstrap.chip_pairs;
    let rot_per_pair = decl.params.bootstrap.rotations / bp_count.max(1);
    let req = LayoutRequest {
        degree: decl.degree,
        channels: q.len() as u32,
        ciphertexts: 1,
        standalone_polys: 0,
        key_replica_pairs: bp_count,
    };
    let map = place(decl, geometry, pe, req, pc)?;
    let mut g = OperatorGraph::new(decl.degree);
    let bq = g.add_basis(q.clone());
    let bp = g.add_basis(p.clone());
    let bt = g.add_basis(tail.clone());
    let mut gen = InputGen { seed: decl.seed };
    let mut inputs = BTreeMap::new();
    let mut b = Builder::new(g, map);
    let c0 = b.input_buf(bq, 0);
    let c1 = b.input_buf(bq, 1);
    inputs.insert(c0, gen.channels(&q, decl.degree, c0));
    inputs.insert(c1, gen.channels(&q, decl.degree, c1));

    // distribution: pipelined forwarding along the chip pairs
    let pairs: Vec<u32> = (0..bp_count).collect();
    let dist = composite::distribute(&mut b, (c0, c1), &pairs, bq, vec![], 0)?;

    // phase 1: rotations per pair on both polynomials
    let mut phase1: Vec<(BufId, BufId, NodeId)> = Vec::new();
    for ((cc0, cc1), ready) in &dist {
        let mut cur = [(*cc0, *ready), (*cc1, *ready)];
        for side in &mut cur {
            for r in 0..rot_per_pair {
                let (buf, dep) = *side;
                let plain = b.input_buf_like(bq, buf)?;
                inputs.insert(plain, gen.channels(&q, decl.degree, plain));
                // work on a local copy; the received buffer keeps forwarding
                let work = b.derived_buf(bq, buf)?;
                let cp = b.node(OpKind::Copy { src: buf, dst: work }, vec![dep], 1);
                let fwd = b.node(OpKind::Ntt { buf: work }, vec![cp], 1);
                let rotated = b.derived_buf(bq, buf)?;
                let rot = b.node(
                    OpKind::Rotate { src: work, dst: rotated, k: (2 * r as usize + 1) * 5 },
                    vec![fwd],
                    1,
                );
                let inv = b.node(OpKind::Intt { buf: rotated }, vec![rot], 1);
                let mixed = b.derived_buf(bq, buf)?;
                let mix = b.node(
                    OpKind::Ew { op: EwOp::Add, a: rotated, b: plain, dst: mixed },
                    vec![inv],
                    1,
                );
                *side = (mixed, mix);
            }
        }
        phase1.push((cur[0].0, cur[1].0, cur[0].1.max(cur[1].1)));
    }

    // first shrink: per-pair conversions, then one layout remap
    let mut conv1: Vec<(BufId, BufId, NodeId)> = Vec::new();
    let mut conv_nodes = Vec::new();
    for (a, c, ready) in &phase1 {
        let da = b.derived_buf(bp, *a)?;
        let na = b.node(OpKind::Bconv { src: *a, dst: da }, vec![*ready], 2);
        let dc = b.derived_buf(bp, *c)?;
        let nc = b.node(OpKind::Bconv { src: *c, dst: dc }, vec![*ready], 2);
        conv_nodes.extend([na, nc]);
        conv1.push((da, dc, na.max(nc)));
    }
    let remap1 = b.node(
        OpKind::Remap { direction: crate::layout::RemapDirection::Double },
        conv_nodes.clone(),
        2,
    );

    // phase 2: multiplications on the packed mid basis
    let mut phase2: Vec<(BufId, BufId, NodeId)> = Vec::new();
    for (a, c, _) in &conv1 {
        let mut cur = [(*a, remap1), (*c, remap1)];
        for side in &mut cur {
            let (buf, dep) = *side;
            let plain = b.input_buf_like(bp, buf)?;
            inputs.insert(plain, gen.channels(&p, decl.degree, plain));
            let prod = b.derived_buf(bp, buf)?;
            let mul = b.node(
                OpKind::Ew { op: EwOp::Mul, a: buf, b: plain, dst: prod },
                vec![dep],
                3,
            );
            let acc = b.zero_buf(bp, buf)?;
            let macc = b.node(OpKind::MulAcc { acc, a: prod, b: plain }, vec![mul], 3);
            *side = (acc, macc);
        }
        phase2.push((cur[0].0, cur[1].0, cur[0].1.max(cur[1].1)));
    }

    // second shrink to the tail basis
    let mut conv2: Vec<(BufId, BufId, NodeId)> = Vec::new();
    let mut conv_nodes2 = Vec::new();
    for (a, c, ready) in &phase2 {
        let da = b.derived_buf(bt, *a)?;
        let na = b.node(OpKind::Bconv { src: *a, dst: da }, vec![*ready], 4);
        let dc = b.derived_buf(bt, *c)?;
        let nc = b.node(OpKind::Bconv { src: *c, dst: dc }, vec![*ready], 4);
        conv_nodes2.extend([na, nc]);
        conv2.push((da, dc, na.max(nc)));
    }
    let remap2 = b.node(
        OpKind::Remap { direction: crate::layout::RemapDirection::Double },
        conv_nodes2,
        4,
    );

    // phase 3: elementwise tail on the packed narrow layout
    let mut tails0 = Vec::new();
    let mut tails1 = Vec::new();
    for (a, c, _) in &conv2 {
        for (buf, outv) in [(*a, &mut tails0), (*c, &mut tails1)] {
            let mut cur = (buf, remap2);
            for pass in 0..decl.params.bootstrap.tail_passes {
                let op = if pass % 2 == 0 { EwOp::Add } else { EwOp::Mul };
                let dst = b.derived_buf(bt, buf)?;
                let n = b.node(OpKind::Ew { op, a: cur.0, b: cur.0, dst }, vec![cur.1], 5);
                cur = (dst, n);
            }
            outv.push(cur);
        }
    }

    // collection: neighbor-wise reduction per polynomial side
    let (f0, _) = composite::collect(&mut b, &tails0, bt, 6)?;
    let (f1, _) = composite::collect(&mut b, &tails1, bt, 6)?;
    b.graph.outputs.push(f0);
    b.graph.outputs.push(f1);
    Ok(BuiltWorkload { graph: b.graph, map: b.map, inputs })
}

fn build_pbs(
    decl: &WorkloadDecl,
    geometry: DramGeometry,
    pe: PeConfig,
    pc: Option<u32>,
) -> Result<BuiltWorkload, HarnessError> {
    let basis = decl.basis_q()?;
    let params = decl.params.pbs;
    let req = LayoutRequest {
        degree: decl.degree,
        channels: basis.len() as u32,
        ciphertexts: 0,
        // accumulator plus key digits per member
        standalone_polys: params.batch * (1 + 2 * params.decomp_levels),
        key_replica_pairs: 0,
    };
    let mut map = place(decl, geometry, pe, req, pc)?;
    // serial mode keeps the whole batch on one chip; parallel mode spreads
    // members across chips (the layout's round-robin already does)
    let per_member = 1 + 2 * params.decomp_levels;
    for m in 0..params.batch {
        let chip = if params.parallel { (m * 2) % geometry.chips() } else { 0 };
        for j in 0..per_member {
            map.move_poly(m * per_member + j, chip)?;
        }
    }
    let mut g = OperatorGraph::new(decl.degree);
    let bq = g.add_basis(basis.clone());
    let mut gen = InputGen { seed: decl.seed };
    let mut inputs = BTreeMap::new();
    let mut b = Builder::new(g, map);
    for m in 0..params.batch {
        let acc = b.input_buf(bq, m * per_member);
        inputs.insert(acc, gen.channels(&basis, decl.degree, acc));
        let keys: Vec<BufId> = (0..2 * params.decomp_levels)
            .map(|j| {
                let kb = b.input_buf(bq, m * per_member + 1 + j);
                inputs.insert(kb, gen.channels(&basis, decl.degree, kb));
                kb
            })
            .collect();
        let (out, _) = composite::pbs_member(&mut b, acc, &keys, &params, vec![], m)?;
        b.graph.outputs.push(out);
    }
    Ok(BuiltWorkload { graph: b.graph, map: b.map, inputs })
}

/// Two stages of parallel elementwise ciphertext ops with duplication and
/// reduction between, the inference-style stage pattern.
fn build_lola(
    decl: &WorkloadDecl,
    geometry: DramGeometry,
    pe: PeConfig,
    pc: Option<u32>,
) -> Result<BuiltWorkload, HarnessError> {
    let basis = decl.basis_q()?;
    let pairs = 4u32.min(geometry.chips() / 2);
    let req = LayoutRequest {
        degree: decl.degree,
        channels: basis.len() as u32,
        ciphertexts: 1,
        standalone_polys: 0,
        key_replica_pairs: 0,
    };
    let map = place(decl, geometry, pe, req, pc)?;
    let mut g = OperatorGraph::new(decl.degree);
    let bq = g.add_basis(basis.clone());
    let mut gen = InputGen { seed: decl.seed };
    let mut inputs = BTreeMap::new();
    let mut b = Builder::new(g, map);
    let c0 = b.input_buf(bq, 0);
    let c1 = b.input_buf(bq, 1);
    inputs.insert(c0, gen.channels(&basis, decl.degree, c0));
    inputs.insert(c1, gen.channels(&basis, decl.degree, c1));

    let dist = composite::distribute(&mut b, (c0, c1), &(0..pairs).collect::<Vec<_>>(), bq, vec![], 0)?;
    let mut stage_out = Vec::new();
    for ((a, _), ready) in &dist {
        let w = b.input_buf_like(bq, *a)?;
        inputs.insert(w, gen.channels(&basis, decl.degree, w));
        let dst = b.derived_buf(bq, *a)?;
        let n = b.node(OpKind::Ew { op: EwOp::Mul, a: *a, b: w, dst }, vec![*ready], 1);
        stage_out.push((dst, n));
    }
    let (mid, mid_n) = composite::collect(&mut b, &stage_out, bq, 2)?;
    // second stage re-distributes the reduced result
    let dist2 = composite::distribute(&mut b, (mid, mid), &(0..pairs).collect::<Vec<_>>(), bq, vec![mid_n], 3)?;
    let mut stage2 = Vec::new();
    for ((a, _), ready) in &dist2 {
        let w = b.input_buf_like(bq, *a)?;
        inputs.insert(w, gen.channels(&basis, decl.degree, w));
        let dst = b.derived_buf(bq, *a)?;
        let n = b.node(OpKind::Ew { op: EwOp::Add, a: *a, b: w, dst }, vec![*ready], 4);
        stage2.push((dst, n));
    }
    let (out, _) = composite::collect(&mut b, &stage2, bq, 5)?;
    b.graph.outputs.push(out);
    Ok(BuiltWorkload { graph: b.graph, map: b.map, inputs })
}
