//! Operator graphs: the declared computation the compiler lowers.
//!
//! Nodes are polynomial-level primitives plus layout and movement markers;
//! ciphertext-level structure shows up as stage annotations and explicit
//! chip transfers. `reference_execute` runs a graph directly on the kernels
//! and is the functional oracle the engine's co-simulation is compared to.

use std::collections::BTreeMap;

use crate::kernels::{
    self, elementwise, EwOp, KernelError, RnsBasis, RnsPolynomial, TwiddleTable,
};
use crate::layout::RemapDirection;

use super::CompileError;

pub type BufId = u32;
pub type NodeId = usize;

/// How a buffer's initial contents come to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufInit {
    /// Filled from the workload's input set before the run.
    Input(usize),
    Zero,
    /// Written by some node before first use.
    Derived,
}

#[derive(Debug, Clone, Copy)]
pub struct BufDecl {
    /// Index into the graph's basis table.
    pub basis: usize,
    /// Placed polynomial backing this buffer.
    pub placement: u32,
    pub init: BufInit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpKind {
    /// In-place forward transform of every channel.
    Ntt { buf: BufId },
    /// In-place inverse transform.
    Intt { buf: BufId },
    Ew { op: EwOp, a: BufId, b: BufId, dst: BufId },
    /// acc += a * b, elementwise; the keyswitch digit accumulation.
    MulAcc { acc: BufId, a: BufId, b: BufId },
    /// Basis conversion; dst's declared basis is the target.
    Bconv { src: BufId, dst: BufId },
    /// Adder-tree reduction of co-located polynomials.
    Reduce { srcs: Vec<BufId>, dst: BufId },
    /// Negacyclic rotation by k (multiplication by X^k), coefficient domain.
    Rotate { src: BufId, dst: BufId, k: usize },
    /// Copy; a cross-chip copy implies the network transfer.
    Copy { src: BufId, dst: BufId },
    /// Layout mutation; doubles or halves poly_col.
    Remap { direction: RemapDirection },
}

#[derive(Debug, Clone)]
pub struct OpNode {
    pub kind: OpKind,
    pub deps: Vec<NodeId>,
    /// Ciphertext-level stage this node belongs to, for grouping.
    pub stage: u32,
}

#[derive(Debug, Clone)]
pub struct OperatorGraph {
    pub degree: usize,
    pub bases: Vec<RnsBasis>,
    pub buffers: Vec<BufDecl>,
    pub nodes: Vec<OpNode>,
    /// Buffers whose final contents are the workload's outputs.
    pub outputs: Vec<BufId>,
}

impl OperatorGraph {
    pub fn new(degree: usize) -> Self {
        Self {
            degree,
            bases: Vec::new(),
            buffers: Vec::new(),
            nodes: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_basis(&mut self, basis: RnsBasis) -> usize {
        self.bases.push(basis);
        self.bases.len() - 1
    }

    pub fn add_buffer(&mut self, basis: usize, placement: u32, init: BufInit) -> BufId {
        self.buffers.push(BufDecl { basis, placement, init });
        self.buffers.len() as BufId - 1
    }

    pub fn add_node(&mut self, kind: OpKind, deps: Vec<NodeId>, stage: u32) -> NodeId {
        self.nodes.push(OpNode { kind, deps, stage });
        self.nodes.len() - 1
    }

    pub fn basis_of(&self, buf: BufId) -> &RnsBasis {
        &self.bases[self.buffers[buf as usize].basis]
    }

    pub fn channels_of(&self, buf: BufId) -> u32 {
        self.basis_of(buf).len() as u32
    }

    /// Stable topological order (Kahn over node ids); error on cycles.
    pub fn topo_order(&self) -> Result<Vec<NodeId>, CompileError> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut out_edges: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for (id, node) in self.nodes.iter().enumerate() {
            for &d in &node.deps {
                if d >= n {
                    return Err(CompileError::BadGraph(format!(
                        "node {id} depends on missing node {d}"
                    )));
                }
                indegree[id] += 1;
                out_edges[d].push(id);
            }
        }
        let mut ready: Vec<NodeId> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(id) = ready.pop() {
            order.push(id);
            for &succ in &out_edges[id] {
                indegree[succ] -= 1;
                if indegree[succ] == 0 {
                    ready.push(succ);
                }
            }
            ready.sort_unstable_by(|a, b| b.cmp(a)); // pop lowest id first
        }
        if order.len() != n {
            return Err(CompileError::BadGraph("dependency cycle".into()));
        }
        Ok(order)
    }
}

/// Runs the graph straight on the reference kernels. Values are coefficient
/// channel vectors keyed by buffer.
pub fn reference_execute(
    graph: &OperatorGraph,
    inputs: &BTreeMap<BufId, Vec<Vec<u32>>>,
) -> Result<BTreeMap<BufId, Vec<Vec<u32>>>, CompileError> {
    let mut store: BTreeMap<BufId, Vec<Vec<u32>>> = BTreeMap::new();
    for (id, decl) in graph.buffers.iter().enumerate() {
        let id = id as BufId;
        match decl.init {
            BufInit::Input(_) => {
                let v = inputs
                    .get(&id)
                    .ok_or_else(|| CompileError::BadGraph(format!("missing input for buffer {id}")))?;
                store.insert(id, v.clone());
            }
            BufInit::Zero => {
                store.insert(
                    id,
                    vec![vec![0u32; graph.degree]; graph.channels_of(id) as usize],
                );
            }
            BufInit::Derived => {}
        }
    }
    let mut tables: BTreeMap<(usize, u32), TwiddleTable> = BTreeMap::new();
    for id in graph.topo_order()? {
        apply_node(graph, &graph.nodes[id].kind, &mut store, &mut tables)?;
    }
    Ok(store)
}

/// Applies one node's semantics to a value store; shared between the
/// reference executor and the engine's co-simulation.
pub fn apply_node(
    graph: &OperatorGraph,
    kind: &OpKind,
    store: &mut BTreeMap<BufId, Vec<Vec<u32>>>,
    tables: &mut BTreeMap<(usize, u32), TwiddleTable>,
) -> Result<(), CompileError> {
    let degree = graph.degree;
    let table = |tables: &mut BTreeMap<(usize, u32), TwiddleTable>,
                 basis_idx: usize,
                 basis: &RnsBasis,
                 ch: u32|
     -> Result<TwiddleTable, KernelError> {
        if let Some(t) = tables.get(&(basis_idx, ch)) {
            return Ok(t.clone());
        }
        let t = TwiddleTable::new(degree, *basis.modulus(ch as usize))?;
        tables.insert((basis_idx, ch), t.clone());
        Ok(t)
    };
    match kind {
        OpKind::Ntt { buf } | OpKind::Intt { buf } => {
            let basis_idx = graph.buffers[*buf as usize].basis;
            let basis = graph.bases[basis_idx].clone();
            let v = take(store, *buf)?;
            let fwd = matches!(kind, OpKind::Ntt { .. });
            let out = v
                .into_iter()
                .enumerate()
                .map(|(ch, c)| {
                    let tw = table(tables, basis_idx, &basis, ch as u32)?;
                    Ok(if fwd { kernels::ntt(&c, &tw) } else { kernels::intt(&c, &tw) })
                })
                .collect::<Result<Vec<_>, KernelError>>()?;
            store.insert(*buf, out);
        }
        OpKind::Ew { op, a, b, dst } => {
            let pa = as_poly(graph, store, *a)?;
            let pb = as_poly(graph, store, *b)?;
            let out = elementwise(*op, &pa, &pb)?;
            store.insert(*dst, out.channels().to_vec());
        }
        OpKind::MulAcc { acc, a, b } => {
            let pa = as_poly(graph, store, *a)?;
            let pb = as_poly(graph, store, *b)?;
            let pacc = as_poly(graph, store, *acc)?;
            let prod = elementwise(EwOp::Mul, &pa, &pb)?;
            let sum = elementwise(EwOp::Add, &pacc, &prod)?;
            store.insert(*acc, sum.channels().to_vec());
        }
        OpKind::Bconv { src, dst } => {
            let x = as_poly(graph, store, *src)?;
            let out = kernels::bconv(&x, graph.basis_of(*dst))?;
            store.insert(*dst, out.channels().to_vec());
        }
        OpKind::Reduce { srcs, dst } => {
            let polys = srcs
                .iter()
                .map(|&s| as_poly(graph, store, s))
                .collect::<Result<Vec<_>, _>>()?;
            let out = kernels::reduce_sum(&polys)?;
            store.insert(*dst, out.channels().to_vec());
        }
        OpKind::Rotate { src, dst, k } => {
            let basis = graph.basis_of(*src).clone();
            let v = get(store, *src)?.clone();
            let out = v
                .iter()
                .enumerate()
                .map(|(ch, c)| rotate_negacyclic(c, *k, basis.modulus(ch).value()))
                .collect();
            store.insert(*dst, out);
        }
        OpKind::Copy { src, dst } => {
            let v = get(store, *src)?.clone();
            store.insert(*dst, v);
        }
        OpKind::Remap { .. } => {} // layout only
    }
    Ok(())
}

/// Negacyclic shift: multiply by X^k, wrapping with sign flip.
pub fn rotate_negacyclic(c: &[u32], k: usize, q: u32) -> Vec<u32> {
    let n = c.len();
    let k = k % (2 * n);
    let mut out = vec![0u32; n];
    for (i, &v) in c.iter().enumerate() {
        let shifted = i + k;
        let wraps = (shifted / n) % 2 == 1;
        let idx = shifted % n;
        out[idx] = if wraps && v != 0 { q - v } else { v };
    }
    out
}

fn get<'s>(
    store: &'s BTreeMap<BufId, Vec<Vec<u32>>>,
    buf: BufId,
) -> Result<&'s Vec<Vec<u32>>, CompileError> {
    store
        .get(&buf)
        .ok_or_else(|| CompileError::BadGraph(format!("buffer {buf} read before any write")))
}

fn take(
    store: &mut BTreeMap<BufId, Vec<Vec<u32>>>,
    buf: BufId,
) -> Result<Vec<Vec<u32>>, CompileError> {
    store
        .remove(&buf)
        .ok_or_else(|| CompileError::BadGraph(format!("buffer {buf} read before any write")))
}

fn as_poly(
    graph: &OperatorGraph,
    store: &BTreeMap<BufId, Vec<Vec<u32>>>,
    buf: BufId,
) -> Result<RnsPolynomial, CompileError> {
    let channels = get(store, buf)?.clone();
    Ok(RnsPolynomial::new(graph.basis_of(buf).clone(), channels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Modulus;

    #[test]
    fn rotate_wraps_with_sign() {
        let q = 17;
        // x^3 * x = x^4 = -1 in degree 4
        assert_eq!(rotate_negacyclic(&[0, 0, 0, 1], 1, q), vec![16, 0, 0, 0]);
        assert_eq!(rotate_negacyclic(&[1, 2, 3, 4], 0, q), vec![1, 2, 3, 4]);
        // rotating by 2n is identity
        assert_eq!(rotate_negacyclic(&[1, 2, 3, 4], 8, q), vec![1, 2, 3, 4]);
        // rotating by n negates
        assert_eq!(rotate_negacyclic(&[1, 2, 0, 4], 4, q), vec![16, 15, 0, 13]);
    }

    #[test]
    fn rotate_matches_ntt_domain_multiply() {
        let q = Modulus::new(12289).unwrap();
        let tw = TwiddleTable::new(8, q).unwrap();
        let c = vec![3u32, 1, 4, 1, 5, 9, 2, 6];
        let k = 3;
        let mut xk = vec![0u32; 8];
        xk[k] = 1;
        assert_eq!(
            rotate_negacyclic(&c, k, q.value()),
            kernels::negacyclic_mul(&c, &xk, &tw)
        );
    }

    #[test]
    fn topo_order_respects_deps_and_detects_cycles() {
        let mut g = OperatorGraph::new(8);
        let b = g.add_basis(RnsBasis::from_primes(&[17]).unwrap());
        let x = g.add_buffer(b, 0, BufInit::Input(0));
        let n0 = g.add_node(OpKind::Ntt { buf: x }, vec![], 0);
        let n1 = g.add_node(OpKind::Intt { buf: x }, vec![n0], 0);
        let order = g.topo_order().unwrap();
        assert!(order.iter().position(|&i| i == n0) < order.iter().position(|&i| i == n1));

        g.nodes[n0].deps.push(n1);
        assert!(matches!(g.topo_order(), Err(CompileError::BadGraph(_))));
    }

    #[test]
    fn reference_execute_roundtrip() {
        let mut g = OperatorGraph::new(16);
        let b = g.add_basis(RnsBasis::from_primes(&[12289, 40961]).unwrap());
        let x = g.add_buffer(b, 0, BufInit::Input(0));
        let n0 = g.add_node(OpKind::Ntt { buf: x }, vec![], 0);
        g.add_node(OpKind::Intt { buf: x }, vec![n0], 0);
        g.outputs.push(x);

        let input: Vec<Vec<u32>> = vec![(0..16).collect(), (100..116).collect()];
        let mut inputs = BTreeMap::new();
        inputs.insert(x, input.clone());
        let out = reference_execute(&g, &inputs).unwrap();
        assert_eq!(out[&x], input);
    }
}
