//! Cell graphs: labeled DAGs whose vertex order is a topological order.
//!
//! A [`CellGraph`] stores, for every vertex, a label and a bitmask of its
//! successors. Edges always point from a lower to a higher index, which makes
//! every graph acyclic by construction. Input vertices form a prefix of the
//! vertex order and the output vertex is always last.

use std::fmt;

use blake2::{Blake2s256, Digest as _};
use thiserror::Error;

/// Largest number of vertices a cell may have (successor sets are `u32` masks).
pub const MAX_GRAPH_VERTICES: usize = 32;

/// Largest graph [`is_isomorphic_bruteforce`] accepts.
pub const BRUTEFORCE_MAX_VERTICES: usize = 8;

/// Operation label of a vertex, stored as the byte that enters the hash.
///
/// Bytes 0..=2 are reserved for the structural roles; operation `i` of a
/// search space's alphabet is byte `3 + i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub u8);

impl Label {
    pub const INPUT: Label = Label(0);
    pub const OUTPUT: Label = Label(1);
    /// Second input of two-input cells (the previous-previous cell output).
    pub const INPUT_AUX: Label = Label(2);
    const FIRST_OP: u8 = 3;

    pub const fn op(index: usize) -> Label {
        Label(Self::FIRST_OP + index as u8)
    }

    /// Index into the operation alphabet, `None` for role labels.
    pub fn op_index(self) -> Option<usize> {
        self.0.checked_sub(Self::FIRST_OP).map(usize::from)
    }

    pub fn is_input(self) -> bool {
        self == Self::INPUT || self == Self::INPUT_AUX
    }

    pub fn is_output(self) -> bool {
        self == Self::OUTPUT
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("graph has {0} vertices; supported range is 2..={MAX_GRAPH_VERTICES}")]
    VertexCount(usize),
    #[error("edge {0}-{1} is not a forward edge between existing vertices")]
    BadEdge(usize, usize),
    #[error("graph is not a valid cell: {0}")]
    Invalid(Violation),
    #[error("graph has {0} vertices; brute-force isomorphism supports at most {BRUTEFORCE_MAX_VERTICES}")]
    TooLargeForBruteforce(usize),
}

/// First rule a candidate cell breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    TooFewVertices(usize),
    VertexCap { count: usize, max: usize },
    EdgeCap { count: usize, max: usize },
    /// Input/output label at the wrong position, or a role vertex missing.
    Placement { vertex: usize },
    UnknownLabel { vertex: usize },
    InDegree { vertex: usize },
    OutDegree { vertex: usize },
    Disconnected,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::TooFewVertices(n) => write!(f, "{n} vertices, at least 2 required"),
            Violation::VertexCap { count, max } => write!(f, "{count} vertices exceeds cap {max}"),
            Violation::EdgeCap { count, max } => write!(f, "{count} edges exceeds cap {max}"),
            Violation::Placement { vertex } => write!(f, "vertex {vertex} breaks input/output placement"),
            Violation::UnknownLabel { vertex } => write!(f, "vertex {vertex} has a label outside the alphabet"),
            Violation::InDegree { vertex } => write!(f, "vertex {vertex} has in-degree 0"),
            Violation::OutDegree { vertex } => write!(f, "vertex {vertex} has out-degree 0"),
            Violation::Disconnected => write!(f, "no path from input to output"),
        }
    }
}

/// Cell DAG. Immutable once built.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CellGraph {
    labels: Vec<Label>,
    succ: Vec<u32>,
}

impl CellGraph {
    /// Builds a graph from labels and `(src, dst)` edges. Only structural
    /// well-formedness is checked here; use [`CellGraph::check`] or
    /// `validate` for cell rules.
    pub fn new(labels: Vec<Label>, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let n = labels.len();
        if !(2..=MAX_GRAPH_VERTICES).contains(&n) {
            return Err(GraphError::VertexCount(n));
        }
        let mut succ = vec![0u32; n];
        for &(s, d) in edges {
            if s >= d || d >= n {
                return Err(GraphError::BadEdge(s, d));
            }
            succ[s] |= 1 << d;
        }
        Ok(CellGraph { labels, succ })
    }

    /// Builds from successor masks. Bits must only point forward.
    pub(crate) fn from_masks(labels: Vec<Label>, succ: Vec<u32>) -> Self {
        debug_assert_eq!(labels.len(), succ.len());
        debug_assert!(succ
            .iter()
            .enumerate()
            .all(|(v, &m)| m & ((1u64 << (v + 1)) - 1) as u32 == 0));
        CellGraph { labels, succ }
    }

    pub fn num_vertices(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> Label {
        self.labels[v]
    }

    pub fn succ_mask(&self, v: usize) -> u32 {
        self.succ[v]
    }

    pub(crate) fn succ_masks(&self) -> Vec<u32> {
        self.succ.clone()
    }

    pub fn pred_mask(&self, v: usize) -> u32 {
        let bit = 1u32 << v;
        self.succ[..v]
            .iter()
            .enumerate()
            .filter(|(_, &m)| m & bit != 0)
            .fold(0, |acc, (u, _)| acc | (1 << u))
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        src < self.succ.len() && self.succ[src] & (1 << dst) != 0
    }

    pub fn num_edges(&self) -> usize {
        self.succ.iter().map(|m| m.count_ones() as usize).sum()
    }

    /// Edges in row-major `(src, dst)` order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for (s, &m) in self.succ.iter().enumerate() {
            let mut bits = m;
            while bits != 0 {
                let d = bits.trailing_zeros() as usize;
                out.push((s, d));
                bits &= bits - 1;
            }
        }
        out
    }

    pub fn in_degrees(&self) -> Vec<u32> {
        let mut deg = vec![0u32; self.num_vertices()];
        for &m in &self.succ {
            let mut bits = m;
            while bits != 0 {
                deg[bits.trailing_zeros() as usize] += 1;
                bits &= bits - 1;
            }
        }
        deg
    }

    /// Number of leading input-role vertices.
    pub fn num_inputs(&self) -> usize {
        self.labels.iter().take_while(|l| l.is_input()).count()
    }

    /// Label-placement, degree and connectivity rules, independent of any
    /// search-space caps.
    pub fn check(&self) -> Result<(), Violation> {
        let n = self.num_vertices();
        if n < 2 {
            return Err(Violation::TooFewVertices(n));
        }
        self.check_placement()?;
        self.check_degrees()?;
        self.check_connected()
    }

    pub(crate) fn check_placement(&self) -> Result<(), Violation> {
        let n = self.num_vertices();
        if self.labels[0] != Label::INPUT {
            return Err(Violation::Placement { vertex: 0 });
        }
        if !self.labels[n - 1].is_output() {
            return Err(Violation::Placement { vertex: n - 1 });
        }
        let inputs = self.num_inputs();
        if inputs > 1 && self.labels[1] != Label::INPUT_AUX {
            return Err(Violation::Placement { vertex: 1 });
        }
        if inputs > 2 {
            return Err(Violation::Placement { vertex: 2 });
        }
        for v in inputs..n - 1 {
            let l = self.labels[v];
            if l.is_input() || l.is_output() {
                return Err(Violation::Placement { vertex: v });
            }
        }
        Ok(())
    }

    pub(crate) fn check_degrees(&self) -> Result<(), Violation> {
        let n = self.num_vertices();
        let inputs = self.num_inputs();
        let indeg = self.in_degrees();
        for (v, &d) in indeg.iter().enumerate() {
            let is_input = v < inputs;
            if is_input && d != 0 {
                return Err(Violation::Placement { vertex: v });
            }
            if !is_input && d == 0 {
                return Err(Violation::InDegree { vertex: v });
            }
        }
        for v in 0..n - 1 {
            if self.succ[v] == 0 {
                return Err(Violation::OutDegree { vertex: v });
            }
        }
        Ok(())
    }

    pub(crate) fn check_connected(&self) -> Result<(), Violation> {
        let n = self.num_vertices();
        let mut reach = 1u32;
        for v in 0..n {
            if reach & (1 << v) != 0 {
                reach |= self.succ[v];
            }
        }
        if reach & (1 << (n - 1)) == 0 {
            return Err(Violation::Disconnected);
        }
        Ok(())
    }

    /// Longest input-to-output path, counted in edges.
    pub fn longest_path(&self) -> usize {
        let n = self.num_vertices();
        let mut depth = vec![None::<usize>; n];
        depth[0] = Some(0);
        for v in 0..n {
            if let Some(d) = depth[v] {
                let mut bits = self.succ[v];
                while bits != 0 {
                    let w = bits.trailing_zeros() as usize;
                    depth[w] = Some(depth[w].map_or(d + 1, |x| x.max(d + 1)));
                    bits &= bits - 1;
                }
            }
        }
        depth[n - 1].unwrap_or(0)
    }

    /// Renumbers vertices: `order[new] = old`. The order must be a
    /// topological order of `self`, otherwise `None`.
    pub fn reorder(&self, order: &[usize]) -> Option<CellGraph> {
        let n = self.num_vertices();
        if order.len() != n {
            return None;
        }
        let mut pos = vec![usize::MAX; n];
        for (new, &old) in order.iter().enumerate() {
            if old >= n || pos[old] != usize::MAX {
                return None;
            }
            pos[old] = new;
        }
        let labels = order.iter().map(|&old| self.labels[old]).collect();
        let mut succ = vec![0u32; n];
        for (s, d) in self.edges() {
            let (ns, nd) = (pos[s], pos[d]);
            if ns >= nd {
                return None;
            }
            succ[ns] |= 1 << nd;
        }
        Some(CellGraph { labels, succ })
    }

    /// Graph with vertex `v` deleted and higher vertices shifted down.
    /// Edges touching `v` are dropped.
    pub(crate) fn without_vertex(&self, v: usize) -> CellGraph {
        let low = (1u32 << v) - 1;
        let squeeze = |m: u32| (m & low) | ((m >> 1) & !low);
        let mut labels = self.labels.clone();
        labels.remove(v);
        let succ = self
            .succ
            .iter()
            .enumerate()
            .filter(|&(u, _)| u != v)
            .map(|(_, &m)| squeeze(m & !(1 << v)))
            .collect();
        CellGraph { labels, succ }
    }

    /// Graph with a new vertex inserted at index `at`; vertices at or above
    /// `at` shift up. The new vertex has no edges.
    pub(crate) fn with_vertex_inserted(&self, at: usize, label: Label) -> CellGraph {
        let low = (1u32 << at) - 1;
        let widen = |m: u32| (m & low) | ((m & !low) << 1);
        let mut labels = self.labels.clone();
        labels.insert(at, label);
        let mut succ: Vec<u32> = self.succ.iter().map(|&m| widen(m)).collect();
        succ.insert(at, 0);
        CellGraph { labels, succ }
    }

    pub(crate) fn with_label(&self, v: usize, label: Label) -> CellGraph {
        let mut g = self.clone();
        g.labels[v] = label;
        g
    }

    pub(crate) fn with_edge(&self, s: usize, d: usize, present: bool) -> CellGraph {
        let mut g = self.clone();
        if present {
            g.succ[s] |= 1 << d;
        } else {
            g.succ[s] &= !(1 << d);
        }
        g
    }
}

impl fmt::Debug for CellGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<u8> = self.labels.iter().map(|l| l.0).collect();
        f.debug_struct("CellGraph")
            .field("labels", &labels)
            .field("edges", &self.edges())
            .finish()
    }
}

/// 32-byte isomorphism-invariant graph fingerprint.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s.trim(), &mut out).ok()?;
        Some(Digest(out))
    }

    /// Digest of an ordered sequence of digests (multi-cell architectures).
    pub fn combine(parts: &[Digest]) -> Digest {
        let mut h = Blake2s256::new();
        for p in parts {
            h.update(p.0);
        }
        Digest(h.finalize().into())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

/// Isomorphism-invariant digest of a valid cell.
///
/// Every vertex starts from `H(in_degree, out_degree, label)`. Each of the
/// `num_vertices` refinement rounds replaces a vertex hash with
/// `H(#preds, sorted pred hashes, #succs, sorted succ hashes, own hash)`,
/// and the digest is `H(sorted vertex hashes)`. `H` is BLAKE2s-256 over
/// raw bytes. This layout is frozen: tabular oracle files are keyed by it.
pub fn canonical_hash(graph: &CellGraph) -> Result<Digest, GraphError> {
    graph.check().map_err(GraphError::Invalid)?;
    Ok(canonical_hash_unchecked(graph))
}

pub(crate) fn canonical_hash_unchecked(graph: &CellGraph) -> Digest {
    let n = graph.num_vertices();
    let indeg = graph.in_degrees();
    let preds: Vec<u32> = (0..n).map(|v| graph.pred_mask(v)).collect();

    let mut hashes: Vec<[u8; 32]> = (0..n)
        .map(|v| {
            let outdeg = graph.succ[v].count_ones() as u8;
            Blake2s256::digest([indeg[v] as u8, outdeg, graph.labels[v].0]).into()
        })
        .collect();

    let mut next = vec![[0u8; 32]; n];
    let mut scratch: Vec<[u8; 32]> = Vec::with_capacity(n);
    for _ in 0..n {
        for v in 0..n {
            let mut h = Blake2s256::new();
            for mask in [preds[v], graph.succ[v]] {
                scratch.clear();
                let mut bits = mask;
                while bits != 0 {
                    scratch.push(hashes[bits.trailing_zeros() as usize]);
                    bits &= bits - 1;
                }
                scratch.sort_unstable();
                h.update([scratch.len() as u8]);
                for s in &scratch {
                    h.update(s);
                }
            }
            h.update(hashes[v]);
            next[v] = h.finalize().into();
        }
        std::mem::swap(&mut hashes, &mut next);
    }

    hashes.sort_unstable();
    let mut h = Blake2s256::new();
    for s in &hashes {
        h.update(s);
    }
    Digest(h.finalize().into())
}

/// Exhaustive role-preserving isomorphism test: inputs and output stay
/// fixed, interior vertices are permuted freely. Test oracle only.
pub fn is_isomorphic_bruteforce(g1: &CellGraph, g2: &CellGraph) -> Result<bool, GraphError> {
    for g in [g1, g2] {
        if g.num_vertices() > BRUTEFORCE_MAX_VERTICES {
            return Err(GraphError::TooLargeForBruteforce(g.num_vertices()));
        }
        g.check().map_err(GraphError::Invalid)?;
    }
    let n = g1.num_vertices();
    if n != g2.num_vertices() || g1.num_edges() != g2.num_edges() {
        return Ok(false);
    }
    let inputs = g1.num_inputs();
    if inputs != g2.num_inputs() || g1.labels[..inputs] != g2.labels[..inputs] {
        return Ok(false);
    }
    let mut sorted1 = g1.labels.clone();
    let mut sorted2 = g2.labels.clone();
    sorted1.sort_unstable();
    sorted2.sort_unstable();
    if sorted1 != sorted2 {
        return Ok(false);
    }

    let interior: Vec<usize> = (inputs..n - 1).collect();
    let mut perm = interior.clone();
    // map[v1] = v2
    let mut map: Vec<usize> = (0..n).collect();
    let edges1 = g1.edges();
    let matches = |map: &[usize]| {
        (0..n).all(|v| g1.labels[v] == g2.labels[map[v]])
            && edges1.iter().all(|&(s, d)| g2.has_edge(map[s], map[d]))
    };
    loop {
        for (i, &v) in interior.iter().enumerate() {
            map[v] = perm[i];
        }
        if matches(&map) {
            return Ok(true);
        }
        if !next_permutation(&mut perm) {
            return Ok(false);
        }
    }
}

/// Lexicographic next permutation; false once the last one was reached.
pub(crate) fn next_permutation(xs: &mut [usize]) -> bool {
    if xs.len() < 2 {
        return false;
    }
    let mut i = xs.len() - 1;
    while i > 0 && xs[i - 1] >= xs[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = xs.len() - 1;
    while xs[j] <= xs[i - 1] {
        j -= 1;
    }
    xs.swap(i - 1, j);
    xs[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    const C1: Label = Label::op(0);
    const C3: Label = Label::op(1);
    const MP: Label = Label::op(2);
    const IN: Label = Label::INPUT;
    const OUT: Label = Label::OUTPUT;

    fn g(labels: &[Label], edges: &[(usize, usize)]) -> CellGraph {
        CellGraph::new(labels.to_vec(), edges).unwrap()
    }

    fn diamond(a: Label, b: Label) -> CellGraph {
        g(&[IN, a, b, OUT], &[(0, 1), (0, 2), (1, 3), (2, 3)])
    }

    #[test]
    fn rejects_backward_edges() {
        assert_eq!(
            CellGraph::new(vec![IN, C1, OUT], &[(1, 0)]),
            Err(GraphError::BadEdge(1, 0))
        );
        assert_eq!(
            CellGraph::new(vec![IN, C1, OUT], &[(0, 3)]),
            Err(GraphError::BadEdge(0, 3))
        );
    }

    #[test]
    fn check_reports_degree_and_placement() {
        assert_eq!(g(&[IN, C3, OUT], &[(0, 1), (1, 2)]).check(), Ok(()));
        assert_eq!(
            g(&[IN, C3, OUT], &[(0, 2)]).check(),
            Err(Violation::InDegree { vertex: 1 })
        );
        assert_eq!(
            g(&[IN, C3, OUT], &[(0, 1), (0, 2)]).check(),
            Err(Violation::OutDegree { vertex: 1 })
        );
        assert_eq!(
            g(&[C1, C3, OUT], &[(0, 1), (1, 2)]).check(),
            Err(Violation::Placement { vertex: 0 })
        );
        assert_eq!(
            g(&[IN, OUT, OUT], &[(0, 1), (1, 2)]).check(),
            Err(Violation::Placement { vertex: 1 })
        );
    }

    #[test]
    fn symmetric_diamond_hashes_equal() {
        let a = diamond(C1, C3);
        let b = diamond(C3, C1);
        assert_eq!(canonical_hash(&a).unwrap(), canonical_hash(&b).unwrap());
        assert!(is_isomorphic_bruteforce(&a, &b).unwrap());
    }

    #[test]
    fn chain_order_matters() {
        let a = g(&[IN, C1, C3, OUT], &[(0, 1), (1, 2), (2, 3)]);
        let b = g(&[IN, C3, C1, OUT], &[(0, 1), (1, 2), (2, 3)]);
        assert_ne!(canonical_hash(&a).unwrap(), canonical_hash(&b).unwrap());
        assert!(!is_isomorphic_bruteforce(&a, &b).unwrap());
        assert!(is_isomorphic_bruteforce(&a, &a).unwrap());
    }

    #[test]
    fn hash_is_deterministic_and_pinned() {
        let chain = g(&[IN, C3, OUT], &[(0, 1), (1, 2)]);
        let d1 = canonical_hash(&chain).unwrap();
        let d2 = canonical_hash(&chain.clone()).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1.to_hex().len(), 64);
        assert_eq!(Digest::from_hex(&d1.to_hex()), Some(d1));
    }

    #[test]
    fn hash_rejects_invalid() {
        let bad = g(&[IN, C3, OUT], &[(0, 2)]);
        assert!(matches!(canonical_hash(&bad), Err(GraphError::Invalid(_))));
    }

    #[test]
    fn bruteforce_bound() {
        let labels: Vec<Label> = std::iter::once(IN)
            .chain(std::iter::repeat_n(MP, 7))
            .chain(std::iter::once(OUT))
            .collect();
        let edges: Vec<_> = (0..8).map(|v| (v, v + 1)).collect();
        let big = g(&labels, &edges);
        assert_eq!(
            is_isomorphic_bruteforce(&big, &big),
            Err(GraphError::TooLargeForBruteforce(9))
        );
    }

    #[test]
    fn vertex_surgery() {
        let d = diamond(C1, C3);
        let removed = d.without_vertex(1);
        assert_eq!(removed.labels(), &[IN, C3, OUT]);
        assert_eq!(removed.edges(), vec![(0, 1), (1, 2)]);
        let grown = removed.with_vertex_inserted(1, MP);
        assert_eq!(grown.labels(), &[IN, MP, C3, OUT]);
        assert_eq!(grown.edges(), vec![(0, 2), (2, 3)]);
    }

    #[test]
    fn reorder_rejects_non_topological() {
        let d = diamond(C1, C3);
        assert!(d.reorder(&[0, 2, 1, 3]).is_some());
        assert!(d.reorder(&[3, 1, 2, 0]).is_none());
    }

    #[test]
    fn longest_path_counts_edges() {
        assert_eq!(diamond(C1, C1).longest_path(), 2);
        assert_eq!(g(&[IN, OUT], &[(0, 1)]).longest_path(), 1);
        let skip = g(&[IN, C1, C3, OUT], &[(0, 1), (1, 2), (2, 3), (0, 3)]);
        assert_eq!(skip.longest_path(), 3);
    }
}
