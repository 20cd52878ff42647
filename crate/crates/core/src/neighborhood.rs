//! Neighbor generation: the single-change moves available from an
//! architecture.
//!
//! Free-form cells use five operators (remove vertex, add vertex, change
//! label, remove edge, add edge). Fixed-template cells change the operation
//! of one op-edge or rewire one op-edge to another source. Every operator
//! deduplicates its output by canonical hash and keeps generation order.
//!
//! The relation is not symmetric: `b` being a neighbor of `a` says nothing
//! about `a` being a neighbor of `b`.

use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{Architecture, Cell};
use crate::graph::{canonical_hash_unchecked, CellGraph, Digest, Label};
use crate::space::{validate, EdgeCell, OpEdge, Regime, SpaceSpec};

/// Candidate-edge sets larger than this are subsampled in vertex removal.
pub const MAX_REMOVAL_CANDIDATE_EDGES: usize = 20;

type Hashed = (Digest, CellGraph);

/// Up to `cap` neighbors of `current`, in slot order.
#[derive(Debug, Clone)]
pub struct NeighborSet {
    pub current: Architecture,
    pub candidates: Vec<Architecture>,
    /// Number of distinct neighbors before the cap was applied.
    pub pool_size: usize,
    pub cap: usize,
}

impl NeighborSet {
    /// Validity flag per candidate slot (`cap` entries).
    pub fn mask(&self) -> Vec<bool> {
        (0..self.cap).map(|i| i < self.candidates.len()).collect()
    }
}

struct Dedup {
    seen: HashSet<Digest>,
    out: Vec<Hashed>,
}

impl Dedup {
    fn new() -> Self {
        Dedup {
            seen: HashSet::new(),
            out: Vec::new(),
        }
    }

    fn push(&mut self, g: CellGraph) {
        let d = canonical_hash_unchecked(&g);
        if self.seen.insert(d) {
            self.out.push((d, g));
        }
    }
}

fn interior(g: &CellGraph) -> std::ops::Range<usize> {
    g.num_inputs()..g.num_vertices() - 1
}

fn graph_seed(g: &CellGraph, v: usize) -> u64 {
    let d = canonical_hash_unchecked(g);
    u64::from_le_bytes(d.0[..8].try_into().expect("8 bytes")) ^ v as u64
}

/// Removes one interior vertex and reconnects its predecessors to its
/// successors with every valid subset of the bridging edges.
pub fn remove_vertex_neighbors(g: &CellGraph, spec: &SpaceSpec) -> Vec<Hashed> {
    let mut acc = Dedup::new();
    for v in interior(g) {
        let preds = g.pred_mask(v);
        let succs = g.succ_mask(v);
        let base = g.without_vertex(v);
        let mut bridges = Vec::new();
        for p in bits(preds) {
            for s in bits(succs) {
                // successors shift down by one after removal
                let d = s - 1;
                if !base.has_edge(p, d) {
                    bridges.push((p, d));
                }
            }
        }
        let apply = |mask: u64| {
            let mut succ = base.succ_masks();
            for (i, &(p, d)) in bridges.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    succ[p] |= 1 << d;
                }
            }
            CellGraph::from_masks(base.labels().to_vec(), succ)
        };
        let mut consider = |mask: u64| {
            let cand = apply(mask);
            if validate(&cand, spec).is_ok() {
                acc.push(cand);
            }
        };
        if bridges.len() <= MAX_REMOVAL_CANDIDATE_EDGES {
            for mask in 0..1u64 << bridges.len() {
                consider(mask);
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(graph_seed(g, v));
            let full = (1u64 << bridges.len()) - 1;
            for _ in 0..1u64 << MAX_REMOVAL_CANDIDATE_EDGES {
                consider(rng.gen::<u64>() & full);
            }
        }
    }
    acc.out
}

/// Inserts a vertex with one in-edge from an earlier vertex and one
/// out-edge to a later vertex, for every position, wiring and label.
pub fn add_vertex_neighbors(g: &CellGraph, spec: &SpaceSpec) -> Vec<Hashed> {
    let mut acc = Dedup::new();
    let n = g.num_vertices();
    if n >= spec.max_vertices() || g.num_edges() + 2 > spec.max_edges() {
        return acc.out;
    }
    for at in g.num_inputs()..n {
        for op in 0..spec.op_labels().len() {
            let grown = g.with_vertex_inserted(at, Label::op(op));
            for src in 0..at {
                for dst in at + 1..=n {
                    let cand = grown.with_edge(src, at, true).with_edge(at, dst, true);
                    if validate(&cand, spec).is_ok() {
                        acc.push(cand);
                    }
                }
            }
        }
    }
    acc.out
}

/// Relabels one interior vertex to a different operation.
pub fn change_label_neighbors(g: &CellGraph, spec: &SpaceSpec) -> Vec<Hashed> {
    let mut acc = Dedup::new();
    for v in interior(g) {
        for op in 0..spec.op_labels().len() {
            let l = Label::op(op);
            if l != g.label(v) {
                acc.push(g.with_label(v, l));
            }
        }
    }
    acc.out
}

/// Drops one edge whose removal keeps the cell valid.
pub fn remove_edge_neighbors(g: &CellGraph, spec: &SpaceSpec) -> Vec<Hashed> {
    let mut acc = Dedup::new();
    for (s, d) in g.edges() {
        let cand = g.with_edge(s, d, false);
        if validate(&cand, spec).is_ok() {
            acc.push(cand);
        }
    }
    acc.out
}

/// Adds one forward edge between existing vertices within the edge cap.
pub fn add_edge_neighbors(g: &CellGraph, spec: &SpaceSpec) -> Vec<Hashed> {
    let mut acc = Dedup::new();
    if g.num_edges() >= spec.max_edges() {
        return acc.out;
    }
    let n = g.num_vertices();
    for s in 0..n {
        for d in s + 1..n {
            if !g.has_edge(s, d) {
                let cand = g.with_edge(s, d, true);
                if validate(&cand, spec).is_ok() {
                    acc.push(cand);
                }
            }
        }
    }
    acc.out
}

/// Union of the five free-form operators, deduplicated, excluding `g`.
pub fn free_form_cell_neighbors(g: &CellGraph, spec: &SpaceSpec) -> Vec<Hashed> {
    let own = canonical_hash_unchecked(g);
    let mut seen = HashSet::from([own]);
    let mut out = Vec::new();
    let ops: [fn(&CellGraph, &SpaceSpec) -> Vec<Hashed>; 5] = [
        remove_vertex_neighbors,
        add_vertex_neighbors,
        change_label_neighbors,
        remove_edge_neighbors,
        add_edge_neighbors,
    ];
    for op in ops {
        for (d, c) in op(g, spec) {
            if seen.insert(d) {
                out.push((d, c));
            }
        }
    }
    out
}

/// Operation changes and source rewires of one op-edge, deduplicated by the
/// converted graph's digest, excluding `cell` itself.
pub fn edge_cell_neighbors(cell: &EdgeCell, spec: &SpaceSpec) -> Vec<(Digest, Cell)> {
    let template = spec.template().expect("fixed-template space");
    let ops = spec.op_labels().len();
    let own = match Cell::from_edge_cell(cell.clone(), spec) {
        Ok(c) => canonical_hash_unchecked(c.graph()),
        Err(_) => return Vec::new(),
    };
    let mut seen = HashSet::from([own]);
    let mut out = Vec::new();
    let mut emit = |edges: Vec<OpEdge>| {
        if let Ok(c) = EdgeCell::new(template, ops, edges) {
            if let Ok(cell) = Cell::from_edge_cell(c, spec) {
                let d = canonical_hash_unchecked(cell.graph());
                if seen.insert(d) {
                    out.push((d, cell));
                }
            }
        }
    };
    let edges = cell.op_edges();
    for (i, e) in edges.iter().enumerate() {
        for op in (0..ops).filter(|&o| o != e.op) {
            let mut next = edges.to_vec();
            next[i].op = op;
            emit(next);
        }
    }
    for (i, e) in edges.iter().enumerate() {
        let taken: Vec<usize> = edges
            .iter()
            .filter(|o| o.dst == e.dst)
            .map(|o| o.src)
            .collect();
        for src in (0..EdgeCell::INPUTS + e.dst).filter(|s| !taken.contains(s)) {
            let mut next = edges.to_vec();
            next[i].src = src;
            emit(next);
        }
    }
    out
}

/// Per-cell move list: identity first, then every mutation of that cell.
fn cell_options(cell: &Cell, digest: Digest, spec: &SpaceSpec) -> Vec<(Digest, Cell)> {
    let mut opts = vec![(digest, cell.clone())];
    match (cell, spec.regime()) {
        (Cell::Edges { cell, .. }, Regime::FixedTemplate(_)) => opts.extend(edge_cell_neighbors(cell, spec)),
        (c, _) => opts.extend(
            free_form_cell_neighbors(c.graph(), spec)
                .into_iter()
                .map(|(d, g)| (d, Cell::Nodes(g))),
        ),
    }
    opts
}

/// Neighbor set of `arch`, capped at `cap`.
///
/// Single-cell spaces pool every neighbor; multi-cell spaces pool tuples
/// with one option (identity or a mutation) per cell, minus the all-identity
/// tuple. Pools larger than `cap` are subsampled uniformly without
/// replacement; slot order is random either way.
pub fn neighbors<R: Rng + ?Sized>(arch: &Architecture, spec: &SpaceSpec, cap: usize, rng: &mut R) -> NeighborSet {
    let per_cell: Vec<Vec<(Digest, Cell)>> = arch
        .cells()
        .iter()
        .zip(arch.cell_digests())
        .map(|(c, &d)| cell_options(c, d, spec))
        .collect();
    let pool_size = per_cell.iter().map(Vec::len).product::<usize>() - 1;
    let take = pool_size.min(cap);
    let picks = index::sample(rng, pool_size, take);
    let candidates = picks
        .into_iter()
        .map(|i| {
            // Mixed-radix decode; index 0 is the all-identity tuple.
            let mut code = i + 1;
            let mut cells = Vec::with_capacity(per_cell.len());
            let mut digests = Vec::with_capacity(per_cell.len());
            for opts in &per_cell {
                let (d, c) = &opts[code % opts.len()];
                code /= opts.len();
                cells.push(c.clone());
                digests.push(*d);
            }
            Architecture::from_parts(cells, digests)
        })
        .collect();
    NeighborSet {
        current: arch.clone(),
        candidates,
        pool_size,
        cap,
    }
}

/// Every neighbor without a cap, sorted by digest.
pub fn all_neighbors(arch: &Architecture, spec: &SpaceSpec) -> Vec<Architecture> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut set = neighbors(arch, spec, usize::MAX, &mut rng);
    set.candidates.sort_by_key(|a| a.digest());
    set.candidates
}

fn bits(mask: u32) -> impl Iterator<Item = usize> {
    let mut m = mask;
    std::iter::from_fn(move || {
        if m == 0 {
            None
        } else {
            let b = m.trailing_zeros() as usize;
            m &= m - 1;
            Some(b)
        }
    })
}
