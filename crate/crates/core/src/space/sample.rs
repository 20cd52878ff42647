use rand::seq::index;
use rand::Rng;

use crate::arch::{Architecture, Cell};
use crate::graph::{CellGraph, Label};

use super::{EdgeCell, OpEdge, Regime, SpaceError, SpaceSpec, Template};

/// Rejection attempts allowed per drawn cell.
pub const DEFAULT_MAX_ATTEMPTS: usize = 100_000;

/// Draws an architecture with [`DEFAULT_MAX_ATTEMPTS`].
pub fn sample_uniform<R: Rng + ?Sized>(spec: &SpaceSpec, rng: &mut R) -> Result<Architecture, SpaceError> {
    sample_uniform_with(spec, rng, DEFAULT_MAX_ATTEMPTS)
}

/// Size-stratified sampler.
///
/// Free-form cells: the vertex count is uniform on `2..=max_vertices`, then
/// random adjacency matrices and labelings of exactly that size are drawn
/// until one is valid. Fixed-template cells: every op-edge gets a uniform
/// source (distinct within its intermediate) and a uniform operation.
/// Cells of multi-cell architectures are drawn independently.
pub fn sample_uniform_with<R: Rng + ?Sized>(
    spec: &SpaceSpec,
    rng: &mut R,
    max_attempts: usize,
) -> Result<Architecture, SpaceError> {
    let mut cells = Vec::with_capacity(spec.cells_per_architecture());
    for _ in 0..spec.cells_per_architecture() {
        let cell = match spec.regime() {
            Regime::FreeForm => Cell::Nodes(sample_free_form(spec, rng, max_attempts)?),
            Regime::FixedTemplate(t) => Cell::from_edge_cell(sample_edge_cell(t, spec.op_labels().len(), rng)?, spec)?,
        };
        cells.push(cell);
    }
    Ok(Architecture::from_checked(cells))
}

fn sample_free_form<R: Rng + ?Sized>(
    spec: &SpaceSpec,
    rng: &mut R,
    max_attempts: usize,
) -> Result<CellGraph, SpaceError> {
    let n = rng.gen_range(2..=spec.max_vertices());
    let ops = spec.op_labels().len();
    for _ in 0..max_attempts {
        let mut succ = vec![0u32; n];
        for (v, row) in succ.iter_mut().enumerate().take(n - 1) {
            let width = n - v - 1;
            let bits = rng.gen::<u32>() & ((1u64 << width) - 1) as u32;
            *row = bits << (v + 1);
        }
        let edges: u32 = succ.iter().map(|m| m.count_ones()).sum();
        if edges as usize > spec.max_edges() {
            continue;
        }
        let mut labels = vec![Label::INPUT; n];
        labels[n - 1] = Label::OUTPUT;
        for l in &mut labels[1..n - 1] {
            *l = Label::op(rng.gen_range(0..ops));
        }
        let g = CellGraph::from_masks(labels, succ);
        if g.check_degrees().is_ok() && g.check_connected().is_ok() {
            return Ok(g);
        }
    }
    Err(SpaceError::SamplingExhausted {
        vertices: n,
        attempts: max_attempts,
    })
}

fn sample_edge_cell<R: Rng + ?Sized>(t: &Template, ops: usize, rng: &mut R) -> Result<EdgeCell, SpaceError> {
    let mut edges = Vec::with_capacity(t.intermediates * t.in_edges_per_node);
    for k in 0..t.intermediates {
        let sources = EdgeCell::INPUTS + k;
        for src in index::sample(rng, sources, t.in_edges_per_node) {
            edges.push(OpEdge {
                src,
                dst: k,
                op: rng.gen_range(0..ops),
            });
        }
    }
    EdgeCell::new(t, ops, edges)
}
