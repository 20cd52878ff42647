//! Architectures: the tuple of cells that forms one search state.

use crate::graph::{canonical_hash_unchecked, CellGraph, Digest, GraphError, Violation};
use crate::space::{convert_edges_to_nodes, validate, EdgeCell, SpaceError, SpaceSpec};

/// One cell of an architecture. Operations-on-edges cells carry their
/// converted graph alongside.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Cell {
    Nodes(CellGraph),
    Edges { cell: EdgeCell, graph: CellGraph },
}

impl Cell {
    pub fn from_edge_cell(cell: EdgeCell, spec: &SpaceSpec) -> Result<Cell, SpaceError> {
        let reduction = spec
            .reduction_label()
            .ok_or_else(|| SpaceError::Spec("space has no reduction label".into()))?;
        let graph = convert_edges_to_nodes(&cell, reduction);
        Ok(Cell::Edges { cell, graph })
    }

    /// Operations-on-nodes view used for hashing, validation and encoding.
    pub fn graph(&self) -> &CellGraph {
        match self {
            Cell::Nodes(g) => g,
            Cell::Edges { graph, .. } => graph,
        }
    }
}

/// Ordered cells plus cached digests.
///
/// The digest of a single-cell architecture is the cell's canonical hash;
/// multi-cell architectures hash the ordered cell digests.
#[derive(Debug, Clone)]
pub struct Architecture {
    cells: Vec<Cell>,
    cell_digests: Vec<Digest>,
    digest: Digest,
}

impl PartialEq for Architecture {
    fn eq(&self, other: &Self) -> bool {
        self.digest == other.digest
    }
}

impl Eq for Architecture {}

impl std::hash::Hash for Architecture {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.digest.hash(state)
    }
}

impl Architecture {
    /// Fails if any cell breaks the structural cell rules.
    pub fn new(cells: Vec<Cell>) -> Result<Architecture, GraphError> {
        if cells.is_empty() {
            return Err(GraphError::VertexCount(0));
        }
        for c in &cells {
            c.graph().check().map_err(GraphError::Invalid)?;
        }
        Ok(Self::from_checked(cells))
    }

    pub(crate) fn from_checked(cells: Vec<Cell>) -> Architecture {
        let cell_digests: Vec<Digest> = cells
            .iter()
            .map(|c| canonical_hash_unchecked(c.graph()))
            .collect();
        Self::from_parts(cells, cell_digests)
    }

    pub(crate) fn from_parts(cells: Vec<Cell>, cell_digests: Vec<Digest>) -> Architecture {
        let digest = if cell_digests.len() == 1 {
            cell_digests[0]
        } else {
            Digest::combine(&cell_digests)
        };
        Architecture {
            cells,
            cell_digests,
            digest,
        }
    }

    pub fn single(graph: CellGraph) -> Result<Architecture, GraphError> {
        Self::new(vec![Cell::Nodes(graph)])
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell_digests(&self) -> &[Digest] {
        &self.cell_digests
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn graphs(&self) -> impl Iterator<Item = &CellGraph> {
        self.cells.iter().map(Cell::graph)
    }

    /// Every cell valid against `spec` and the cell count matches.
    pub fn validate(&self, spec: &SpaceSpec) -> Result<(), Violation> {
        if self.cells.len() != spec.cells_per_architecture() {
            return Err(Violation::Placement { vertex: 0 });
        }
        for c in &self.cells {
            validate(c.graph(), spec)?;
            let fixed = spec.template().is_some();
            if fixed != matches!(c, Cell::Edges { .. }) {
                return Err(Violation::Placement { vertex: 0 });
            }
        }
        Ok(())
    }
}
