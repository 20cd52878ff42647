use crate::graph::{CellGraph, Label};

use super::{SpaceError, Template};

/// One operation-carrying edge of an operations-on-edges cell.
///
/// `src` uses cell numbering (inputs `0` and `1`, intermediate `k` is
/// `2 + k`); `dst` is the intermediate index `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OpEdge {
    pub src: usize,
    pub dst: usize,
    pub op: usize,
}

/// Operations-on-edges cell with a fixed reduction skeleton. Op-edges are
/// kept sorted by `(dst, src)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EdgeCell {
    num_intermediate: usize,
    op_edges: Vec<OpEdge>,
}

impl EdgeCell {
    pub const INPUTS: usize = 2;

    pub fn new(template: &Template, num_ops: usize, mut op_edges: Vec<OpEdge>) -> Result<EdgeCell, SpaceError> {
        let bad = |m: String| Err(SpaceError::EdgeCell(m));
        let k_in = template.in_edges_per_node;
        if op_edges.len() != template.intermediates * k_in {
            return bad(format!(
                "expected {} op-edges, got {}",
                template.intermediates * k_in,
                op_edges.len()
            ));
        }
        op_edges.sort_unstable_by_key(|e| (e.dst, e.src, e.op));
        for k in 0..template.intermediates {
            let group = &op_edges[k * k_in..(k + 1) * k_in];
            for (i, e) in group.iter().enumerate() {
                if e.dst != k {
                    return bad(format!("intermediate {k} needs exactly {k_in} in-edges"));
                }
                if e.src >= Self::INPUTS + k {
                    return bad(format!(
                        "op-edge {}->{} does not come from a lower-indexed node",
                        e.src,
                        Self::INPUTS + k
                    ));
                }
                if e.op >= num_ops {
                    return bad(format!("operation index {} out of range", e.op));
                }
                if group[..i].iter().any(|o| o.src == e.src) {
                    return bad(format!(
                        "in-edges of intermediate {k} share source {}",
                        e.src
                    ));
                }
            }
        }
        Ok(EdgeCell {
            num_intermediate: template.intermediates,
            op_edges,
        })
    }

    pub fn num_intermediate(&self) -> usize {
        self.num_intermediate
    }

    pub fn op_edges(&self) -> &[OpEdge] {
        &self.op_edges
    }

    pub fn in_edges_per_node(&self) -> usize {
        self.op_edges.len() / self.num_intermediate
    }
}

/// Converts an operations-on-edges cell to operations-on-nodes form.
///
/// Vertex layout: the two inputs, then for every intermediate its op
/// vertices (one per in-edge, in stored order) followed by its reduction
/// vertex, then the output. Every op vertex has one in-edge from the
/// original source and one out-edge to its reduction vertex; every
/// reduction vertex feeds the output.
pub fn convert_edges_to_nodes(cell: &EdgeCell, reduction: Label) -> CellGraph {
    let k_in = cell.in_edges_per_node();
    let stride = k_in + 1;
    let n = EdgeCell::INPUTS + cell.num_intermediate * stride + 1;
    let output = n - 1;
    let reduction_vertex = |k: usize| EdgeCell::INPUTS + k * stride + k_in;
    let source_vertex = |src: usize| {
        if src < EdgeCell::INPUTS {
            src
        } else {
            reduction_vertex(src - EdgeCell::INPUTS)
        }
    };

    let mut labels = vec![Label::INPUT, Label::INPUT_AUX];
    let mut edges = Vec::with_capacity(2 * cell.op_edges.len() + cell.num_intermediate);
    for k in 0..cell.num_intermediate {
        for (j, e) in cell.op_edges[k * k_in..(k + 1) * k_in].iter().enumerate() {
            let v = EdgeCell::INPUTS + k * stride + j;
            labels.push(Label::op(e.op));
            edges.push((source_vertex(e.src), v));
            edges.push((v, reduction_vertex(k)));
        }
        labels.push(reduction);
        edges.push((reduction_vertex(k), output));
    }
    labels.push(Label::OUTPUT);
    CellGraph::new(labels, &edges).expect("edge-cell invariants give forward edges")
}
