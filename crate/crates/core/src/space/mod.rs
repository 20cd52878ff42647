//! Search-space declarations: caps, label alphabets, topology regime, and the
//! text forms used by files and the CLI.

mod edge_cell;
mod enumerate;
mod sample;

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::arch::{Architecture, Cell};
use crate::graph::{CellGraph, GraphError, Label, Violation};

pub use edge_cell::{convert_edges_to_nodes, EdgeCell, OpEdge};
pub use enumerate::{
    enumerate, enumerate_with, estimated_candidates, EnumerateOptions, DEFAULT_ENUMERATION_BOUND,
};
pub use sample::{sample_uniform, sample_uniform_with, DEFAULT_MAX_ATTEMPTS};

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("invalid search space: {0}")]
    Spec(String),
    #[error("cannot read space config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse space config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("cannot parse {what}: {msg}")]
    Parse { what: &'static str, msg: String },
    #[error("invalid edge cell: {0}")]
    EdgeCell(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("no valid architecture with {vertices} vertices after {attempts} attempts")]
    SamplingExhausted { vertices: usize, attempts: usize },
    #[error("space has ~{estimate} raw candidates, above the enumeration bound {bound}")]
    TooLarge { estimate: f64, bound: f64 },
    #[error("only free-form spaces can be enumerated")]
    NotEnumerable,
}

/// Fixed reduction skeleton of operations-on-edges spaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub intermediates: usize,
    pub in_edges_per_node: usize,
    /// Label given to the reduction vertex of every intermediate node after
    /// conversion to operations-on-nodes form.
    pub reduction_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Regime {
    /// Any valid DAG within the caps.
    FreeForm,
    /// Operations on the edges of a fixed skeleton; cells are converted to
    /// operations-on-nodes graphs for hashing, validation and encoding.
    FixedTemplate(Template),
}

/// Rules of one search space.
///
/// `max_vertices` and `max_edges` always describe the operations-on-nodes
/// graph, so for fixed-template spaces they are those of the converted cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpaceSpec {
    name: String,
    max_vertices: usize,
    max_edges: usize,
    op_labels: Vec<String>,
    cells_per_architecture: usize,
    regime: Regime,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceConfig {
    name: Option<String>,
    max_vertices: Option<usize>,
    max_edges: Option<usize>,
    op_labels: Vec<String>,
    #[serde(default = "default_regime")]
    regime: String,
    #[serde(default = "one")]
    cells_per_architecture: usize,
    intermediates: Option<usize>,
    in_edges_per_node: Option<usize>,
    reduction_label: Option<String>,
}

fn default_regime() -> String {
    "free-form".into()
}

fn one() -> usize {
    1
}

const RESERVED_NAMES: [&str; 3] = ["in", "in2", "out"];

impl SpaceSpec {
    pub fn free_form(
        name: &str,
        max_vertices: usize,
        max_edges: usize,
        op_labels: &[&str],
        cells_per_architecture: usize,
    ) -> Result<SpaceSpec, SpaceError> {
        Self::build(
            name.into(),
            max_vertices,
            max_edges,
            op_labels.iter().map(|s| s.to_string()).collect(),
            cells_per_architecture,
            Regime::FreeForm,
        )
    }

    pub fn fixed_template(
        name: &str,
        template: Template,
        op_labels: &[&str],
        cells_per_architecture: usize,
    ) -> Result<SpaceSpec, SpaceError> {
        let (v, e) = template_caps(&template);
        Self::build(
            name.into(),
            v,
            e,
            op_labels.iter().map(|s| s.to_string()).collect(),
            cells_per_architecture,
            Regime::FixedTemplate(template),
        )
    }

    fn build(
        name: String,
        max_vertices: usize,
        max_edges: usize,
        op_labels: Vec<String>,
        cells_per_architecture: usize,
        regime: Regime,
    ) -> Result<SpaceSpec, SpaceError> {
        let bad = |m: String| Err(SpaceError::Spec(m));
        if !(2..=crate::graph::MAX_GRAPH_VERTICES).contains(&max_vertices) {
            return bad(format!("max_vertices must be in 2..=32, got {max_vertices}"));
        }
        if max_edges == 0 {
            return bad("max_edges must be positive".into());
        }
        if op_labels.is_empty() {
            return bad("op_labels must not be empty".into());
        }
        if !(1..=2).contains(&cells_per_architecture) {
            return bad(format!(
                "cells_per_architecture must be 1 or 2, got {cells_per_architecture}"
            ));
        }
        let mut names: Vec<&str> = op_labels.iter().map(String::as_str).collect();
        if let Regime::FixedTemplate(t) = &regime {
            if t.intermediates == 0 || t.in_edges_per_node == 0 {
                return bad("template needs at least one intermediate and one in-edge".into());
            }
            // Intermediate 0 can only draw from the two inputs.
            if t.in_edges_per_node > 2 {
                return bad("in_edges_per_node above 2 leaves intermediate 0 unsatisfiable".into());
            }
            names.push(&t.reduction_label);
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains([',', ';', '|', ':', '-', ' ', '=']) {
                return bad(format!("label {n:?} is empty or contains a separator"));
            }
            if RESERVED_NAMES.contains(n) || names[..i].contains(n) {
                return bad(format!("label {n:?} is reserved or duplicated"));
            }
        }
        if names.len() > 200 {
            return bad("too many labels".into());
        }
        Ok(SpaceSpec {
            name,
            max_vertices,
            max_edges,
            op_labels,
            cells_per_architecture,
            regime,
        })
    }

    /// `nb101`: operations on nodes, at most 7 vertices and 9 edges, three
    /// interior operations.
    pub fn nb101() -> SpaceSpec {
        Self::free_form("nb101", 7, 9, &["c1", "c3", "mp"], 1).expect("preset is valid")
    }

    /// `nb301`: two operations-on-edges cells (normal and reduction), four
    /// intermediates with two in-edges each, seven edge operations.
    pub fn nb301() -> SpaceSpec {
        Self::fixed_template(
            "nb301",
            Template {
                intermediates: 4,
                in_edges_per_node: 2,
                reduction_label: "sum".into(),
            },
            &[
                "avg_pool_3x3",
                "dil_conv_3x3",
                "dil_conv_5x5",
                "max_pool_3x3",
                "sep_conv_3x3",
                "sep_conv_5x5",
                "skip_connect",
            ],
            2,
        )
        .expect("preset is valid")
    }

    /// `micro`: at most 3 vertices and 3 edges with the `nb101` operations.
    pub fn micro() -> SpaceSpec {
        Self::free_form("micro", 3, 3, &["c1", "c3", "mp"], 1).expect("preset is valid")
    }

    /// `micro5`: at most 5 vertices and 6 edges with the `nb101` operations.
    pub fn micro5() -> SpaceSpec {
        Self::free_form("micro5", 5, 6, &["c1", "c3", "mp"], 1).expect("preset is valid")
    }

    pub fn preset(name: &str) -> Option<SpaceSpec> {
        match name {
            "nb101" => Some(Self::nb101()),
            "nb301" => Some(Self::nb301()),
            "micro" => Some(Self::micro()),
            "micro5" => Some(Self::micro5()),
            _ => None,
        }
    }

    /// Parses a TOML space description.
    pub fn from_toml(text: &str) -> Result<SpaceSpec, SpaceError> {
        let cfg: SpaceConfig = toml::from_str(text)?;
        let name = cfg.name.unwrap_or_else(|| "custom".into());
        match cfg.regime.as_str() {
            "free-form" => {
                let (Some(v), Some(e)) = (cfg.max_vertices, cfg.max_edges) else {
                    return Err(SpaceError::Spec(
                        "free-form spaces need max_vertices and max_edges".into(),
                    ));
                };
                Self::build(name, v, e, cfg.op_labels, cfg.cells_per_architecture, Regime::FreeForm)
            }
            "fixed-template" => {
                let template = Template {
                    intermediates: cfg.intermediates.ok_or_else(|| {
                        SpaceError::Spec("fixed-template spaces need intermediates".into())
                    })?,
                    in_edges_per_node: cfg.in_edges_per_node.unwrap_or(2),
                    reduction_label: cfg.reduction_label.unwrap_or_else(|| "sum".into()),
                };
                let (v, e) = template_caps(&template);
                if cfg.max_vertices.is_some_and(|x| x != v) || cfg.max_edges.is_some_and(|x| x != e) {
                    return Err(SpaceError::Spec(format!(
                        "template implies max_vertices={v}, max_edges={e}"
                    )));
                }
                Self::build(
                    name,
                    v,
                    e,
                    cfg.op_labels,
                    cfg.cells_per_architecture,
                    Regime::FixedTemplate(template),
                )
            }
            other => Err(SpaceError::Spec(format!("unknown regime {other:?}"))),
        }
    }

    /// Loads a preset name (`nb101`, `nb301`, `micro`, `micro5`) or a TOML
    /// file path.
    pub fn load(name_or_path: &str) -> Result<SpaceSpec, SpaceError> {
        if let Some(spec) = Self::preset(name_or_path) {
            return Ok(spec);
        }
        let text = std::fs::read_to_string(Path::new(name_or_path))?;
        Self::from_toml(&text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn max_vertices(&self) -> usize {
        self.max_vertices
    }

    pub fn max_edges(&self) -> usize {
        self.max_edges
    }

    /// Operations a search move may assign (vertex labels in free-form
    /// spaces, edge operations in fixed-template spaces).
    pub fn op_labels(&self) -> &[String] {
        &self.op_labels
    }

    pub fn cells_per_architecture(&self) -> usize {
        self.cells_per_architecture
    }

    pub fn regime(&self) -> &Regime {
        &self.regime
    }

    pub fn template(&self) -> Option<&Template> {
        match &self.regime {
            Regime::FixedTemplate(t) => Some(t),
            Regime::FreeForm => None,
        }
    }

    /// Input vertices of every cell graph.
    pub fn num_inputs(&self) -> usize {
        match self.regime {
            Regime::FreeForm => 1,
            Regime::FixedTemplate(_) => 2,
        }
    }

    /// Interior labels a cell graph may carry.
    pub fn node_op_count(&self) -> usize {
        self.op_labels.len() + usize::from(self.template().is_some())
    }

    /// Label of the reduction vertices in converted fixed-template cells.
    pub fn reduction_label(&self) -> Option<Label> {
        self.template().map(|_| Label::op(self.op_labels.len()))
    }

    /// Width of the one-hot label group (role labels included).
    pub fn label_count(&self) -> usize {
        self.num_inputs() + 1 + self.node_op_count()
    }

    /// Position of `label` within the one-hot group.
    pub fn one_hot_index(&self, label: Label) -> Option<usize> {
        let inputs = self.num_inputs();
        match label {
            Label::INPUT => Some(0),
            Label::INPUT_AUX if inputs == 2 => Some(1),
            Label::OUTPUT => Some(inputs),
            l => l
                .op_index()
                .filter(|&i| i < self.node_op_count())
                .map(|i| inputs + 1 + i),
        }
    }

    pub fn label_from_one_hot(&self, index: usize) -> Option<Label> {
        let inputs = self.num_inputs();
        match index {
            0 => Some(Label::INPUT),
            1 if inputs == 2 => Some(Label::INPUT_AUX),
            i if i == inputs => Some(Label::OUTPUT),
            i if i < self.label_count() => Some(Label::op(i - inputs - 1)),
            _ => None,
        }
    }

    pub fn label_name(&self, label: Label) -> Option<&str> {
        match label {
            Label::INPUT => Some("in"),
            Label::INPUT_AUX => Some("in2"),
            Label::OUTPUT => Some("out"),
            l => {
                let i = l.op_index()?;
                if i < self.op_labels.len() {
                    Some(&self.op_labels[i])
                } else {
                    self.template()
                        .filter(|_| i == self.op_labels.len())
                        .map(|t| t.reduction_label.as_str())
                }
            }
        }
    }

    pub fn label_by_name(&self, name: &str) -> Option<Label> {
        match name {
            "in" => Some(Label::INPUT),
            "in2" => Some(Label::INPUT_AUX),
            "out" => Some(Label::OUTPUT),
            _ => {
                if let Some(i) = self.op_labels.iter().position(|l| l == name) {
                    return Some(Label::op(i));
                }
                self.template()
                    .filter(|t| t.reduction_label == name)
                    .map(|_| Label::op(self.op_labels.len()))
            }
        }
    }

    /// Renders a cell graph as `labels=in,c3,out;edges=0-1,1-2`.
    pub fn format_graph(&self, g: &CellGraph) -> String {
        let labels: Vec<&str> = g
            .labels()
            .iter()
            .map(|&l| self.label_name(l).unwrap_or("?"))
            .collect();
        let edges: Vec<String> = g.edges().iter().map(|(s, d)| format!("{s}-{d}")).collect();
        format!("labels={};edges={}", labels.join(","), edges.join(","))
    }

    pub fn parse_graph(&self, text: &str) -> Result<CellGraph, SpaceError> {
        let err = |msg: String| SpaceError::Parse { what: "cell graph", msg };
        let mut labels = None;
        let mut edges = None;
        for part in text.trim().split(';') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {part:?}")))?;
            match key.trim() {
                "labels" => {
                    let ls = value
                        .split(',')
                        .map(|n| {
                            self.label_by_name(n.trim())
                                .ok_or_else(|| err(format!("unknown label {n:?}")))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    labels = Some(ls);
                }
                "edges" => {
                    let es = value
                        .split(',')
                        .map(str::trim)
                        .filter(|e| !e.is_empty())
                        .map(|e| parse_pair(e, '-').ok_or_else(|| err(format!("bad edge {e:?}"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    edges = Some(es);
                }
                k => return Err(err(format!("unknown key {k:?}"))),
            }
        }
        let labels = labels.ok_or_else(|| err("missing labels".into()))?;
        let edges = edges.unwrap_or_default();
        Ok(CellGraph::new(labels, &edges)?)
    }

    /// Cells separated by ` | `; free-form cells use the graph form,
    /// fixed-template cells `opedges=0-2:op,1-2:op,...`.
    pub fn format_architecture(&self, arch: &Architecture) -> String {
        arch.cells()
            .iter()
            .map(|c| match c {
                Cell::Nodes(g) => self.format_graph(g),
                Cell::Edges { cell, .. } => self.format_edge_cell(cell),
            })
            .collect::<Vec<_>>()
            .join(" | ")
    }

    pub fn parse_architecture(&self, text: &str) -> Result<Architecture, SpaceError> {
        let cells = text
            .split('|')
            .map(|part| match self.regime {
                Regime::FreeForm => Ok(Cell::Nodes(self.parse_graph(part)?)),
                Regime::FixedTemplate(_) => Cell::from_edge_cell(self.parse_edge_cell(part)?, self),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let arch = Architecture::new(cells)?;
        if let Err(v) = arch.validate(self) {
            return Err(SpaceError::Graph(GraphError::Invalid(v)));
        }
        Ok(arch)
    }

    pub fn format_edge_cell(&self, cell: &EdgeCell) -> String {
        let ops: Vec<String> = cell
            .op_edges()
            .iter()
            .map(|e| {
                format!(
                    "{}-{}:{}",
                    e.src,
                    e.dst + EdgeCell::INPUTS,
                    self.op_labels.get(e.op).map_or("?", String::as_str)
                )
            })
            .collect();
        format!("opedges={}", ops.join(","))
    }

    pub fn parse_edge_cell(&self, text: &str) -> Result<EdgeCell, SpaceError> {
        let err = |msg: String| SpaceError::Parse { what: "edge cell", msg };
        let template = self.template().ok_or_else(|| err("space has no template".into()))?;
        let body = text
            .trim()
            .strip_prefix("opedges=")
            .ok_or_else(|| err("expected opedges=...".into()))?;
        let mut edges = Vec::new();
        for item in body.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (pair, op) = item
                .split_once(':')
                .ok_or_else(|| err(format!("bad op-edge {item:?}")))?;
            let (src, dst) = parse_pair(pair, '-').ok_or_else(|| err(format!("bad op-edge {item:?}")))?;
            let dst = dst
                .checked_sub(EdgeCell::INPUTS)
                .ok_or_else(|| err(format!("op-edge {item:?} targets an input")))?;
            let op = self
                .op_labels
                .iter()
                .position(|l| l == op.trim())
                .ok_or_else(|| err(format!("unknown operation {op:?}")))?;
            edges.push(OpEdge { src, dst, op });
        }
        EdgeCell::new(template, self.op_labels.len(), edges)
    }
}

fn template_caps(t: &Template) -> (usize, usize) {
    let op_vertices = t.intermediates * t.in_edges_per_node;
    (
        EdgeCell::INPUTS + op_vertices + t.intermediates + 1,
        2 * op_vertices + t.intermediates,
    )
}

fn parse_pair(s: &str, sep: char) -> Option<(usize, usize)> {
    let (a, b) = s.trim().split_once(sep)?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

/// Outcome of [`validate`].
pub type ValidationResult = Result<(), Violation>;

/// Checks a candidate cell against the space's rules and reports the first
/// violated one. Pure; never fails.
pub fn validate(graph: &CellGraph, spec: &SpaceSpec) -> ValidationResult {
    let n = graph.num_vertices();
    if n < 2 {
        return Err(Violation::TooFewVertices(n));
    }
    if n > spec.max_vertices {
        return Err(Violation::VertexCap {
            count: n,
            max: spec.max_vertices,
        });
    }
    let e = graph.num_edges();
    if e > spec.max_edges {
        return Err(Violation::EdgeCap {
            count: e,
            max: spec.max_edges,
        });
    }
    graph.check_placement()?;
    if graph.num_inputs() != spec.num_inputs() {
        return Err(Violation::Placement {
            vertex: graph.num_inputs().min(spec.num_inputs()),
        });
    }
    for (v, &l) in graph.labels().iter().enumerate() {
        if spec.one_hot_index(l).is_none() {
            return Err(Violation::UnknownLabel { vertex: v });
        }
    }
    graph.check_degrees()?;
    graph.check_connected()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nb101() -> SpaceSpec {
        SpaceSpec::nb101()
    }

    #[test]
    fn validate_examples() {
        let s = nb101();
        let ok = s.parse_graph("labels=in,c3,out;edges=0-1,1-2").unwrap();
        assert_eq!(validate(&ok, &s), Ok(()));
        let orphan = s.parse_graph("labels=in,c3,out;edges=0-2").unwrap();
        assert_eq!(validate(&orphan, &s), Err(Violation::InDegree { vertex: 1 }));
        let eight = s
            .parse_graph("labels=in,c1,c1,c1,c1,c1,c1,out;edges=0-1,1-2,2-3,3-4,4-5,5-6,6-7")
            .unwrap();
        assert_eq!(
            validate(&eight, &s),
            Err(Violation::VertexCap { count: 8, max: 7 })
        );
    }

    #[test]
    fn validate_edge_cap_and_alphabet() {
        let s = SpaceSpec::free_form("t", 4, 3, &["c1"], 1).unwrap();
        let dense = CellGraph::new(
            vec![Label::INPUT, Label::op(0), Label::op(0), Label::OUTPUT],
            &[(0, 1), (0, 2), (1, 3), (2, 3)],
        )
        .unwrap();
        assert_eq!(
            validate(&dense, &s),
            Err(Violation::EdgeCap { count: 4, max: 3 })
        );
        let alien = CellGraph::new(vec![Label::INPUT, Label::op(5), Label::OUTPUT], &[(0, 1), (1, 2)])
            .unwrap();
        assert_eq!(validate(&alien, &s), Err(Violation::UnknownLabel { vertex: 1 }));
    }

    #[test]
    fn validate_is_pure() {
        let s = nb101();
        let g = s.parse_graph("labels=in,c1,mp,out;edges=0-1,1-3,0-2").unwrap();
        assert_eq!(validate(&g, &s), validate(&g, &s));
    }

    #[test]
    fn text_round_trip() {
        let s = nb101();
        let text = "labels=in,c1,c3,out;edges=0-1,0-2,1-3,2-3";
        let g = s.parse_graph(text).unwrap();
        assert_eq!(s.format_graph(&g), text);
        assert!(s.parse_graph("labels=in,xx,out;edges=0-1,1-2").is_err());
        assert!(s.parse_graph("labels=in,c1,out;edges=2-1").is_err());
    }

    #[test]
    fn presets() {
        let a = nb101();
        assert_eq!((a.max_vertices(), a.max_edges(), a.label_count()), (7, 9, 5));
        let b = SpaceSpec::nb301();
        assert_eq!((b.max_vertices(), b.max_edges()), (15, 20));
        assert_eq!(b.label_count(), 2 + 1 + 8);
        assert_eq!(b.cells_per_architecture(), 2);
        assert_eq!(b.label_name(b.reduction_label().unwrap()), Some("sum"));
    }

    #[test]
    fn toml_config() {
        let s = SpaceSpec::from_toml(
            r#"
            name = "micro"
            max_vertices = 3
            max_edges = 3
            op_labels = ["c1", "c3", "mp"]
            "#,
        )
        .unwrap();
        assert_eq!(s.max_vertices(), 3);
        assert_eq!(s.regime(), &Regime::FreeForm);
        let t = SpaceSpec::from_toml(
            r#"
            regime = "fixed-template"
            op_labels = ["a", "b"]
            intermediates = 4
            cells_per_architecture = 2
            "#,
        )
        .unwrap();
        assert_eq!(t.max_vertices(), 15);
        assert!(SpaceSpec::from_toml("op_labels = []\nmax_vertices=3\nmax_edges=3").is_err());
        assert!(SpaceSpec::from_toml("op_labels = [\"in\"]\nmax_vertices=3\nmax_edges=3").is_err());
    }

    #[test]
    fn one_hot_layout() {
        let s = SpaceSpec::nb301();
        for i in 0..s.label_count() {
            let l = s.label_from_one_hot(i).unwrap();
            assert_eq!(s.one_hot_index(l), Some(i));
        }
        assert_eq!(s.label_from_one_hot(s.label_count()), None);
    }
}
