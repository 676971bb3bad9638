//! Directed network graphs: construction, validation, routing weights and
//! the plain-text edge-list format.
//!
//! Neighbor sets are stored both ways. Out-neighbors drive departures and
//! backpressure differentials; in-neighbors index the incoming-flow sums.
//! Keeping them separate is what makes data flow well-defined on a
//! directed grid.
//!
//! Topologies are immutable after construction and safe to share across
//! workers.

use std::fmt;

use thiserror::Error;

/// Dense node index in [0, N). Array-indexed state keyed by these ids is
/// what keeps quarter-million-node runs cheap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("grid must have at least 2 nodes (rows {rows} x cols {cols})")]
    GridTooSmall { rows: usize, cols: usize },
    #[error("node id {id} out of range for {num_nodes} nodes")]
    NodeOutOfRange { id: u64, num_nodes: usize },
    #[error("a topology needs at least one sink")]
    NoSinks,
    #[error("edge-list parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// An invariant violation found by [`Topology::validate`]. Violations are
/// data, not failures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    SelfLoop { node: NodeId },
    DuplicateEdge { from: NodeId, to: NodeId },
    NoOutNeighbors { node: NodeId },
    UnreachableSink { node: NodeId },
    SinkOutDegree { sink: NodeId, out_degree: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SelfLoop { node } => write!(f, "self-loop at node {node}"),
            Violation::DuplicateEdge { from, to } => {
                write!(f, "duplicate edge {from} -> {to}")
            }
            Violation::NoOutNeighbors { node } => {
                write!(f, "non-sink node {node} has no out-neighbors")
            }
            Violation::UnreachableSink { node } => {
                write!(f, "unreachable sink: node {node} has no directed path to a sink")
            }
            Violation::SinkOutDegree { sink, out_degree } => {
                write!(f, "sink out-degree violation: sink {sink} has out-degree {out_degree}")
            }
        }
    }
}

/// Directed graph with designated sink(s) and both neighbor directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    num_nodes: usize,
    sinks: Vec<NodeId>,
    is_sink: Vec<bool>,
    out: Vec<Vec<NodeId>>,
    inn: Vec<Vec<NodeId>>,
}

impl Topology {
    /// Build from an explicit edge list. Rejects only what cannot be
    /// represented (ids out of range, empty sink set); semantic problems
    /// are left for [`Topology::validate`] to report.
    pub fn from_edges(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (u32, u32)>,
        sinks: impl IntoIterator<Item = u32>,
    ) -> Result<Self, TopologyError> {
        let mut sink_ids: Vec<u32> = sinks.into_iter().collect();
        sink_ids.sort_unstable();
        sink_ids.dedup();
        if sink_ids.is_empty() {
            return Err(TopologyError::NoSinks);
        }
        let mut is_sink = vec![false; num_nodes];
        for &s in &sink_ids {
            if s as usize >= num_nodes {
                return Err(TopologyError::NodeOutOfRange {
                    id: s as u64,
                    num_nodes,
                });
            }
            is_sink[s as usize] = true;
        }
        let mut out = vec![Vec::new(); num_nodes];
        let mut inn = vec![Vec::new(); num_nodes];
        for (a, b) in edges {
            if a as usize >= num_nodes || b as usize >= num_nodes {
                return Err(TopologyError::NodeOutOfRange {
                    id: a.max(b) as u64,
                    num_nodes,
                });
            }
            out[a as usize].push(NodeId(b));
            inn[b as usize].push(NodeId(a));
        }
        // Deterministic neighbor order regardless of input order.
        for list in out.iter_mut().chain(inn.iter_mut()) {
            list.sort_unstable();
        }
        Ok(Self {
            num_nodes,
            sinks: sink_ids.into_iter().map(NodeId).collect(),
            is_sink,
            out,
            inn,
        })
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    pub fn sinks(&self) -> &[NodeId] {
        &self.sinks
    }

    #[inline]
    pub fn is_sink(&self, node: usize) -> bool {
        self.is_sink[node]
    }

    pub fn non_sink_count(&self) -> usize {
        self.num_nodes - self.sinks.len()
    }

    #[inline]
    pub fn out_neighbors(&self, node: usize) -> &[NodeId] {
        &self.out[node]
    }

    #[inline]
    pub fn in_neighbors(&self, node: usize) -> &[NodeId] {
        &self.inn[node]
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(i, js)| js.iter().map(move |&j| (NodeId(i as u32), j)))
    }

    /// Check every structural invariant and return the violations found.
    /// Sink reachability and sink out-degree are always checked; global
    /// acyclicity is not an invariant (only the grid builder guarantees
    /// it).
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        for node in 0..self.num_nodes {
            let id = NodeId(node as u32);
            let out = &self.out[node];
            for pair in out.windows(2) {
                if pair[0] == pair[1] {
                    violations.push(Violation::DuplicateEdge {
                        from: id,
                        to: pair[0],
                    });
                }
            }
            if out.iter().any(|&j| j.index() == node) {
                violations.push(Violation::SelfLoop { node: id });
            }
            if self.is_sink[node] {
                if !out.is_empty() {
                    violations.push(Violation::SinkOutDegree {
                        sink: id,
                        out_degree: out.len(),
                    });
                }
            } else if out.is_empty() {
                violations.push(Violation::NoOutNeighbors { node: id });
            }
        }
        // Reverse reachability from the sinks.
        let mut reaches = vec![false; self.num_nodes];
        let mut frontier: Vec<usize> = self.sinks.iter().map(|s| s.index()).collect();
        for &s in &frontier {
            reaches[s] = true;
        }
        while let Some(node) = frontier.pop() {
            for &src in &self.inn[node] {
                if !reaches[src.index()] {
                    reaches[src.index()] = true;
                    frontier.push(src.index());
                }
            }
        }
        for (node, reached) in reaches.iter().enumerate() {
            if !self.is_sink[node] && !reached {
                violations.push(Violation::UnreachableSink {
                    node: NodeId(node as u32),
                });
            }
        }
        violations
    }

    /// Serialize to the plain-text edge-list format:
    /// `N <num_nodes> SINKS <id...>` then one `i j` pair per line.
    pub fn to_edge_list_text(&self) -> String {
        let mut text = format!("N {} SINKS", self.num_nodes);
        for s in &self.sinks {
            text.push(' ');
            text.push_str(&s.to_string());
        }
        text.push('\n');
        for (i, j) in self.edges() {
            text.push_str(&format!("{i} {j}\n"));
        }
        text
    }

    pub fn from_edge_list_text(text: &str) -> Result<Self, TopologyError> {
        let mut lines = text.lines().enumerate();
        let (line_no, header) = lines
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| TopologyError::Parse {
                line: 1,
                reason: "empty input".into(),
            })?;
        let parse_err = |line: usize, reason: &str| TopologyError::Parse {
            line: line + 1,
            reason: reason.to_string(),
        };
        let mut tokens = header.split_whitespace();
        if tokens.next() != Some("N") {
            return Err(parse_err(line_no, "header must start with `N <num_nodes>`"));
        }
        let num_nodes: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(line_no, "missing or invalid node count"))?;
        if tokens.next() != Some("SINKS") {
            return Err(parse_err(line_no, "expected `SINKS <id...>` after node count"));
        }
        let sinks: Vec<u32> = tokens
            .map(|t| t.parse::<u32>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(line_no, "invalid sink id"))?;
        let mut edges = Vec::new();
        for (line_no, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let a = parts
                .next()
                .and_then(|t| t.parse::<u32>().ok())
                .ok_or_else(|| parse_err(line_no, "expected `i j` pair"))?;
            let b = parts
                .next()
                .and_then(|t| t.parse::<u32>().ok())
                .ok_or_else(|| parse_err(line_no, "expected `i j` pair"))?;
            if parts.next().is_some() {
                return Err(parse_err(line_no, "trailing tokens after edge pair"));
            }
            edges.push((a, b));
        }
        Self::from_edges(num_nodes, edges, sinks)
    }
}

/// Rows x cols directed grid, row-major ids, edges to the right and
/// downward neighbor, last node the unique sink.
pub fn build_directed_grid(rows: usize, cols: usize) -> Result<Topology, TopologyError> {
    if rows == 0 || cols == 0 || rows * cols < 2 {
        return Err(TopologyError::GridTooSmall { rows, cols });
    }
    let id = |r: usize, c: usize| (r * cols + c) as u32;
    let mut edges = Vec::with_capacity(rows * (cols - 1) + cols * (rows - 1));
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((id(r, c), id(r + 1, c)));
            }
        }
    }
    Topology::from_edges(rows * cols, edges, [(rows * cols - 1) as u32])
}

/// Per-edge routing fractions, aligned with each node's out-neighbor list.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingWeights {
    weights: Vec<Vec<f64>>,
}

impl RoutingWeights {
    /// Weight of the edge-position `slot` out of `node`.
    #[inline]
    pub fn weight_at(&self, node: usize, slot: usize) -> f64 {
        self.weights[node][slot]
    }

    /// Weight of edge (from, to), if present.
    pub fn weight(&self, topo: &Topology, from: usize, to: NodeId) -> Option<f64> {
        let slot = topo.out_neighbors(from).binary_search(&to).ok()?;
        Some(self.weights[from][slot])
    }

    pub fn out_sum(&self, node: usize) -> f64 {
        self.weights[node].iter().sum()
    }
}

/// Uniform routing: every out-edge of a node carries 1/out-degree, so each
/// non-sink node's weights sum to exactly 1.
pub fn uniform_routing(topo: &Topology) -> RoutingWeights {
    let weights = (0..topo.num_nodes())
        .map(|node| {
            let deg = topo.out_neighbors(node).len();
            if deg == 0 {
                Vec::new()
            } else {
                vec![1.0 / deg as f64; deg]
            }
        })
        .collect();
    RoutingWeights { weights }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::{RngStream, StreamKey};

    #[test]
    fn grid_100_nodes() {
        let topo = build_directed_grid(10, 10).unwrap();
        assert_eq!(topo.num_nodes(), 100);
        assert_eq!(topo.sinks(), &[NodeId(99)]);
        assert_eq!(topo.out_neighbors(0), &[NodeId(1), NodeId(10)]);
        assert!(topo.validate().is_empty());
    }

    #[test]
    fn grid_smallest() {
        let topo = build_directed_grid(1, 2).unwrap();
        assert_eq!(topo.num_nodes(), 2);
        assert_eq!(topo.sinks(), &[NodeId(1)]);
        assert_eq!(topo.out_neighbors(0), &[NodeId(1)]);
        assert!(topo.out_neighbors(1).is_empty());
    }

    #[test]
    fn grid_2x2_adjacency() {
        let topo = build_directed_grid(2, 2).unwrap();
        assert_eq!(topo.out_neighbors(0), &[NodeId(1), NodeId(2)]);
        assert_eq!(topo.out_neighbors(1), &[NodeId(3)]);
        assert_eq!(topo.out_neighbors(2), &[NodeId(3)]);
        assert_eq!(topo.sinks(), &[NodeId(3)]);
        assert_eq!(topo.in_neighbors(3), &[NodeId(1), NodeId(2)]);
    }

    #[test]
    fn grid_rejects_too_small() {
        assert!(build_directed_grid(1, 1).is_err());
        assert!(build_directed_grid(0, 5).is_err());
    }

    #[test]
    fn grid_closed_forms_and_validity() {
        for rows in 1..=20 {
            for cols in 1..=20 {
                if rows * cols < 2 {
                    continue;
                }
                let topo = build_directed_grid(rows, cols).unwrap();
                assert_eq!(topo.num_nodes(), rows * cols);
                assert_eq!(topo.num_edges(), rows * (cols - 1) + cols * (rows - 1));
                assert_eq!(topo.sinks(), &[NodeId((rows * cols - 1) as u32)]);
                assert!(topo.validate().is_empty(), "{rows}x{cols}");
            }
        }
    }

    #[test]
    fn uniform_weights_examples() {
        let topo = build_directed_grid(2, 2).unwrap();
        let w = uniform_routing(&topo);
        assert_eq!(w.weight(&topo, 0, NodeId(1)), Some(0.5));
        assert_eq!(w.weight(&topo, 0, NodeId(2)), Some(0.5));

        let topo = build_directed_grid(1, 2).unwrap();
        let w = uniform_routing(&topo);
        assert_eq!(w.weight(&topo, 0, NodeId(1)), Some(1.0));

        let topo = build_directed_grid(10, 10).unwrap();
        let w = uniform_routing(&topo);
        // Interior node: two out-edges of 0.5 each.
        let interior = 5 * 10 + 5;
        assert_eq!(topo.out_neighbors(interior).len(), 2);
        assert_eq!(w.weight_at(interior, 0), 0.5);
        assert_eq!(w.weight_at(interior, 1), 0.5);
    }

    #[test]
    fn uniform_weights_sum_to_one_on_random_grids() {
        let mut rng = RngStream::new(31, StreamKey::new(0, 0, crate::stochastic::Purpose::ControlPick, 0));
        for _ in 0..100 {
            let rows = (rng.next_u64() % 20 + 1) as usize;
            let cols = (rng.next_u64() % 20 + 1) as usize;
            if rows * cols < 2 {
                continue;
            }
            let topo = build_directed_grid(rows, cols).unwrap();
            let w = uniform_routing(&topo);
            for node in 0..topo.num_nodes() {
                if !topo.is_sink(node) {
                    assert!((w.out_sum(node) - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn validate_reports_unreachable_node() {
        // Node 1 is isolated: no out-edges and no path to the sink.
        let topo = Topology::from_edges(3, [(0u32, 2u32)], [2u32]).unwrap();
        let violations = topo.validate();
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::UnreachableSink { node } if node.index() == 1)));
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::NoOutNeighbors { node } if node.index() == 1)));
    }

    #[test]
    fn validate_reports_sink_out_edge() {
        let topo = Topology::from_edges(2, [(0u32, 1u32), (1u32, 0u32)], [1u32]).unwrap();
        let violations = topo.validate();
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::SinkOutDegree { sink, .. } if sink.index() == 1)));
        let text = violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        assert!(text.contains("sink out-degree"));
    }

    #[test]
    fn validate_reports_self_loop_and_duplicate() {
        let topo =
            Topology::from_edges(2, [(0u32, 0u32), (0u32, 1u32), (0u32, 1u32)], [1u32]).unwrap();
        let violations = topo.validate();
        assert!(violations.iter().any(|v| matches!(v, Violation::SelfLoop { .. })));
        assert!(violations.iter().any(|v| matches!(v, Violation::DuplicateEdge { .. })));
    }

    #[test]
    fn from_edges_rejects_bad_input() {
        assert_eq!(
            Topology::from_edges(2, [(0u32, 5u32)], [1u32]),
            Err(TopologyError::NodeOutOfRange { id: 5, num_nodes: 2 })
        );
        assert_eq!(
            Topology::from_edges(2, [(0u32, 1u32)], []),
            Err(TopologyError::NoSinks)
        );
    }

    #[test]
    fn edge_list_round_trip() {
        let topo = build_directed_grid(3, 4).unwrap();
        let text = topo.to_edge_list_text();
        let parsed = Topology::from_edge_list_text(&text).unwrap();
        assert_eq!(topo, parsed);
        assert!(text.starts_with("N 12 SINKS 11\n"));
    }

    #[test]
    fn edge_list_rejects_garbage() {
        assert!(Topology::from_edge_list_text("").is_err());
        assert!(Topology::from_edge_list_text("N x SINKS 1").is_err());
        assert!(Topology::from_edge_list_text("N 2 SINKS 1\n0\n").is_err());
        assert!(Topology::from_edge_list_text("N 2 SINKS 1\n0 1 7\n").is_err());
    }
}
