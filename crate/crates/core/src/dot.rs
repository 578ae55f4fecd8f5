//! Relation-graph export for visual inspection.
//!
//! Node size follows the sum of a label's relation values; an undirected
//! edge is drawn when the stronger direction of a pair reaches the edge
//! threshold, with width proportional to that value.

use std::fmt::Write as _;

use serde::Serialize;

use crate::corr::AdjacencyMatrix;
use crate::error::{Error, Result};

/// Edge filter used by default for relation graphs.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.25;

const PENWIDTH_PER_UNIT: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphNode {
    pub id: usize,
    pub label: String,
    /// Row sum of the adjacency.
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphEdge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

/// Nodes in index order; edges `(i, j)` with `i < j` in lexicographic order.
/// Self loops are never emitted.
pub fn relation_graph(
    adj: &AdjacencyMatrix,
    labels: Option<&[String]>,
    threshold: f64,
) -> Result<RelationGraph> {
    let n = adj.n();
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::shape("relation_graph labels", (l.len(), 1), (n, n)));
        }
    }
    let m = adj.matrix();
    let nodes = (0..n)
        .map(|i| GraphNode {
            id: i,
            label: labels.map_or_else(|| i.to_string(), |l| l[i].clone()),
            size: m.row(i).iter().sum(),
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let w = m.get(i, j).max(m.get(j, i));
            if w >= threshold {
                edges.push(GraphEdge {
                    source: i,
                    target: j,
                    weight: w,
                });
            }
        }
    }
    Ok(RelationGraph { nodes, edges })
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

impl RelationGraph {
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph relations {\n  node [shape=circle, fixedsize=true];\n");
        for node in &self.nodes {
            let width = 0.3 + 0.5 * node.size.abs();
            let _ = writeln!(
                out,
                "  n{} [label=\"{}\", weight=\"{:.6}\", width={:.4}];",
                node.id,
                escape(&node.label),
                node.size,
                width
            );
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  n{} -- n{} [weight=\"{:.6}\", penwidth={:.4}];",
                e.source,
                e.target,
                e.weight,
                PENWIDTH_PER_UNIT * e.weight
            );
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
