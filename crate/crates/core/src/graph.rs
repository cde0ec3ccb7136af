//! Rooted, labeled semantic graphs and corpus I/O.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("edge endpoint {0:?} is not a node of the graph")]
    DanglingEndpoint(String),
    #[error("root {0:?} is not a node of the graph")]
    MissingRoot(String),
    #[error("graph has no nodes")]
    Empty,
    #[error("graph is disconnected: node {0:?} is unreachable from the root")]
    Disconnected(String),
    #[error("parallel edge {src:?} -{label}-> {tgt:?} occurs more than once")]
    ParallelEdge {
        src: String,
        tgt: String,
        label: String,
    },
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("graph {graph_id:?}: {source}")]
    Graph {
        graph_id: String,
        #[source]
        source: GraphError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub label: String,
}

impl Node {
    pub fn new(id: impl Into<String>, label: impl Into<String>) -> Self {
        Node {
            id: id.into(),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub tgt: String,
    pub label: String,
}

impl Edge {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>, label: impl Into<String>) -> Self {
        Edge {
            src: src.into(),
            tgt: tgt.into(),
            label: label.into(),
        }
    }
}

/// A rooted, node- and edge-labeled directed graph.
///
/// Construction validates that the root and all edge endpoints exist, that
/// the graph is connected when edge directions are ignored, and that no
/// `(src, tgt, label)` triple occurs twice. Node and edge order is preserved
/// as given.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SemanticGraph {
    pub id: String,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    root: String,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct RawGraph {
    id: String,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    root: String,
}

impl<'de> Deserialize<'de> for SemanticGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawGraph::deserialize(d)?;
        SemanticGraph::new(raw.id.clone(), raw.nodes, raw.edges, raw.root)
            .map_err(|e| serde::de::Error::custom(format!("graph {:?}: {e}", raw.id)))
    }
}

impl SemanticGraph {
    pub fn new(
        id: impl Into<String>,
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        root: impl Into<String>,
    ) -> Result<Self, GraphError> {
        let root = root.into();
        if nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
        }
        if !index.contains_key(&root) {
            return Err(GraphError::MissingRoot(root));
        }
        let mut seen = BTreeSet::new();
        for e in &edges {
            for end in [&e.src, &e.tgt] {
                if !index.contains_key(end) {
                    return Err(GraphError::DanglingEndpoint(end.clone()));
                }
            }
            if !seen.insert((&e.src, &e.tgt, &e.label)) {
                return Err(GraphError::ParallelEdge {
                    src: e.src.clone(),
                    tgt: e.tgt.clone(),
                    label: e.label.clone(),
                });
            }
        }
        let g = SemanticGraph {
            id: id.into(),
            nodes,
            edges,
            root,
            index,
        };
        if let Some(lost) = g.first_unreachable() {
            return Err(GraphError::Disconnected(lost));
        }
        Ok(g)
    }

    /// Convenience constructor from `(id, label)` and `(src, tgt, label)` tuples.
    pub fn from_parts(
        id: &str,
        nodes: &[(&str, &str)],
        edges: &[(&str, &str, &str)],
        root: &str,
    ) -> Result<Self, GraphError> {
        SemanticGraph::new(
            id,
            nodes
                .iter()
                .map(|(i, l)| Node {
                    id: i.to_string(),
                    label: l.to_string(),
                })
                .collect(),
            edges
                .iter()
                .map(|(s, t, l)| Edge::new(*s, *t, *l))
                .collect(),
            root,
        )
    }

    fn first_unreachable(&self) -> Option<String> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            let (s, t) = (self.index[&e.src], self.index[&e.tgt]);
            adj[s].push(t);
            adj[t].push(s);
        }
        let mut seen = vec![false; self.nodes.len()];
        let start = self.index[&self.root];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for &m in &adj[n] {
                if !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        seen.iter()
            .position(|s| !s)
            .map(|i| self.nodes[i].id.clone())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn label(&self, node: &str) -> Option<&str> {
        self.index.get(node).map(|&i| self.nodes[i].label.as_str())
    }

    pub fn contains(&self, node: &str) -> bool {
        self.index.contains_key(node)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Same graph with a different id.
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Equality of node, edge and root sets, ignoring order and graph id.
    pub fn same_structure(&self, other: &SemanticGraph) -> bool {
        let sorted = |g: &SemanticGraph| {
            let mut n = g.nodes.clone();
            let mut e = g.edges.clone();
            n.sort();
            e.sort();
            (n, e)
        };
        self.root == other.root && sorted(self) == sorted(other)
    }

    /// True when the graph, read as a directed graph, has no cycle.
    pub fn is_acyclic(&self) -> bool {
        self.directed_cycle().is_none()
    }

    /// Nodes of some directed cycle, if one exists.
    pub fn directed_cycle(&self) -> Option<Vec<String>> {
        let n = self.nodes.len();
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &self.edges {
            out[self.index[&e.src]].push(self.index[&e.tgt]);
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; n];
        let mut parent = vec![usize::MAX; n];
        for start in 0..n {
            if state[start] != 0 {
                continue;
            }
            let mut stack = vec![(start, 0usize)];
            state[start] = 1;
            while let Some(&mut (v, ref mut k)) = stack.last_mut() {
                if *k < out[v].len() {
                    let w = out[v][*k];
                    *k += 1;
                    match state[w] {
                        0 => {
                            state[w] = 1;
                            parent[w] = v;
                            stack.push((w, 0));
                        }
                        1 => {
                            let mut cycle = vec![self.nodes[w].id.clone()];
                            let mut x = v;
                            while x != w {
                                cycle.push(self.nodes[x].id.clone());
                                x = parent[x];
                            }
                            cycle.reverse();
                            return Some(cycle);
                        }
                        _ => {}
                    }
                } else {
                    state[v] = 2;
                    stack.pop();
                }
            }
        }
        None
    }

    /// True when a directed path of length >= 0 leads from `from` to `to`.
    pub fn has_directed_path(&self, from: &str, to: &str) -> bool {
        if from == to {
            return true;
        }
        let mut seen = BTreeSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(v) = queue.pop_front() {
            for e in self.edges.iter().filter(|e| e.src == v) {
                if e.tgt == to {
                    return true;
                }
                if seen.insert(e.tgt.as_str()) {
                    queue.push_back(e.tgt.as_str());
                }
            }
        }
        false
    }
}

/// Suffix marking a reversed edge label.
pub const OF_SUFFIX: &str = "-of";

/// Reverses the `-of` convention: strips the suffix if present, appends it otherwise.
pub fn reverse_label(label: &str) -> String {
    match label.strip_suffix(OF_SUFFIX) {
        Some(base) => base.to_string(),
        None => format!("{label}{OF_SUFFIX}"),
    }
}

/// Reads a corpus file: a JSON array of graphs.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<SemanticGraph>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text)
}

pub fn parse_corpus(text: &str) -> Result<Vec<SemanticGraph>, CorpusError> {
    let raw: Vec<RawGraph> = serde_json::from_str(text)?;
    raw.into_iter()
        .map(|r| {
            let id = r.id.clone();
            for e in r.edges.iter().filter(|e| e.label.ends_with(OF_SUFFIX)) {
                // normalization strips rather than doubles the suffix
                log::warn!(
                    "graph {:?}: input edge label {:?} already ends in {:?}",
                    id,
                    e.label,
                    OF_SUFFIX
                );
            }
            SemanticGraph::new(r.id, r.nodes, r.edges, r.root).map_err(|source| {
                CorpusError::Graph {
                    graph_id: id,
                    source,
                }
            })
        })
        .collect()
}

pub fn corpus_to_string(graphs: &[SemanticGraph]) -> String {
    serde_json::to_string_pretty(graphs).expect("graphs serialize")
}

pub fn write_corpus(graphs: &[SemanticGraph], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, corpus_to_string(graphs)).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Tests whether a bijection between the node sets maps root to root and
/// preserves node labels and labeled edges.
pub fn is_isomorphic(g1: &SemanticGraph, g2: &SemanticGraph) -> bool {
    crate::iso::isomorphism(g1, g2).is_some()
}

/// Label multiset of a graph's nodes, used by a few cheap prechecks.
pub(crate) fn label_histogram(g: &SemanticGraph) -> BTreeMap<&str, usize> {
    let mut h = BTreeMap::new();
    for n in &g.nodes {
        *h.entry(n.label.as_str()).or_default() += 1;
    }
    h
}
