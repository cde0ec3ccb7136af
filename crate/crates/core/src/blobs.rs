//! Blob partition of a graph's edges and edge normalization.
//!
//! Every edge belongs to the blob of exactly one of its endpoints. Which one
//! is decided by a label table: exact labels first, then the longest matching
//! `prefix*` pattern, then the mandatory `*` row.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{reverse_label, Edge, SemanticGraph};

#[derive(Debug, Error)]
pub enum BlobTableError {
    #[error("line {line}: expected `pattern<TAB>src|tgt`, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("line {line}: duplicate pattern {pattern:?}")]
    Duplicate { line: usize, pattern: String },
    #[error("blob table has no `*` default row")]
    NoDefault,
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which endpoint of an edge owns it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Src,
    Tgt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobHeuristics {
    exact: Vec<(String, Side)>,
    /// sorted by decreasing prefix length
    prefixes: Vec<(String, Side)>,
    default: Side,
}

pub const DEFAULT_TABLE: &str = "\
# label\towner
ARG*\tsrc
op*\tsrc
snt*\tsrc
mod\ttgt
*\tsrc
";

impl Default for BlobHeuristics {
    fn default() -> Self {
        BlobHeuristics::parse(DEFAULT_TABLE).expect("built-in table parses")
    }
}

impl BlobHeuristics {
    pub fn parse(text: &str) -> Result<Self, BlobTableError> {
        let mut exact: Vec<(String, Side)> = Vec::new();
        let mut prefixes: Vec<(String, Side)> = Vec::new();
        let mut default = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || BlobTableError::BadLine {
                line: i + 1,
                text: line.to_string(),
            };
            let (pattern, side) = line.split_once('\t').ok_or_else(bad)?;
            let side = match side.trim() {
                "src" => Side::Src,
                "tgt" => Side::Tgt,
                _ => return Err(bad()),
            };
            let dup = BlobTableError::Duplicate {
                line: i + 1,
                pattern: pattern.to_string(),
            };
            if pattern == "*" {
                if default.replace(side).is_some() {
                    return Err(dup);
                }
            } else if let Some(prefix) = pattern.strip_suffix('*') {
                if prefixes.iter().any(|(p, _)| p == prefix) {
                    return Err(dup);
                }
                prefixes.push((prefix.to_string(), side));
            } else {
                if exact.iter().any(|(p, _)| p == pattern) {
                    return Err(dup);
                }
                exact.push((pattern.to_string(), side));
            }
        }
        prefixes.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(BlobHeuristics {
            exact,
            prefixes,
            default: default.ok_or(BlobTableError::NoDefault)?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BlobTableError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| BlobTableError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn owner_side(&self, label: &str) -> Side {
        if let Some((_, s)) = self.exact.iter().find(|(p, _)| p == label) {
            return *s;
        }
        if let Some((_, s)) = self
            .prefixes
            .iter()
            .find(|(p, _)| label.starts_with(p.as_str()))
        {
            return *s;
        }
        self.default
    }
}

/// Owner node per edge, index-aligned with `SemanticGraph::edges`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobPartition {
    pub owners: Vec<String>,
}

impl BlobPartition {
    pub fn owner(&self, edge_index: usize) -> &str {
        &self.owners[edge_index]
    }
}

pub fn partition_blobs(g: &SemanticGraph, heuristics: &BlobHeuristics) -> BlobPartition {
    BlobPartition {
        owners: g
            .edges()
            .iter()
            .map(|e| match heuristics.owner_side(&e.label) {
                Side::Src => e.src.clone(),
                Side::Tgt => e.tgt.clone(),
            })
            .collect(),
    }
}

/// A graph whose edges all point away from their blob owner.
///
/// `graph.edges()[i]` is the normalized form of `original.edges()[i]`.
#[derive(Debug, Clone)]
pub struct NormalizedGraph {
    pub graph: SemanticGraph,
    pub original: SemanticGraph,
    pub partition: BlobPartition,
}

impl NormalizedGraph {
    /// Original-orientation edge for normalized edge `i`.
    pub fn original_edge(&self, i: usize) -> &Edge {
        &self.original.edges()[i]
    }
}

/// Reverses every edge owned by its target, toggling the `-of` suffix.
///
/// # Panics
/// If `p` does not cover exactly the edges of `g`, or names a non-endpoint.
pub fn normalize_edges(g: &SemanticGraph, p: &BlobPartition) -> NormalizedGraph {
    assert_eq!(
        p.owners.len(),
        g.edge_count(),
        "partition does not cover the edge set"
    );
    let edges = g
        .edges()
        .iter()
        .zip(&p.owners)
        .map(|(e, owner)| {
            if *owner == e.src {
                e.clone()
            } else {
                assert_eq!(*owner, e.tgt, "owner is not an endpoint of {e:?}");
                Edge::new(e.tgt.clone(), e.src.clone(), reverse_label(&e.label))
            }
        })
        .collect();
    let graph = SemanticGraph::new(g.id.clone(), g.nodes().to_vec(), edges, g.root())
        .expect("reversal preserves validity");
    NormalizedGraph {
        graph,
        original: g.clone(),
        partition: p.clone(),
    }
}
