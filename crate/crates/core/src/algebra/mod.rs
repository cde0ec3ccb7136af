//! The Apply-Modify algebra over typed s-graphs.

mod generate;
mod sgraph;
mod tree;
mod types;

pub use generate::{default_sources, gen_random_tree, GeneratorConfig};
pub use sgraph::{apply, modify, SGraph, SNode};
pub use tree::{AmDepTree, Op, TreeEdge, TreeNode, Typing};
pub use types::{ty, AmType, SourceName, TypeParseError, MAX_TYPE_DEPTH};

use thiserror::Error;

use crate::graph::GraphError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlgebraError {
    #[error("{0} is not a top-level source")]
    MissingSource(SourceName),
    #[error("request at {name} is {expected} but the argument has type {actual}")]
    RequestMismatch {
        name: SourceName,
        expected: AmType,
        actual: AmType,
    },
    #[error("source {0} carries two different requests")]
    RequestClash(SourceName),
    #[error("modifier source {0} has a nonempty request")]
    NonEmptyModRequest(SourceName),
    #[error("modifier would add sources {0:?} to the head type")]
    ModAddsSources(Vec<SourceName>),
    #[error("merging node {node:?} joins labels {a:?} and {b:?}")]
    LabelClash { node: String, a: String, b: String },
    #[error("type depth {depth} exceeds bound {bound}")]
    TypeTooDeep { depth: usize, bound: usize },
    #[error("subtree at {node:?} is not well-typed: {cause}")]
    NotWellTyped {
        node: String,
        cause: Box<AlgebraError>,
    },
    #[error("evaluation ends with nonempty type {0}")]
    NonEmptyRootType(AmType),
    #[error("invalid constant: {0}")]
    InvalidConstant(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("node {0:?} is still unlabeled after evaluation")]
    UnlabeledNode(String),
    #[error("no valid tree after {0} attempts")]
    GenerationExhausted(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}
