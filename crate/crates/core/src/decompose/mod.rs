//! Graph to AM dependency tree: blob partition, normalization, unrolling,
//! canonical tree, resolvability check, and reentrancy resolution.

mod explore;
mod resolve;
mod unroll;

pub use explore::{
    exact_key, forced_trees, operation_closure, resolution_plans, swap_candidates, swap_sets,
    MAX_EXPLORE_NODES,
};

pub use resolve::{
    canonical_tree, check_resolvable, evaluate_merging_refs, modify_swap, ref_nodes, resolve,
    resolve_extended, Condition, ResolutionPlan, ResolvabilityReport, Violation,
};
pub use unroll::{
    for_each_unrolling, slot_groups, unroll, unroll_all, unroll_with, BackwardPolicy, Branching,
    Direction, SearchLimits, SlotGroup, TieBreak, UnrolledEdge, UnrolledTree,
};

use std::collections::BTreeSet;
use std::fmt;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::AmDepTree;
use crate::blobs::{normalize_edges, partition_blobs, BlobHeuristics, NormalizedGraph};
use crate::graph::{Edge, SemanticGraph};

/// Why no tree was produced for a graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NonDecomposable {
    /// The normalized graph has a directed cycle through these nodes.
    DirectedCycle { nodes: Vec<String> },
    /// No tried unrolling satisfies the path conditions; the report is for the first one.
    Unresolvable(ResolvabilityReport),
}

impl fmt::Display for NonDecomposable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NonDecomposable::DirectedCycle { nodes } => {
                write!(f, "directed cycle through {nodes:?}")
            }
            NonDecomposable::Unresolvable(r) => {
                write!(f, "{} violated path condition(s)", r.violations.len())?;
                if let Some(v) = r.violations.first() {
                    write!(
                        f,
                        ", first: {:?} for {} at edge {}->{}",
                        v.condition, v.node, v.edge.0, v.edge.1
                    )?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum DecomposeError {
    #[error("graph {graph:?} is not decomposable: {reason}")]
    NonDecomposable {
        graph: String,
        reason: NonDecomposable,
    },
    #[error("resolution failed at {node:?}: {cause}")]
    ResolutionFailed { node: String, cause: String },
    #[error("invalid swap pair: {0}")]
    InvalidSwapPair(String),
    #[error("unrolling is not a tree: {0}")]
    NotATree(String),
    #[error("graph has {nodes} nodes, exhaustive search allows {bound}")]
    TooLarge { nodes: usize, bound: usize },
    #[error("decomposition of {graph:?} does not verify: {cause}")]
    VerificationFailed { graph: String, cause: String },
}

impl DecomposeError {
    pub fn is_non_decomposable(&self) -> bool {
        matches!(self, DecomposeError::NonDecomposable { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecomposeOptions {
    pub tie_break: TieBreak,
    /// Bounds for each fallback search after the queue-order unrolling fails.
    pub limits: SearchLimits,
}

/// Partition and normalize; rejects graphs whose normalized form has a
/// directed cycle (self loops are ignored; they stay inside one constant).
pub fn prepare(
    g: &SemanticGraph,
    heuristics: &BlobHeuristics,
) -> Result<NormalizedGraph, DecomposeError> {
    let ng = normalize_edges(g, &partition_blobs(g, heuristics));
    let no_loops: Vec<Edge> = ng
        .graph
        .edges()
        .iter()
        .filter(|e| e.src != e.tgt)
        .cloned()
        .collect();
    let loopless = SemanticGraph::new(
        g.id.clone(),
        ng.graph.nodes().to_vec(),
        no_loops,
        ng.graph.root(),
    )
    .expect("dropping self loops keeps validity");
    if let Some(nodes) = loopless.directed_cycle() {
        return Err(DecomposeError::NonDecomposable {
            graph: g.id.clone(),
            reason: NonDecomposable::DirectedCycle { nodes },
        });
    }
    Ok(ng)
}

/// Canonical tree, default plan and check for one unrolling; resolved tree
/// if the check passes.
fn try_unrolling(ng: &NormalizedGraph, u: &UnrolledTree) -> Result<AmDepTree, DecomposeError> {
    debug_assert!(
        u.merge_refs(ng).same_structure(&ng.graph),
        "merging REF leaves restores the normalized graph"
    );
    let c = canonical_tree(ng, u);
    let plan = ResolutionPlan::lowest(&c);
    resolve_extended(&c, &plan, &ng.graph)
}

pub(crate) fn verify(g: &SemanticGraph, t: &AmDepTree) -> Result<(), DecomposeError> {
    let fail = |cause: String| DecomposeError::VerificationFailed {
        graph: g.id.clone(),
        cause,
    };
    let ty = t.check_well_typed().map_err(|e| fail(e.to_string()))?;
    if !ty.is_empty() {
        return Err(fail(format!("root type {ty} is not empty")));
    }
    let h = t.evaluate().map_err(|e| fail(e.to_string()))?;
    if !crate::graph::is_isomorphic(g, &h) {
        return Err(fail("evaluation is not isomorphic to the input".into()));
    }
    Ok(())
}

/// Full pipeline for one graph. The result is well-typed, REF-free, and
/// evaluates to a graph isomorphic to `g`.
///
/// The queue-order unrolling is tried first. If it fails the path conditions
/// or its resolution does not verify, the search tries other entry edges
/// into unvisited components, then (bounded) any backward order. A
/// verification failure is reported only when no candidate works.
pub fn decompose(
    g: &SemanticGraph,
    heuristics: &BlobHeuristics,
    opts: &DecomposeOptions,
) -> Result<AmDepTree, DecomposeError> {
    let ng = prepare(g, heuristics)?;
    let first = unroll(&ng, opts.tie_break)?;
    let mut unresolvable = None;
    let mut unverified = None;
    let mut attempt = |u: &UnrolledTree| -> Result<Option<AmDepTree>, DecomposeError> {
        match try_unrolling(&ng, u).and_then(|t| verify(g, &t).map(|_| t)) {
            Ok(t) => Ok(Some(t)),
            Err(e) if e.is_non_decomposable() => {
                unresolvable.get_or_insert(e);
                Ok(None)
            }
            // the path conditions can pass on an unrolling that still fails to resolve
            Err(
                e @ (DecomposeError::VerificationFailed { .. }
                | DecomposeError::ResolutionFailed { .. }),
            ) => {
                unverified.get_or_insert(e);
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };
    if let Some(t) = attempt(&first)? {
        return Ok(t);
    }
    for branching in [Branching::EntryChoices, Branching::AllBackward] {
        let mut found = None;
        let mut failure = None;
        for_each_unrolling(&ng, opts.tie_break, branching, opts.limits, |u| {
            if u == first {
                return ControlFlow::Continue(());
            }
            match attempt(&u) {
                Ok(Some(t)) => {
                    found = Some(t);
                    ControlFlow::Break(())
                }
                Ok(None) => ControlFlow::Continue(()),
                Err(e) => {
                    failure = Some(e);
                    ControlFlow::Break(())
                }
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        if let Some(t) = found {
            log::debug!(
                "graph {:?}: queue-order unrolling rejected, {branching:?} search found another",
                g.id
            );
            return Ok(t);
        }
    }
    Err(unverified
        .or(unresolvable)
        .expect("at least one unrolling was tried"))
}

/// Resolved, verified trees of every backward queue order (bounded by
/// `opts.limits`), deduplicated by shape.
pub fn decompose_all(
    g: &SemanticGraph,
    heuristics: &BlobHeuristics,
    opts: &DecomposeOptions,
) -> Result<Vec<AmDepTree>, DecomposeError> {
    let ng = prepare(g, heuristics)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut first_err = None;
    for u in unroll_all(&ng, opts.tie_break, Branching::AllBackward, opts.limits)? {
        match try_unrolling(&ng, &u).and_then(|t| verify(g, &t).map(|_| t)) {
            Ok(t) => {
                if seen.insert(t.shape_key()) {
                    out.push(t);
                }
            }
            Err(e)
                if e.is_non_decomposable()
                    || matches!(
                        e,
                        DecomposeError::VerificationFailed { .. }
                            | DecomposeError::ResolutionFailed { .. }
                    ) =>
            {
                first_err.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    match (out.is_empty(), first_err) {
        (true, Some(e)) => Err(e),
        _ => Ok(out),
    }
}
