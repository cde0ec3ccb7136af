//! Canonical trees, reentrancy resolution, and the resolvability conditions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::unroll::{Direction, SlotGroup, UnrolledTree};
use super::DecomposeError;
use crate::algebra::{AmDepTree, AmType, Op, SGraph, SNode, SourceName, TreeEdge, TreeNode};
use crate::blobs::NormalizedGraph;
use crate::graph::{Edge, SemanticGraph};

/// Canonical constant of `v`: its blob edges in original orientation, one
/// unlabeled slot per group with source `ps(other)` and empty request.
pub(crate) fn canonical_constant(ng: &NormalizedGraph, groups: &[SlotGroup], v: &str) -> SGraph {
    let mut nodes = vec![SNode {
        id: v.to_string(),
        label: Some(ng.graph.label(v).expect("node exists").to_string()),
    }];
    let mut edges = Vec::new();
    let mut sources = BTreeMap::new();
    let mut ty = AmType::empty();
    for grp in groups.iter().filter(|g| g.owner == v) {
        if grp.other != v {
            nodes.push(SNode {
                id: grp.other.clone(),
                label: None,
            });
            let s = SourceName::placeholder(&grp.other);
            sources.insert(s.clone(), grp.other.clone());
            ty.insert(s, AmType::empty());
        }
        for &i in &grp.edges {
            edges.push(ng.original_edge(i).clone());
        }
    }
    SGraph::new(nodes, edges, v, sources, ty).expect("canonical constant is valid")
}

/// The unique tree over canonical constants for an unrolling. Forward edges
/// `n->m` become `APP_ps(m)`, backward edges `n->m` become `MOD_ps(n)`, and
/// REF leaves become empty-typed placeholders.
pub fn canonical_tree(ng: &NormalizedGraph, u: &UnrolledTree) -> AmDepTree {
    let mut nodes = BTreeMap::new();
    for (id, o) in &u.origin {
        let node = if u.is_ref(id) {
            TreeNode::reference(o)
        } else {
            TreeNode::new(canonical_constant(ng, &u.groups, id))
        };
        nodes.insert(id.clone(), node);
    }
    let edges = u
        .edges
        .iter()
        .map(|e| match e.direction {
            Direction::Forward => TreeEdge {
                parent: e.parent.clone(),
                child: e.child.clone(),
                op: Op::App,
                source: SourceName::placeholder(&u.origin[&e.child]),
            },
            Direction::Backward => TreeEdge {
                parent: e.parent.clone(),
                child: e.child.clone(),
                op: Op::Mod,
                source: SourceName::placeholder(&e.parent),
            },
        })
        .collect();
    AmDepTree::new(u.root.clone(), nodes, edges).expect("unrolling yields a tree")
}

/// REF leaves standing for graph node `y`.
pub fn ref_nodes(t: &AmDepTree, y: &str) -> Vec<String> {
    t.nodes()
        .iter()
        .filter(|(_, n)| n.reference.as_deref() == Some(y))
        .map(|(id, _)| id.clone())
        .collect()
}

/// Which nodes to move and where: `targets[y]` is the resolution target of `y`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionPlan {
    pub targets: BTreeMap<String, String>,
}

impl ResolutionPlan {
    /// Every node with REF leaves, targeted at the lowest common ancestor of
    /// the node and its REF leaves.
    pub fn lowest(t: &AmDepTree) -> Self {
        let ys: BTreeSet<&str> = t
            .nodes()
            .values()
            .filter_map(|n| n.reference.as_deref())
            .collect();
        let targets = ys
            .into_iter()
            .map(|y| {
                let refs = ref_nodes(t, y);
                let lca = t
                    .lca(std::iter::once(y).chain(refs.iter().map(String::as_str)))
                    .expect("nonempty set");
                (y.to_string(), lca)
            })
            .collect();
        ResolutionPlan { targets }
    }

    /// Edge-index paths from the target of `y` down to `y` and to each REF(y).
    pub fn paths(&self, t: &AmDepTree, y: &str) -> Option<Vec<Vec<usize>>> {
        let rt = self.targets.get(y)?;
        let mut out = vec![t.path_edges(rt, y)?];
        for r in ref_nodes(t, y) {
            out.push(t.path_edges(rt, &r)?);
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// The target does not dominate the node or one of its REF leaves.
    TargetNotAbove,
    /// The path ends in a MOD edge.
    ModBottom,
    /// A MOD edge on the path sits at a node with no directed path to the resolved node.
    NoDirectedPath,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub node: String,
    /// tree nodes from the target down to the path's bottom
    pub path: Vec<String>,
    pub condition: Condition,
    pub edge: (String, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvabilityReport {
    pub decomposable: bool,
    pub violations: Vec<Violation>,
}

/// Evaluates both path conditions for every planned node. `normalized` is
/// the graph whose directed paths witness interior MOD edges.
pub fn check_resolvable(
    t: &AmDepTree,
    plan: &ResolutionPlan,
    normalized: &SemanticGraph,
) -> ResolvabilityReport {
    let mut violations = Vec::new();
    for (y, rt) in &plan.targets {
        let bottoms: Vec<String> = std::iter::once(y.clone()).chain(ref_nodes(t, y)).collect();
        for bottom in bottoms {
            let Some(path) = t
                .node(rt)
                .and(t.node(&bottom))
                .and_then(|_| t.path_edges(rt, &bottom))
            else {
                violations.push(Violation {
                    node: y.clone(),
                    path: vec![rt.clone(), bottom.clone()],
                    condition: Condition::TargetNotAbove,
                    edge: (rt.clone(), bottom),
                });
                continue;
            };
            let mut nodes = vec![rt.clone()];
            nodes.extend(path.iter().map(|&i| t.edges()[i].child.clone()));
            let Some((&last, interior)) = path.split_last() else {
                continue;
            };
            let edge_pair = |i: usize| (t.edges()[i].parent.clone(), t.edges()[i].child.clone());
            if t.edges()[last].op == Op::Mod {
                violations.push(Violation {
                    node: y.clone(),
                    path: nodes.clone(),
                    condition: Condition::ModBottom,
                    edge: edge_pair(last),
                });
            }
            for &i in interior {
                let e = &t.edges()[i];
                if e.op == Op::Mod
                    && e.parent != *y
                    && e.child != *y
                    && !normalized.has_directed_path(&e.parent, y)
                {
                    violations.push(Violation {
                        node: y.clone(),
                        path: nodes.clone(),
                        condition: Condition::NoDirectedPath,
                        edge: edge_pair(i),
                    });
                }
            }
        }
    }
    ResolvabilityReport {
        decomposable: violations.is_empty(),
        violations,
    }
}

fn failed(node: &str, cause: impl ToString) -> DecomposeError {
    DecomposeError::ResolutionFailed {
        node: node.to_string(),
        cause: cause.to_string(),
    }
}

/// Unifies `add` into the request at `source` in the constant at `node`.
fn extend_request(
    t: &mut AmDepTree,
    node: &str,
    source: &SourceName,
    add: &AmType,
) -> Result<(), DecomposeError> {
    let c = &mut t
        .node_mut(node)
        .ok_or_else(|| failed(node, "missing node"))?
        .constant;
    let mut ty = c.ty().clone();
    let req = ty
        .request_mut(source)
        .ok_or_else(|| failed(node, format!("constant has no source {source}")))?;
    *req = req.unify(add).map_err(|e| failed(node, e))?;
    c.set_type(ty).map_err(|e| failed(node, e))
}

/// Moves nodes to their resolution targets, adding the requests that keep
/// their sources open along the way, and deletes REF leaves. Accepts targets
/// above the lowest common ancestor and planned nodes without REF leaves.
pub fn resolve(t: &AmDepTree, plan: &ResolutionPlan) -> Result<AmDepTree, DecomposeError> {
    if let Some(y) = t
        .nodes()
        .values()
        .filter_map(|n| n.reference.as_deref())
        .find(|y| !plan.targets.contains_key(*y))
    {
        return Err(failed(y, "REF'd node has no target"));
    }
    let mut t = t.clone();
    let mut pending: BTreeSet<String> = plan.targets.keys().cloned().collect();
    while !pending.is_empty() {
        // nodes lying on another pending node's path, bottoms excluded
        let mut blocked = BTreeSet::new();
        for x in &pending {
            let paths = plan
                .paths(&t, x)
                .ok_or_else(|| failed(x, "target is not above the node"))?;
            for p in paths {
                blocked.insert((x.clone(), plan.targets[x].clone()));
                for &i in p.iter().take(p.len().saturating_sub(1)) {
                    blocked.insert((x.clone(), t.edges()[i].child.clone()));
                }
            }
        }
        let y = pending
            .iter()
            .find(|y| !blocked.iter().any(|(x, n)| x != *y && n == *y))
            .cloned()
            .ok_or_else(|| {
                failed(
                    pending.iter().next().unwrap(),
                    "every pending node lies on another's path",
                )
            })?;

        #[cfg(debug_assertions)]
        let before = evaluate_merging_refs(&t).ok();
        let ps_y = SourceName::placeholder(&y);
        let rt = plan.targets[&y].clone();
        // A REF below y itself closes at a modifier of y, whose attach
        // source merges with y's root: nothing of y's type travels along.
        let tt = if rt == y {
            AmType::empty()
        } else {
            t.term_type(&y).map_err(|e| failed(&y, e))?
        };
        for p in plan.paths(&t, &y).expect("checked above") {
            for (k, &i) in p.iter().enumerate() {
                let e = t.edges()[i].clone();
                if e.op != Op::App {
                    continue;
                }
                if k + 1 == p.len() {
                    extend_request(&mut t, &e.parent, &e.source, &tt)?;
                } else {
                    let add: AmType = [(ps_y.clone(), tt.clone())].into_iter().collect();
                    extend_request(&mut t, &e.parent, &e.source, &add)?;
                }
            }
        }
        if rt != y {
            let i = t
                .parent_edge(&y)
                .ok_or_else(|| failed(&y, "node has no parent"))?;
            t.edges_mut()[i] = TreeEdge {
                parent: rt.clone(),
                child: y.clone(),
                op: Op::App,
                source: ps_y.clone(),
            };
        }
        for r in ref_nodes(&t, &y) {
            t.remove_node(&r);
        }
        t.validate().map_err(|e| failed(&y, e))?;
        #[cfg(debug_assertions)]
        if let Some(before) = before {
            let after = evaluate_merging_refs(&t)?;
            debug_assert!(
                crate::graph::is_isomorphic(&before, &after),
                "resolving {y} changed the evaluated graph"
            );
        }
        pending.remove(&y);
    }
    Ok(t)
}

/// Checks the plan first and resolves only if every condition holds.
pub fn resolve_extended(
    t: &AmDepTree,
    plan: &ResolutionPlan,
    normalized: &SemanticGraph,
) -> Result<AmDepTree, DecomposeError> {
    let report = check_resolvable(t, plan, normalized);
    if !report.decomposable {
        return Err(DecomposeError::NonDecomposable {
            graph: normalized.id.clone(),
            reason: super::NonDecomposable::Unresolvable(report),
        });
    }
    resolve(t, plan)
}

/// For each pair `(n->m MOD_ps(n), m->k MOD_ps(m))`, attaches `k` to `n` by
/// `MOD_ps(n)` and `m` below `k` by `APP_ps(m)`, extending `k`'s request at
/// `ps(m)` by the term type of `m`.
pub fn modify_swap(
    t: &AmDepTree,
    pairs: &[(TreeEdge, TreeEdge)],
) -> Result<AmDepTree, DecomposeError> {
    let bad = |m: String| DecomposeError::InvalidSwapPair(m);
    let mut used = BTreeSet::new();
    for (a, b) in pairs {
        if !used.insert((a.parent.clone(), a.child.clone()))
            || !used.insert((b.parent.clone(), b.child.clone()))
        {
            return Err(bad("an edge occurs in two pairs".into()));
        }
    }
    let mut t = t.clone();
    for (a, b) in pairs {
        let (n, m, k) = (&a.parent, &a.child, &b.child);
        let ps_n = SourceName::placeholder(n);
        let ps_m = SourceName::placeholder(m);
        let ia = t.edges().iter().position(|e| e == a);
        let ib = t.edges().iter().position(|e| e == b);
        let (Some(ia), Some(ib)) = (ia, ib) else {
            return Err(bad(format!("pair {n}->{m}->{k} is not in the tree")));
        };
        if a.op != Op::Mod
            || a.source != ps_n
            || b.op != Op::Mod
            || b.source != ps_m
            || b.parent != *m
        {
            return Err(bad(format!(
                "{n}->{m}->{k} is not two consecutive matching MOD edges"
            )));
        }
        let tm = t.term_type(m).map_err(|e| failed(m, e))?;
        t.edges_mut()[ia] = TreeEdge {
            parent: n.clone(),
            child: k.clone(),
            op: Op::Mod,
            source: ps_n,
        };
        t.edges_mut()[ib] = TreeEdge {
            parent: k.clone(),
            child: m.clone(),
            op: Op::App,
            source: ps_m.clone(),
        };
        extend_request(&mut t, k, &ps_m, &tm)?;
    }
    t.validate().map_err(|e| bad(e.to_string()))?;
    Ok(t)
}

/// Evaluates a tree that may still contain REF leaves, fusing each REF(y)
/// node into `y`.
pub fn evaluate_merging_refs(t: &AmDepTree) -> Result<SemanticGraph, DecomposeError> {
    let g = t
        .evaluate_sgraph(t.root())
        .and_then(|g| g.to_semantic_graph(""))
        .map_err(|e| failed(t.root(), e))?;
    let target = |id: &str| -> String {
        let label = g.label(id).unwrap_or_default();
        match label.strip_prefix("REF(").and_then(|r| r.strip_suffix(')')) {
            Some(y) if g.contains(y) => y.to_string(),
            _ => id.to_string(),
        }
    };
    let nodes = g
        .nodes()
        .iter()
        .filter(|n| target(&n.id) == n.id)
        .cloned()
        .collect();
    let edges = g
        .edges()
        .iter()
        .map(|e| Edge::new(target(&e.src), target(&e.tgt), &e.label))
        .collect();
    SemanticGraph::new("", nodes, edges, g.root()).map_err(|e| failed(t.root(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blobs::BlobHeuristics;
    use crate::decompose::{decompose_all, exact_key, prepare, unroll, DecomposeOptions, TieBreak};
    use crate::figures::figure;
    use crate::graph::is_isomorphic;

    fn canonical_of(g: &SemanticGraph) -> (NormalizedGraph, AmDepTree) {
        let ng = prepare(g, &BlobHeuristics::default()).unwrap();
        let c = canonical_tree(&ng, &unroll(&ng, TieBreak::Sorted).unwrap());
        (ng, c)
    }

    fn chain() -> SemanticGraph {
        SemanticGraph::from_parts(
            "chain",
            &[("a", "a"), ("b", "b"), ("c", "c")],
            &[("a", "b", "ARG0"), ("b", "c", "ARG0")],
            "a",
        )
        .unwrap()
    }

    fn edge(p: &str, c: &str, op: Op, src: &str) -> TreeEdge {
        TreeEdge {
            parent: p.into(),
            child: c.into(),
            op,
            source: SourceName::placeholder(src),
        }
    }

    #[test]
    fn canonical_sparkle_has_a_ref_under_glow() {
        let (_, c) = canonical_of(&figure("sparkle-and-glow").unwrap());
        let refs = ref_nodes(&c, "f");
        assert_eq!(refs.len(), 1);
        let e = &c.edges()[c.parent_edge(&refs[0]).unwrap()];
        assert_eq!((e.op, e.source.to_string()), (Op::App, "ps(f)".to_string()));
        assert_eq!(c.term_type(&refs[0]).unwrap(), AmType::empty());
    }

    #[test]
    fn default_plan_targets_the_lca() {
        let (ng, c) = canonical_of(&figure("sparkle-and-glow").unwrap());
        let plan = ResolutionPlan::lowest(&c);
        assert_eq!(plan.targets, BTreeMap::from([("f".into(), "a".into())]));
        assert!(check_resolvable(&c, &plan, &ng.graph).decomposable);
        assert_eq!(
            resolve(&c, &plan).unwrap(),
            resolve_extended(&c, &plan, &ng.graph).unwrap()
        );
    }

    #[test]
    fn ref_free_tree_is_unchanged() {
        let (_, c) = canonical_of(&figure("tiny-fairy").unwrap());
        assert_eq!(resolve(&c, &ResolutionPlan::lowest(&c)).unwrap(), c);
    }

    #[test]
    fn relative_clause_passes_through_a_mod_edge() {
        let (ng, c) = canonical_of(&figure("relative-clause").unwrap());
        assert!(c.edges().iter().any(|e| e.op == Op::Mod));
        assert!(check_resolvable(&c, &ResolutionPlan::lowest(&c), &ng.graph).decomposable);
    }

    #[test]
    fn ref_below_a_mod_bottom_is_condition_one() {
        let (ng, c) = canonical_of(&figure("tiny-fairy").unwrap());
        // lifting the modifier makes its path end in the MOD edge
        let plan = ResolutionPlan {
            targets: BTreeMap::from([("t".into(), "g".into())]),
        };
        let report = check_resolvable(&c, &plan, &ng.graph);
        assert!(!report.decomposable);
        assert_eq!(report.violations[0].condition, Condition::ModBottom);
        let err = resolve_extended(&c, &plan, &ng.graph).unwrap_err();
        assert!(err.is_non_decomposable());
    }

    #[test]
    fn target_must_dominate() {
        let (ng, c) = canonical_of(&chain());
        let plan = ResolutionPlan {
            targets: BTreeMap::from([("b".into(), "c".into())]),
        };
        let report = check_resolvable(&c, &plan, &ng.graph);
        assert_eq!(report.violations[0].condition, Condition::TargetNotAbove);
    }

    #[test]
    fn lifting_above_the_lca_keeps_the_graph() {
        let g = chain();
        let (ng, c) = canonical_of(&g);
        let plan = ResolutionPlan {
            targets: BTreeMap::from([("c".into(), "a".into())]),
        };
        let t = resolve_extended(&c, &plan, &ng.graph).unwrap();
        assert_eq!(t.parent("c"), Some("a"));
        assert_eq!(
            t.node("a").unwrap().constant.ty().to_string(),
            "[ps(b)[ps(c)]]"
        );
        assert!(t.check_well_typed().unwrap().is_empty());
        assert!(is_isomorphic(&g, &t.evaluate().unwrap()));
    }

    #[test]
    fn plan_without_a_refd_node_is_refused() {
        let (_, c) = canonical_of(&figure("sparkle-and-glow").unwrap());
        let err = resolve(&c, &ResolutionPlan::default()).unwrap_err();
        assert!(matches!(err, DecomposeError::ResolutionFailed { .. }));
    }

    fn relative_clause_trees() -> (AmDepTree, AmDepTree) {
        let g = figure("relative-clause").unwrap();
        let all =
            decompose_all(&g, &BlobHeuristics::default(), &DecomposeOptions::default()).unwrap();
        let (mut c, mut d) = (None, None);
        for t in all {
            if t.parent("g") == Some("b") {
                c = Some(t);
            } else {
                d = Some(t);
            }
        }
        (c.unwrap(), d.unwrap())
    }

    #[test]
    fn swap_turns_the_mod_chain_into_the_head_analysis() {
        let (c, d) = relative_clause_trees();
        let pair = (edge("f", "g", Op::Mod, "f"), edge("g", "b", Op::Mod, "g"));
        let swapped = modify_swap(&d, &[pair]).unwrap();
        assert_eq!(exact_key(&swapped), exact_key(&c));
        assert!(is_isomorphic(
            &swapped.evaluate().unwrap(),
            &d.evaluate().unwrap()
        ));
    }

    #[test]
    fn empty_swap_set_is_identity() {
        let (_, d) = relative_clause_trees();
        assert_eq!(modify_swap(&d, &[]).unwrap(), d);
    }

    #[test]
    fn invalid_swap_pairs() {
        let (c, d) = relative_clause_trees();
        // not two MOD edges
        let pair = (edge("f", "b", Op::Mod, "f"), edge("b", "g", Op::App, "g"));
        assert!(matches!(
            modify_swap(&c, &[pair]),
            Err(DecomposeError::InvalidSwapPair(_))
        ));
        // one edge used twice
        let pair = (edge("f", "g", Op::Mod, "f"), edge("g", "b", Op::Mod, "g"));
        assert!(matches!(
            modify_swap(&d, &[pair.clone(), pair]),
            Err(DecomposeError::InvalidSwapPair(_))
        ));
    }
}
