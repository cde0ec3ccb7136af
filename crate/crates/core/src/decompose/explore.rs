//! Exhaustive searches for tiny graphs.
//!
//! `forced_trees` enumerates every tree shape over the blob constants. Once a
//! shape is fixed, slot names are fixed (the slot filled by node `x` is
//! `ps(x)`) and so is every request: a source `ps(x)` must be empty-requested
//! where `x` is an ancestor (it closes at a modifier of `x`) and must carry
//! the full term type of `x` everywhere else. So each shape admits at most
//! one typing, and the search is complete over single-node constants with
//! placeholder sources.
//!
//! `operation_closure` instead starts from the canonical tree of every
//! unrolling and applies every set of modify swaps and every resolution plan.

use std::collections::{BTreeMap, BTreeSet};

use super::resolve::canonical_constant;
use super::unroll::{slot_groups, unroll_all, Branching, SearchLimits};
use super::{
    canonical_tree, modify_swap, prepare, resolve_extended, verify, DecomposeError, ResolutionPlan,
};
use crate::algebra::{AmDepTree, AmType, Op, SGraph, SourceName, TreeEdge, TreeNode};
use crate::blobs::BlobHeuristics;
use crate::graph::SemanticGraph;

/// Graphs above this many nodes are refused.
pub const MAX_EXPLORE_NODES: usize = 6;

/// Identity of a tree including node ids: sorted edges plus every constant's
/// type in saturated form.
pub fn exact_key(t: &AmDepTree) -> String {
    let mut edges: Vec<String> = t
        .edges()
        .iter()
        .map(|e| format!("{}-{}_{}->{}", e.parent, e.op, e.source, e.child))
        .collect();
    edges.sort();
    let types: Vec<String> = t
        .nodes()
        .iter()
        .map(|(id, n)| format!("{id}:{}", n.constant.ty().saturated()))
        .collect();
    format!("{} | {}", edges.join(" "), types.join(" "))
}

fn check_size(g: &SemanticGraph) -> Result<(), DecomposeError> {
    if g.node_count() > MAX_EXPLORE_NODES {
        return Err(DecomposeError::TooLarge {
            nodes: g.node_count(),
            bound: MAX_EXPLORE_NODES,
        });
    }
    Ok(())
}

fn insert_verified(g: &SemanticGraph, t: AmDepTree, out: &mut BTreeMap<String, AmDepTree>) {
    if verify(g, &t).is_ok() {
        out.entry(exact_key(&t)).or_insert(t);
    }
}

/// Shape under test: `parent[i]` and op for every non-root node index.
struct Shape<'a> {
    ids: &'a [String],
    root: usize,
    parent: Vec<Option<(usize, Op)>>,
    slots: &'a [Vec<usize>],
}

impl Shape<'_> {
    /// Ancestor sets (strict), or None if the parent map has a cycle.
    fn ancestors(&self) -> Option<Vec<BTreeSet<usize>>> {
        let n = self.ids.len();
        let mut out = vec![BTreeSet::new(); n];
        for (v, anc) in out.iter_mut().enumerate() {
            let mut cur = v;
            while let Some((p, _)) = self.parent[cur] {
                if !anc.insert(p) || anc.len() > n {
                    return None;
                }
                cur = p;
            }
            if cur != self.root {
                return None;
            }
        }
        Some(out)
    }

    /// Term type of the subtree at `x`; None on a cyclic dependency.
    fn term_type(
        &self,
        x: usize,
        anc: &[BTreeSet<usize>],
        memo: &mut BTreeMap<usize, AmType>,
        busy: &mut BTreeSet<usize>,
    ) -> Option<AmType> {
        if let Some(t) = memo.get(&x) {
            return Some(t.clone());
        }
        if !busy.insert(x) {
            return None;
        }
        let inside = |c: usize| c == x || anc[c].contains(&x);
        let mut open = BTreeSet::new();
        for c in (0..self.ids.len()).filter(|&c| inside(c)) {
            open.extend(self.slots[c].iter().copied().filter(|&z| !inside(z)));
        }
        let mut ty = AmType::empty();
        for z in open {
            let req = if anc[x].contains(&z) {
                AmType::empty()
            } else {
                self.term_type(z, anc, memo, busy)?
            };
            ty.insert(SourceName::placeholder(&self.ids[z]), req);
        }
        busy.remove(&x);
        memo.insert(x, ty.clone());
        Some(ty)
    }

    fn build(&self, constants: &[SGraph]) -> Option<AmDepTree> {
        let anc = self.ancestors()?;
        let mut memo = BTreeMap::new();
        let mut nodes = BTreeMap::new();
        for (c, constant) in constants.iter().enumerate() {
            let mut ty = AmType::empty();
            for &x in &self.slots[c] {
                let req = if anc[c].contains(&x) {
                    AmType::empty()
                } else {
                    self.term_type(x, &anc, &mut memo, &mut BTreeSet::new())?
                };
                ty.insert(SourceName::placeholder(&self.ids[x]), req);
            }
            let mut constant = constant.clone();
            constant.set_type(ty).ok()?;
            nodes.insert(self.ids[c].clone(), TreeNode::new(constant));
        }
        let edges = (0..self.ids.len())
            .filter_map(|v| {
                let (p, op) = self.parent[v]?;
                let source = match op {
                    Op::App => SourceName::placeholder(&self.ids[v]),
                    Op::Mod => SourceName::placeholder(&self.ids[p]),
                };
                Some(TreeEdge {
                    parent: self.ids[p].clone(),
                    child: self.ids[v].clone(),
                    op,
                    source,
                })
            })
            .collect();
        AmDepTree::new(self.ids[self.root].clone(), nodes, edges).ok()
    }
}

/// Every well-typed tree over the blob constants of `g` with placeholder
/// sources that evaluates to `g`, keyed by [`exact_key`].
pub fn forced_trees(
    g: &SemanticGraph,
    heuristics: &BlobHeuristics,
) -> Result<BTreeMap<String, AmDepTree>, DecomposeError> {
    check_size(g)?;
    let ng = match prepare(g, heuristics) {
        Err(e) if e.is_non_decomposable() => return Ok(BTreeMap::new()),
        r => r?,
    };
    let groups = slot_groups(&ng);
    let ids: Vec<String> = ng.graph.nodes().iter().map(|n| n.id.clone()).collect();
    let index: BTreeMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();
    let constants: Vec<SGraph> = ids
        .iter()
        .map(|v| canonical_constant(&ng, &groups, v))
        .collect();
    let slots: Vec<Vec<usize>> = constants
        .iter()
        .map(|c| {
            c.ty()
                .names()
                .filter_map(|s| s.placeholder_target().map(|x| index[x]))
                .collect()
        })
        .collect();
    let root = index[ng.graph.root()];
    let n = ids.len();
    let others: Vec<usize> = (0..n).filter(|&v| v != root).collect();
    let choices: Vec<Vec<(usize, Op)>> = others
        .iter()
        .map(|&v| {
            (0..n)
                .filter(|&p| p != v)
                .flat_map(|p| [(p, Op::App), (p, Op::Mod)])
                .collect()
        })
        .collect();
    let mut out = BTreeMap::new();
    let mut digits = vec![0usize; others.len()];
    loop {
        let mut parent = vec![None; n];
        for (k, &v) in others.iter().enumerate() {
            parent[v] = Some(choices[k][digits[k]]);
        }
        let shape = Shape {
            ids: &ids,
            root,
            parent,
            slots: &slots,
        };
        if let Some(t) = shape.build(&constants) {
            insert_verified(g, t, &mut out);
        }
        // odometer step
        let mut k = 0;
        loop {
            if k == digits.len() {
                return Ok(out);
            }
            digits[k] += 1;
            if digits[k] < choices[k].len() {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
    }
}

/// Pairs `(n->m MOD_ps(n), m->k MOD_ps(m))` of consecutive modify edges.
pub fn swap_candidates(t: &AmDepTree) -> Vec<(TreeEdge, TreeEdge)> {
    let mods: Vec<&TreeEdge> = t
        .edges()
        .iter()
        .filter(|e| e.op == Op::Mod && e.source == SourceName::placeholder(&e.parent))
        .collect();
    let mut out = Vec::new();
    for a in &mods {
        for b in mods.iter().filter(|b| b.parent == a.child) {
            out.push(((*a).clone(), (*b).clone()));
        }
    }
    out
}

/// Every set of swap candidates in which no edge occurs twice, the empty set first.
pub fn swap_sets(t: &AmDepTree) -> Vec<Vec<(TreeEdge, TreeEdge)>> {
    fn go(
        cands: &[(TreeEdge, TreeEdge)],
        k: usize,
        cur: &mut Vec<(TreeEdge, TreeEdge)>,
        out: &mut Vec<Vec<(TreeEdge, TreeEdge)>>,
    ) {
        if k == cands.len() {
            out.push(cur.clone());
            return;
        }
        go(cands, k + 1, cur, out);
        let (a, b) = &cands[k];
        let clash = cur
            .iter()
            .any(|(x, y)| [x, y].iter().any(|e| *e == a || *e == b));
        if !clash {
            cur.push(cands[k].clone());
            go(cands, k + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(&swap_candidates(t), 0, &mut Vec::new(), &mut out);
    out
}

/// Every plan whose node set contains all REF'd nodes and whose targets are
/// at or above the lowest common ancestor; other nodes are either left out
/// or lifted to a strict ancestor.
pub fn resolution_plans(t: &AmDepTree) -> Vec<ResolutionPlan> {
    let lowest = ResolutionPlan::lowest(t);
    let mut options: Vec<(String, Vec<Option<String>>)> = Vec::new();
    for id in t
        .nodes()
        .keys()
        .filter(|id| !t.node(id).is_some_and(TreeNode::is_ref))
    {
        if id == t.root() && !lowest.targets.contains_key(id) {
            continue;
        }
        let opts: Vec<Option<String>> = match lowest.targets.get(id) {
            Some(lca) => t.ancestors(lca).into_iter().map(Some).collect(),
            None => {
                let mut anc = t.ancestors(id);
                anc.pop();
                std::iter::once(None)
                    .chain(anc.into_iter().map(Some))
                    .collect()
            }
        };
        options.push((id.clone(), opts));
    }
    let mut plans = vec![ResolutionPlan::default()];
    for (id, opts) in options {
        plans = plans
            .into_iter()
            .flat_map(|p| {
                let id = &id;
                opts.iter().map(move |o| {
                    let mut p = p.clone();
                    if let Some(rt) = o {
                        p.targets.insert(id.clone(), rt.clone());
                    }
                    p
                })
            })
            .collect();
    }
    plans
}

/// Verified trees reachable from the canonical tree of any unrolling by a
/// set of modify swaps followed by an extended resolution, keyed by [`exact_key`].
pub fn operation_closure(
    g: &SemanticGraph,
    heuristics: &BlobHeuristics,
) -> Result<BTreeMap<String, AmDepTree>, DecomposeError> {
    check_size(g)?;
    let ng = match prepare(g, heuristics) {
        Err(e) if e.is_non_decomposable() => return Ok(BTreeMap::new()),
        r => r?,
    };
    let limits = SearchLimits {
        unrollings: usize::MAX,
        states: usize::MAX,
    };
    let mut out = BTreeMap::new();
    for u in unroll_all(&ng, Default::default(), Branching::AllBackward, limits)? {
        let c = canonical_tree(&ng, &u);
        for m in swap_sets(&c) {
            let Ok(t) = modify_swap(&c, &m) else {
                continue;
            };
            for plan in resolution_plans(&t) {
                if let Ok(r) = resolve_extended(&t, &plan, &ng.graph) {
                    insert_verified(g, r, &mut out);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::{decompose_all, DecomposeOptions};
    use crate::figures::{figure, FIGURE_IDS};

    #[test]
    fn figures_agree_with_brute_force() {
        let h = BlobHeuristics::default();
        for id in FIGURE_IDS {
            let g = figure(id).unwrap();
            let forced = forced_trees(&g, &h).unwrap();
            let closure = operation_closure(&g, &h).unwrap();
            assert_eq!(
                forced.keys().collect::<Vec<_>>(),
                closure.keys().collect::<Vec<_>>(),
                "{id}"
            );
        }
        // both relative-clause analyses, nothing else
        let g = figure("relative-clause").unwrap();
        assert_eq!(forced_trees(&g, &h).unwrap().len(), 2);
        let all = decompose_all(&g, &h, &DecomposeOptions::default()).unwrap();
        assert_eq!(all.len(), 2);
    }

    #[test]
    fn oversized_graphs_are_refused() {
        let nodes: Vec<(String, String)> = (0..=MAX_EXPLORE_NODES)
            .map(|i| (format!("n{i}"), "x".to_string()))
            .collect();
        let edges: Vec<(String, String)> = (1..=MAX_EXPLORE_NODES)
            .map(|i| ("n0".to_string(), format!("n{i}")))
            .collect();
        let g = SemanticGraph::from_parts(
            "big",
            &nodes
                .iter()
                .map(|(a, b)| (a.as_str(), b.as_str()))
                .collect::<Vec<_>>(),
            &edges
                .iter()
                .map(|(a, b)| (a.as_str(), b.as_str(), "ARG0"))
                .collect::<Vec<_>>(),
            "n0",
        )
        .unwrap();
        assert!(matches!(
            forced_trees(&g, &BlobHeuristics::default()),
            Err(DecomposeError::TooLarge { .. })
        ));
    }

    #[test]
    fn swap_sets_start_empty_and_avoid_shared_edges() {
        let h = BlobHeuristics::default();
        let g = figure("relative-clause").unwrap();
        let d = decompose_all(&g, &h, &DecomposeOptions::default())
            .unwrap()
            .into_iter()
            .find(|t| t.parent("b") == Some("g"))
            .unwrap();
        assert_eq!(swap_candidates(&d).len(), 1);
        let sets = swap_sets(&d);
        assert_eq!(sets.len(), 2);
        assert!(sets[0].is_empty());
    }

    #[test]
    fn plans_cover_every_refd_node() {
        let h = BlobHeuristics::default();
        let g = figure("sparkle-and-glow").unwrap();
        let ng = prepare(&g, &h).unwrap();
        let u = super::super::unroll(&ng, Default::default()).unwrap();
        let c = canonical_tree(&ng, &u);
        let plans = resolution_plans(&c);
        assert!(plans
            .iter()
            .all(|p| p.targets.get("f") == Some(&"a".to_string())));
        assert!(plans.contains(&ResolutionPlan::lowest(&c)));
    }
}
