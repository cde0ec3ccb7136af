use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::sgraph::RawSGraph;
use super::{apply, modify, AlgebraError, AmType, SGraph, SourceName};
use crate::graph::{Edge, SemanticGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Op {
    App,
    Mod,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::App => "APP",
            Op::Mod => "MOD",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeEdge {
    pub parent: String,
    pub child: String,
    pub op: Op,
    pub source: SourceName,
}

/// A tree node: a constant, or a reference leaf standing for graph node `reference`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub constant: SGraph,
    pub reference: Option<String>,
}

impl TreeNode {
    pub fn new(constant: SGraph) -> Self {
        TreeNode {
            constant,
            reference: None,
        }
    }

    /// Empty-typed placeholder for a second visit of graph node `target`.
    pub fn reference(target: &str) -> Self {
        TreeNode {
            constant: SGraph::singleton(target, &format!("REF({target})")),
            reference: Some(target.to_string()),
        }
    }

    pub fn is_ref(&self) -> bool {
        self.reference.is_some()
    }
}

#[derive(Serialize, Deserialize)]
struct RawTreeNode {
    #[serde(flatten)]
    constant: RawSGraph,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    reference: Option<String>,
}

impl Serialize for TreeNode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RawTreeNode {
            constant: self.constant.to_raw(),
            reference: self.reference.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TreeNode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawTreeNode::deserialize(d)?;
        Ok(TreeNode {
            constant: SGraph::from_raw(raw.constant).map_err(serde::de::Error::custom)?,
            reference: raw.reference,
        })
    }
}

/// An AM dependency tree. Edges are kept in insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AmDepTree {
    root: String,
    nodes: BTreeMap<String, TreeNode>,
    edges: Vec<TreeEdge>,
}

#[derive(Deserialize)]
struct RawTree {
    root: String,
    nodes: BTreeMap<String, TreeNode>,
    edges: Vec<TreeEdge>,
}

impl<'de> Deserialize<'de> for AmDepTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawTree::deserialize(d)?;
        AmDepTree::new(raw.root, raw.nodes, raw.edges).map_err(serde::de::Error::custom)
    }
}

/// Per-node term types and the child order (edge indices) used to reach them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Typing {
    pub term_types: BTreeMap<String, AmType>,
    pub orders: BTreeMap<String, Vec<usize>>,
}

/// Child of a node as seen by the order search.
struct Kid<'a> {
    edge: usize,
    op: Op,
    source: &'a SourceName,
    ty: &'a AmType,
}

/// One evaluation step at type level. APP additionally requires that the
/// filled source is not requested by another open source, which would make
/// the result depend on the order.
fn step(cur: &AmType, op: Op, source: &SourceName, child: &AmType) -> Result<AmType, AlgebraError> {
    match op {
        Op::App => {
            let req = cur
                .request(source)
                .ok_or_else(|| AlgebraError::MissingSource(source.clone()))?;
            if !req.equiv(child) {
                return Err(AlgebraError::RequestMismatch {
                    name: source.clone(),
                    expected: req.clone(),
                    actual: child.clone(),
                });
            }
            if cur.is_requested(source) {
                return Err(AlgebraError::InvalidTree(format!(
                    "{source} is still requested by another open source"
                )));
            }
            cur.without(source).unify(child)
        }
        Op::Mod => {
            let req = child
                .request(source)
                .ok_or_else(|| AlgebraError::MissingSource(source.clone()))?;
            if !req.is_empty() {
                return Err(AlgebraError::NonEmptyModRequest(source.clone()));
            }
            let leftover = child.without(source);
            let added: Vec<SourceName> = leftover
                .names()
                .filter(|n| !cur.contains(n))
                .cloned()
                .collect();
            if !added.is_empty() {
                return Err(AlgebraError::ModAddsSources(added));
            }
            if let Some((n, _)) = leftover
                .iter()
                .find(|(n, r)| !cur.request(n).is_some_and(|q| q.equiv(r)))
            {
                return Err(AlgebraError::RequestClash(n.clone()));
            }
            Ok(cur.clone())
        }
    }
}

struct OrderSearch<'a> {
    kids: &'a [Kid<'a>],
    failed: HashSet<(Vec<bool>, AmType)>,
    /// error at the dead end with the most children consumed
    deepest: Option<(usize, AlgebraError)>,
}

impl<'a> OrderSearch<'a> {
    fn first(
        &mut self,
        used: &mut Vec<bool>,
        cur: &AmType,
        order: &mut Vec<usize>,
    ) -> Option<AmType> {
        if order.len() == self.kids.len() {
            return Some(cur.clone());
        }
        if self.failed.contains(&(used.clone(), cur.clone())) {
            return None;
        }
        for i in 0..self.kids.len() {
            if used[i] {
                continue;
            }
            let k = &self.kids[i];
            match step(cur, k.op, k.source, k.ty) {
                Ok(next) => {
                    used[i] = true;
                    order.push(i);
                    if let Some(t) = self.first(used, &next, order) {
                        return Some(t);
                    }
                    order.pop();
                    used[i] = false;
                }
                Err(e) => {
                    if self.deepest.as_ref().is_none_or(|(d, _)| order.len() > *d) {
                        self.deepest = Some((order.len(), e));
                    }
                }
            }
        }
        self.failed.insert((used.clone(), cur.clone()));
        None
    }

    fn all(
        &self,
        used: &mut Vec<bool>,
        cur: &AmType,
        order: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
        limit: usize,
    ) {
        if out.len() >= limit {
            return;
        }
        if order.len() == self.kids.len() {
            out.push(order.clone());
            return;
        }
        for i in 0..self.kids.len() {
            if used[i] {
                continue;
            }
            let k = &self.kids[i];
            if let Ok(next) = step(cur, k.op, k.source, k.ty) {
                used[i] = true;
                order.push(i);
                self.all(used, &next, order, out, limit);
                order.pop();
                used[i] = false;
            }
        }
    }
}

impl AmDepTree {
    pub fn new(
        root: impl Into<String>,
        nodes: BTreeMap<String, TreeNode>,
        edges: Vec<TreeEdge>,
    ) -> Result<Self, AlgebraError> {
        let t = AmDepTree {
            root: root.into(),
            nodes,
            edges,
        };
        t.validate()?;
        Ok(t)
    }

    /// A tree with a single constant.
    pub fn leaf(id: &str, constant: SGraph) -> Self {
        AmDepTree {
            root: id.to_string(),
            nodes: BTreeMap::from([(id.to_string(), TreeNode::new(constant))]),
            edges: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), AlgebraError> {
        let bad = |m: String| Err(AlgebraError::InvalidTree(m));
        if !self.nodes.contains_key(&self.root) {
            return bad(format!("root {:?} is not a node", self.root));
        }
        let mut parent: BTreeMap<&str, &str> = BTreeMap::new();
        let mut app_slots: BTreeSet<(&str, &SourceName)> = BTreeSet::new();
        for e in &self.edges {
            for end in [&e.parent, &e.child] {
                if !self.nodes.contains_key(end) {
                    return bad(format!("edge endpoint {end:?} is not a node"));
                }
            }
            if e.child == self.root {
                return bad("root has a parent".into());
            }
            if parent.insert(&e.child, &e.parent).is_some() {
                return bad(format!("node {:?} has two parents", e.child));
            }
            if e.op == Op::App && !app_slots.insert((&e.parent, &e.source)) {
                return bad(format!(
                    "node {:?} has two APP children at {}",
                    e.parent, e.source
                ));
            }
        }
        for n in self.nodes.keys() {
            let mut cur = n.as_str();
            let mut steps = 0;
            while cur != self.root {
                match parent.get(cur) {
                    Some(p) => cur = p,
                    None => return bad(format!("node {n:?} is not below the root")),
                }
                steps += 1;
                if steps > self.nodes.len() {
                    return bad("edges contain a cycle".into());
                }
            }
        }
        Ok(())
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn nodes(&self) -> &BTreeMap<String, TreeNode> {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&TreeNode> {
        self.nodes.get(id)
    }

    pub fn edges(&self) -> &[TreeEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn node_mut(&mut self, id: &str) -> Option<&mut TreeNode> {
        self.nodes.get_mut(id)
    }

    pub(crate) fn edges_mut(&mut self) -> &mut Vec<TreeEdge> {
        &mut self.edges
    }

    #[cfg(test)]
    pub(crate) fn insert_node(&mut self, id: String, node: TreeNode) {
        self.nodes.insert(id, node);
    }

    pub(crate) fn remove_node(&mut self, id: &str) -> Option<TreeNode> {
        self.edges.retain(|e| e.child != id && e.parent != id);
        self.nodes.remove(id)
    }

    /// Index of the edge entering `id`.
    pub fn parent_edge(&self, id: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.child == id)
    }

    pub fn parent(&self, id: &str) -> Option<&str> {
        self.parent_edge(id).map(|i| self.edges[i].parent.as_str())
    }

    /// Edge indices below `id`, sorted by (op, source, child).
    pub fn child_edges(&self, id: &str) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.edges.len())
            .filter(|&i| self.edges[i].parent == id)
            .collect();
        out.sort_by(|&a, &b| {
            let (x, y) = (&self.edges[a], &self.edges[b]);
            (x.op, &x.source, &x.child).cmp(&(y.op, &y.source, &y.child))
        });
        out
    }

    /// Nodes on the way from the root down to `id`, both included.
    pub fn ancestors(&self, id: &str) -> Vec<String> {
        let mut path = vec![id.to_string()];
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            path.push(p.to_string());
            cur = p;
        }
        path.reverse();
        path
    }

    /// Whether `a` is an ancestor of, or equal to, `d`.
    pub fn dominates(&self, a: &str, d: &str) -> bool {
        let mut cur = d;
        loop {
            if cur == a {
                return true;
            }
            match self.parent(cur) {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }

    /// Lowest common ancestor of a nonempty node set.
    pub fn lca<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Option<String> {
        let mut common: Option<Vec<String>> = None;
        for id in ids {
            let path = self.ancestors(id);
            common = Some(match common {
                None => path,
                Some(c) => c
                    .into_iter()
                    .zip(path)
                    .take_while(|(a, b)| a == b)
                    .map(|(a, _)| a)
                    .collect(),
            });
        }
        common.and_then(|c| c.last().cloned())
    }

    /// Edge indices on the downward path from `top` to `bottom`.
    pub fn path_edges(&self, top: &str, bottom: &str) -> Option<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = bottom;
        while cur != top {
            let e = self.parent_edge(cur)?;
            out.push(e);
            cur = &self.edges[e].parent;
        }
        out.reverse();
        Some(out)
    }

    /// Nodes of the subtree at `id` in pre-order, children in `child_edges` order.
    pub fn subtree(&self, id: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![id.to_string()];
        while let Some(n) = stack.pop() {
            for &e in self.child_edges(&n).iter().rev() {
                stack.push(self.edges[e].child.clone());
            }
            out.push(n);
        }
        out
    }

    /// Nodes in post-order (children before parents).
    fn post_order(&self, id: &str) -> Vec<String> {
        let mut pre = self.subtree(id);
        pre.reverse();
        pre
    }

    fn kids<'a>(&'a self, id: &str, typing: &'a Typing) -> Vec<Kid<'a>> {
        self.child_edges(id)
            .into_iter()
            .map(|i| {
                let e = &self.edges[i];
                Kid {
                    edge: i,
                    op: e.op,
                    source: &e.source,
                    ty: &typing.term_types[&e.child],
                }
            })
            .collect()
    }

    /// Term types and evaluation orders for every node of the subtree at `id`.
    pub fn typing_at(&self, id: &str) -> Result<Typing, AlgebraError> {
        let mut typing = Typing::default();
        for n in self.post_order(id) {
            let kids = self.kids(&n, &typing);
            let mut search = OrderSearch {
                kids: &kids,
                failed: HashSet::new(),
                deepest: None,
            };
            let mut used = vec![false; kids.len()];
            let mut order = Vec::new();
            let head = self.nodes[&n].constant.ty();
            match search.first(&mut used, head, &mut order) {
                Some(t) => {
                    let edges = order.iter().map(|&i| kids[i].edge).collect();
                    drop(kids);
                    typing.term_types.insert(n.clone(), t);
                    typing.orders.insert(n, edges);
                }
                None => {
                    let cause = search
                        .deepest
                        .map(|(_, e)| e)
                        .unwrap_or_else(|| AlgebraError::InvalidTree("no admissible order".into()));
                    return Err(AlgebraError::NotWellTyped {
                        node: n,
                        cause: Box::new(cause),
                    });
                }
            }
        }
        Ok(typing)
    }

    pub fn typing(&self) -> Result<Typing, AlgebraError> {
        self.typing_at(&self.root)
    }

    /// Type of the whole tree's value, without building graphs.
    pub fn check_well_typed(&self) -> Result<AmType, AlgebraError> {
        self.term_type(&self.root)
    }

    /// Type of the value of the subtree at `id`.
    pub fn term_type(&self, id: &str) -> Result<AmType, AlgebraError> {
        if !self.nodes.contains_key(id) {
            return Err(AlgebraError::InvalidTree(format!("unknown node {id:?}")));
        }
        Ok(self.typing_at(id)?.term_types.remove(id).expect("typed"))
    }

    /// Every admissible child order at `id` (edge indices), up to `limit`.
    pub fn admissible_orders(
        &self,
        id: &str,
        limit: usize,
    ) -> Result<Vec<Vec<usize>>, AlgebraError> {
        let mut typing = self.typing_at(id)?;
        typing.term_types.remove(id);
        let kids = self.kids(id, &typing);
        let search = OrderSearch {
            kids: &kids,
            failed: HashSet::new(),
            deepest: None,
        };
        let mut out = Vec::new();
        search.all(
            &mut vec![false; kids.len()],
            self.nodes[id].constant.ty(),
            &mut Vec::new(),
            &mut out,
            limit,
        );
        Ok(out
            .into_iter()
            .map(|o| o.into_iter().map(|i| kids[i].edge).collect())
            .collect())
    }

    /// Value of the subtree at `id`, with child orders from `orders`.
    pub fn evaluate_sgraph_with(
        &self,
        id: &str,
        orders: &BTreeMap<String, Vec<usize>>,
    ) -> Result<SGraph, AlgebraError> {
        let mut values: BTreeMap<String, SGraph> = BTreeMap::new();
        for n in self.post_order(id) {
            let mut g = self.nodes[&n].constant.clone();
            let order = orders
                .get(&n)
                .ok_or_else(|| AlgebraError::InvalidTree(format!("no order for {n:?}")))?;
            for &i in order {
                let e = &self.edges[i];
                let child = values.remove(&e.child).expect("children evaluated first");
                let wrap = |cause| AlgebraError::NotWellTyped {
                    node: n.clone(),
                    cause: Box::new(cause),
                };
                g = match e.op {
                    Op::App => apply(&g, &child, &e.source),
                    Op::Mod => modify(&g, &child, &e.source),
                }
                .map_err(wrap)?;
            }
            values.insert(n, g);
        }
        Ok(values.remove(id).expect("root evaluated"))
    }

    pub fn evaluate_sgraph(&self, id: &str) -> Result<SGraph, AlgebraError> {
        let typing = self.typing_at(id)?;
        self.evaluate_sgraph_with(id, &typing.orders)
    }

    /// Evaluates the tree to a graph; the root type must be empty.
    pub fn evaluate(&self) -> Result<SemanticGraph, AlgebraError> {
        let typing = self.typing()?;
        let t = &typing.term_types[&self.root];
        if !t.is_empty() {
            return Err(AlgebraError::NonEmptyRootType(t.clone()));
        }
        self.evaluate_sgraph_with(&self.root, &typing.orders)?
            .to_semantic_graph("")
    }

    /// Evaluation under explicitly chosen child orders.
    pub fn evaluate_with(
        &self,
        orders: &BTreeMap<String, Vec<usize>>,
    ) -> Result<SemanticGraph, AlgebraError> {
        let g = self.evaluate_sgraph_with(&self.root, orders)?;
        if !g.ty().is_empty() {
            return Err(AlgebraError::NonEmptyRootType(g.ty().clone()));
        }
        g.to_semantic_graph("")
    }

    /// Structural rendering that ignores tree node ids: constants by key,
    /// children sorted. Equal strings mean equal trees up to node renaming.
    pub fn shape_key(&self) -> String {
        self.shape_at(&self.root)
    }

    fn shape_at(&self, id: &str) -> String {
        let node = &self.nodes[id];
        let head = match &node.reference {
            Some(r) => format!("REF({r})"),
            None => node.constant.canonical_key(),
        };
        let mut kids: Vec<String> = self
            .child_edges(id)
            .into_iter()
            .map(|i| {
                let e = &self.edges[i];
                format!("{}_{}:{}", e.op, e.source, self.shape_at(&e.child))
            })
            .collect();
        if kids.is_empty() {
            return head;
        }
        kids.sort();
        format!("{head}({})", kids.join(" "))
    }

    /// Graph view of the tree itself (for debugging and golden dumps).
    pub fn edge_list(&self) -> Vec<Edge> {
        self.edges
            .iter()
            .map(|e| Edge::new(&e.parent, &e.child, format!("{}_{}", e.op, e.source)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{ty, SNode};
    use crate::graph::is_isomorphic;

    fn c(
        nodes: &[(&str, Option<&str>)],
        edges: &[(&str, &str, &str)],
        root: &str,
        t: &str,
    ) -> SGraph {
        let tt = ty(t);
        let sources = tt
            .names()
            .map(|s| (s.clone(), s.placeholder_target().unwrap().to_string()))
            .collect();
        SGraph::new(
            nodes
                .iter()
                .map(|(i, l)| SNode {
                    id: i.to_string(),
                    label: l.map(str::to_string),
                })
                .collect(),
            edges
                .iter()
                .map(|(s, t, l)| Edge::new(*s, *t, *l))
                .collect(),
            root,
            sources,
            tt,
        )
        .unwrap()
    }

    fn tree(root: &str, nodes: Vec<(&str, SGraph)>, edges: &[(&str, &str, Op, &str)]) -> AmDepTree {
        AmDepTree::new(
            root,
            nodes
                .into_iter()
                .map(|(i, g)| (i.to_string(), TreeNode::new(g)))
                .collect(),
            edges
                .iter()
                .map(|(p, ch, op, s)| TreeEdge {
                    parent: p.to_string(),
                    child: ch.to_string(),
                    op: *op,
                    source: SourceName::new(*s),
                })
                .collect(),
        )
        .unwrap()
    }

    fn sparkle_tree() -> AmDepTree {
        let and = c(
            &[("a", Some("and")), ("s", None), ("g", None)],
            &[("a", "s", "op1"), ("a", "g", "op2")],
            "a",
            "[ps(s)[ps(f)], ps(g)[ps(f)]]",
        );
        let sparkle = c(
            &[("s", Some("sparkle")), ("f", None)],
            &[("s", "f", "ARG0")],
            "s",
            "[ps(f)]",
        );
        let glow = c(
            &[("g", Some("glow")), ("f", None)],
            &[("g", "f", "ARG0")],
            "g",
            "[ps(f)]",
        );
        tree(
            "a",
            vec![
                ("a", and),
                ("s", sparkle),
                ("g", glow),
                ("f", SGraph::singleton("f", "fairy")),
            ],
            &[
                ("a", "s", Op::App, "ps(s)"),
                ("a", "g", Op::App, "ps(g)"),
                ("a", "f", Op::App, "ps(f)"),
            ],
        )
    }

    fn sparkle_graph() -> SemanticGraph {
        SemanticGraph::from_parts(
            "G",
            &[
                ("a", "and"),
                ("s", "sparkle"),
                ("g", "glow"),
                ("f", "fairy"),
            ],
            &[
                ("a", "s", "op1"),
                ("a", "g", "op2"),
                ("s", "f", "ARG0"),
                ("g", "f", "ARG0"),
            ],
            "a",
        )
        .unwrap()
    }

    #[test]
    fn coordination_evaluates_with_one_fairy() {
        let t = sparkle_tree();
        assert_eq!(t.check_well_typed().unwrap(), AmType::empty());
        let g = t.evaluate().unwrap();
        assert!(is_isomorphic(&g, &sparkle_graph()));
        // fairy fills ps(f) last
        let order = &t.typing().unwrap().orders["a"];
        assert_eq!(t.edges()[*order.last().unwrap()].child, "f");
    }

    #[test]
    fn every_admissible_order_gives_the_same_graph() {
        let t = sparkle_tree();
        let orders = t.admissible_orders("a", 100).unwrap();
        assert_eq!(orders.len(), 2);
        for o in orders {
            let mut all = t.typing().unwrap().orders;
            all.insert("a".into(), o);
            assert!(is_isomorphic(
                &t.evaluate_with(&all).unwrap(),
                &sparkle_graph()
            ));
        }
    }

    #[test]
    fn tiny_fairy_tree() {
        let glow = c(
            &[("g", Some("glow")), ("f", None)],
            &[("g", "f", "ARG0")],
            "g",
            "[ps(f)]",
        );
        let tiny = c(
            &[("t", Some("tiny")), ("f", None)],
            &[("f", "t", "mod")],
            "t",
            "[ps(f)]",
        );
        let t = tree(
            "g",
            vec![
                ("g", glow.clone()),
                ("f", SGraph::singleton("f", "fairy")),
                ("t", tiny),
            ],
            &[("g", "f", Op::App, "ps(f)"), ("f", "t", Op::Mod, "ps(f)")],
        );
        assert!(t.check_well_typed().unwrap().is_empty());
        assert_eq!(t.term_type("f").unwrap(), AmType::empty());
        let g = t.evaluate().unwrap();
        assert_eq!(g.node_count(), 3);

        let lone = AmDepTree::leaf("g", glow);
        assert_eq!(lone.check_well_typed().unwrap(), ty("[ps(f)]"));
        assert_eq!(
            lone.evaluate(),
            Err(AlgebraError::NonEmptyRootType(ty("[ps(f)]")))
        );
    }

    #[test]
    fn relative_clause_with_placeholder_sources() {
        let begin = c(
            &[("b", Some("begin")), ("f", None), ("g", None)],
            &[("b", "f", "ARG0"), ("b", "g", "ARG1")],
            "b",
            "[ps(f), ps(g)[ps(f)]]",
        );
        let glow = c(
            &[("g", Some("glow")), ("f", None)],
            &[("g", "f", "ARG0")],
            "g",
            "[ps(f)]",
        );
        let t = tree(
            "f",
            vec![
                ("f", SGraph::singleton("f", "fairy")),
                ("b", begin),
                ("g", glow),
            ],
            &[("f", "b", Op::Mod, "ps(f)"), ("b", "g", Op::App, "ps(g)")],
        );
        assert!(t.check_well_typed().unwrap().is_empty());
        assert_eq!(t.term_type("b").unwrap(), ty("[ps(f)]"));
        let g = t.evaluate().unwrap();
        let want = SemanticGraph::from_parts(
            "w",
            &[("f", "fairy"), ("b", "begin"), ("g", "glow")],
            &[("b", "f", "ARG0"), ("b", "g", "ARG1"), ("g", "f", "ARG0")],
            "f",
        )
        .unwrap();
        assert!(is_isomorphic(&g, &want));
    }

    #[test]
    fn ill_typed_tree_names_the_node() {
        let glow = c(
            &[("g", Some("glow")), ("f", None)],
            &[("g", "f", "ARG0")],
            "g",
            "[ps(f)]",
        );
        let t = tree(
            "g",
            vec![("g", glow.clone()), ("h", glow)],
            &[("g", "h", Op::App, "ps(f)")],
        );
        match t.check_well_typed() {
            Err(AlgebraError::NotWellTyped { node, .. }) => assert_eq!(node, "g"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tree_validation() {
        let one = SGraph::singleton("x", "x");
        let nodes: BTreeMap<String, TreeNode> = [("a", one.clone()), ("b", one)]
            .into_iter()
            .map(|(i, g)| (i.to_string(), TreeNode::new(g)))
            .collect();
        let e = |p: &str, ch: &str| TreeEdge {
            parent: p.into(),
            child: ch.into(),
            op: Op::Mod,
            source: "s".into(),
        };
        assert!(AmDepTree::new("a", nodes.clone(), vec![]).is_err());
        assert!(AmDepTree::new("a", nodes.clone(), vec![e("a", "b"), e("b", "a")]).is_err());
        assert!(AmDepTree::new("a", nodes, vec![e("a", "b")]).is_ok());
    }

    #[test]
    fn json_round_trip() {
        let t = sparkle_tree();
        let text = serde_json::to_string(&t).unwrap();
        let back: AmDepTree = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
        let mut r = sparkle_tree();
        r.insert_node("x".into(), TreeNode::reference("f"));
        r.edges_mut().push(TreeEdge {
            parent: "s".into(),
            child: "x".into(),
            op: Op::App,
            source: SourceName::placeholder("f"),
        });
        let back: AmDepTree = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back.node("x").unwrap().reference.as_deref(), Some("f"));
    }
}
