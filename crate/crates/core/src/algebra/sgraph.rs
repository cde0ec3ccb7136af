use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{AlgebraError, AmType, SourceName, MAX_TYPE_DEPTH};
use crate::graph::{Edge, Node, SemanticGraph};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SNode {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// A graph fragment with a root, source-marked nodes, and a type.
///
/// Node ids are unique within one s-graph. Nodes are addressed internally by
/// position; merges keep positions of the head stable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SGraph {
    nodes: Vec<SNode>,
    edges: Vec<(usize, usize, String)>,
    root: usize,
    sources: BTreeMap<SourceName, usize>,
    ty: AmType,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct RawSGraph {
    pub nodes: Vec<SNode>,
    pub edges: Vec<Edge>,
    pub root: String,
    pub sources: BTreeMap<SourceName, String>,
    #[serde(rename = "type")]
    pub ty: AmType,
}

impl Serialize for SGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_raw().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        SGraph::from_raw(RawSGraph::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

impl SGraph {
    /// Builds and validates a constant.
    pub fn new(
        nodes: Vec<SNode>,
        edges: Vec<Edge>,
        root: &str,
        sources: BTreeMap<SourceName, String>,
        ty: AmType,
    ) -> Result<Self, AlgebraError> {
        Self::from_raw(RawSGraph {
            nodes,
            edges,
            root: root.to_string(),
            sources,
            ty,
        })
    }

    pub(crate) fn from_raw(raw: RawSGraph) -> Result<Self, AlgebraError> {
        let bad = |m: String| AlgebraError::InvalidConstant(m);
        let mut pos = BTreeMap::new();
        for (i, n) in raw.nodes.iter().enumerate() {
            if pos.insert(n.id.clone(), i).is_some() {
                return Err(bad(format!("duplicate node {:?}", n.id)));
            }
        }
        let at = |id: &str| {
            pos.get(id)
                .copied()
                .ok_or_else(|| bad(format!("unknown node {id:?}")))
        };
        let root = at(&raw.root)?;
        let edges = raw
            .edges
            .iter()
            .map(|e| Ok((at(&e.src)?, at(&e.tgt)?, e.label.clone())))
            .collect::<Result<Vec<_>, AlgebraError>>()?;
        let sources = raw
            .sources
            .iter()
            .map(|(s, id)| Ok((s.clone(), at(id)?)))
            .collect::<Result<BTreeMap<_, _>, AlgebraError>>()?;
        let g = SGraph {
            nodes: raw.nodes,
            edges,
            root,
            sources,
            ty: raw.ty,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<(), AlgebraError> {
        let bad = |m: String| AlgebraError::InvalidConstant(m);
        self.ty.check_depth(MAX_TYPE_DEPTH)?;
        let targets: BTreeSet<usize> = self.sources.values().copied().collect();
        if targets.len() != self.sources.len() {
            return Err(bad("two sources on one node".into()));
        }
        if targets.contains(&self.root) {
            return Err(bad("root carries a source".into()));
        }
        let src_names: BTreeSet<&SourceName> = self.sources.keys().collect();
        let ty_names: BTreeSet<&SourceName> = self.ty.names().collect();
        if src_names != ty_names {
            return Err(bad(format!(
                "sources {src_names:?} do not match the type {}",
                self.ty
            )));
        }
        Ok(())
    }

    pub(crate) fn to_raw(&self) -> RawSGraph {
        RawSGraph {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|(s, t, l)| Edge::new(&self.nodes[*s].id, &self.nodes[*t].id, l))
                .collect(),
            root: self.nodes[self.root].id.clone(),
            sources: self
                .sources
                .iter()
                .map(|(s, &i)| (s.clone(), self.nodes[i].id.clone()))
                .collect(),
            ty: self.ty.clone(),
        }
    }

    /// A single labeled node with no sources.
    pub fn singleton(id: &str, label: &str) -> Self {
        SGraph {
            nodes: vec![SNode {
                id: id.to_string(),
                label: Some(label.to_string()),
            }],
            edges: Vec::new(),
            root: 0,
            sources: BTreeMap::new(),
            ty: AmType::empty(),
        }
    }

    pub fn ty(&self) -> &AmType {
        &self.ty
    }

    pub fn root_id(&self) -> &str {
        &self.nodes[self.root].id
    }

    pub fn root_label(&self) -> Option<&str> {
        self.nodes[self.root].label.as_deref()
    }

    pub fn nodes(&self) -> &[SNode] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.edges.iter().map(|(s, t, l)| {
            (
                self.nodes[*s].id.as_str(),
                self.nodes[*t].id.as_str(),
                l.as_str(),
            )
        })
    }

    /// Node id carrying a top-level source.
    pub fn source_node(&self, name: &SourceName) -> Option<&str> {
        self.sources.get(name).map(|&i| self.nodes[i].id.as_str())
    }

    pub fn sources(&self) -> impl Iterator<Item = (&SourceName, &str)> {
        self.sources
            .iter()
            .map(|(s, &i)| (s, self.nodes[i].id.as_str()))
    }

    /// Replaces the type; top-level names must stay the same.
    pub fn set_type(&mut self, ty: AmType) -> Result<(), AlgebraError> {
        let old = std::mem::replace(&mut self.ty, ty);
        if let Err(e) = self.validate() {
            self.ty = old;
            return Err(e);
        }
        Ok(())
    }

    /// Renames sources at every depth of the type and in the source map.
    pub fn rename_sources(
        &self,
        map: &BTreeMap<SourceName, SourceName>,
    ) -> Result<Self, AlgebraError> {
        let mut out = self.clone();
        out.ty = self.ty.rename(map);
        out.sources = self
            .sources
            .iter()
            .map(|(s, &i)| (map.get(s).unwrap_or(s).clone(), i))
            .collect();
        if out.sources.len() != self.sources.len() {
            return Err(AlgebraError::InvalidConstant(
                "renaming is not injective".into(),
            ));
        }
        out.validate()?;
        Ok(out)
    }

    /// Merges `other` into `self`; `map[i]` names the node of `self` that
    /// `other`'s node `i` is fused with, or `usize::MAX` for a fresh copy.
    /// Labeled nodes win id conflicts against slots and REF nodes.
    fn absorb(&mut self, other: &SGraph, mut map: Vec<usize>) -> Result<Vec<usize>, AlgebraError> {
        let mut names: HashMap<String, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        for (i, n) in other.nodes.iter().enumerate() {
            let j = map[i];
            if j == usize::MAX {
                map[i] = self.nodes.len();
                let id = fresh_name(&names, &n.id);
                names.insert(id.clone(), self.nodes.len());
                self.nodes.push(SNode {
                    id,
                    label: n.label.clone(),
                });
                if n.label.as_deref().is_some_and(|l| !is_ref_label(l)) {
                    self.claim(&mut names, map[i], &n.id);
                }
                continue;
            }
            match (&self.nodes[j].label, &n.label) {
                (Some(a), Some(b)) if a != b => {
                    return Err(AlgebraError::LabelClash {
                        node: self.nodes[j].id.clone(),
                        a: a.clone(),
                        b: b.clone(),
                    });
                }
                (None, Some(b)) => {
                    self.nodes[j].label = Some(b.clone());
                    if !is_ref_label(b) {
                        self.claim(&mut names, j, &n.id);
                    }
                }
                _ => {}
            }
        }
        for (s, t, l) in &other.edges {
            self.edges.push((map[*s], map[*t], l.clone()));
        }
        Ok(map)
    }

    /// Gives node `i` the id `want` unless a properly labeled node holds it;
    /// a slot or REF node holding it is renamed.
    fn claim(&mut self, names: &mut HashMap<String, usize>, i: usize, want: &str) {
        match names.get(want).copied() {
            Some(k) if k == i => return,
            Some(k)
                if self.nodes[k]
                    .label
                    .as_deref()
                    .is_some_and(|l| !is_ref_label(l)) =>
            {
                return
            }
            Some(k) => {
                let moved = fresh_name(names, want);
                names.insert(moved.clone(), k);
                self.nodes[k].id = moved;
            }
            None => {}
        }
        names.remove(&self.nodes[i].id);
        names.insert(want.to_string(), i);
        self.nodes[i].id = want.to_string();
    }

    /// Erases sources; every node must carry a label by now.
    pub fn to_semantic_graph(&self, id: &str) -> Result<SemanticGraph, AlgebraError> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                Ok(Node {
                    id: n.id.clone(),
                    label: n
                        .label
                        .clone()
                        .ok_or_else(|| AlgebraError::UnlabeledNode(n.id.clone()))?,
                })
            })
            .collect::<Result<Vec<_>, AlgebraError>>()?;
        let edges = self
            .edges
            .iter()
            .map(|(s, t, l)| Edge::new(&self.nodes[*s].id, &self.nodes[*t].id, l))
            .collect();
        Ok(SemanticGraph::new(id, nodes, edges, self.root_id())?)
    }

    /// Key identifying the constant up to node ids.
    pub fn canonical_key(&self) -> String {
        self.key_with(|s| s.to_string(), self.ty.to_string())
    }

    /// As `canonical_key`, but with all source names erased.
    pub fn skeleton_key(&self) -> String {
        self.key_with(|_| "_".to_string(), self.ty.skeleton())
    }

    fn key_with(&self, name: impl Fn(&SourceName) -> String, ty: String) -> String {
        let mut src_of = vec![None; self.nodes.len()];
        for (s, &i) in &self.sources {
            src_of[i] = Some(name(s));
        }
        let desc = |i: usize| {
            let label = self.nodes[i].label.as_deref().unwrap_or("");
            if i == self.root {
                format!("*{label}")
            } else if let Some(s) = &src_of[i] {
                format!("<{s}>{label}")
            } else {
                label.to_string()
            }
        };
        let mut edges: Vec<String> = self
            .edges
            .iter()
            .map(|(s, t, l)| format!("{}-{l}->{}", desc(*s), desc(*t)))
            .collect();
        edges.sort();
        let isolated = if self.edges.is_empty() {
            desc(self.root)
        } else {
            String::new()
        };
        format!("{isolated}{{{}}}{ty}", edges.join(","))
    }
}

fn is_ref_label(l: &str) -> bool {
    l.starts_with("REF(")
}

fn fresh_name(names: &HashMap<String, usize>, base: &str) -> String {
    if !names.contains_key(base) {
        return base.to_string();
    }
    (1..)
        .map(|k| format!("{base}_{k}"))
        .find(|c| !names.contains_key(c))
        .expect("unbounded")
}

/// Fills source `alpha` of `head` with the root of `arg`.
pub fn apply(head: &SGraph, arg: &SGraph, alpha: &SourceName) -> Result<SGraph, AlgebraError> {
    let expected = head
        .ty
        .request(alpha)
        .ok_or_else(|| AlgebraError::MissingSource(alpha.clone()))?;
    if !expected.equiv(&arg.ty) {
        return Err(AlgebraError::RequestMismatch {
            name: alpha.clone(),
            expected: expected.clone(),
            actual: arg.ty.clone(),
        });
    }
    let ty = head.ty.without(alpha).unify(&arg.ty)?;
    let mut out = head.clone();
    let slot = out.sources.remove(alpha).expect("type and sources agree");
    let mut map = vec![usize::MAX; arg.nodes.len()];
    map[arg.root] = slot;
    for (s, &i) in &arg.sources {
        if let Some(&j) = out.sources.get(s) {
            map[i] = j;
        }
    }
    let map = out.absorb(arg, map)?;
    for (s, &i) in &arg.sources {
        out.sources.entry(s.clone()).or_insert(map[i]);
    }
    out.ty = ty;
    Ok(out)
}

/// Attaches modifier `m` to `head` by fusing `m`'s `alpha` node with the head root.
pub fn modify(head: &SGraph, m: &SGraph, alpha: &SourceName) -> Result<SGraph, AlgebraError> {
    let request =
        m.ty.request(alpha)
            .ok_or_else(|| AlgebraError::MissingSource(alpha.clone()))?;
    if !request.is_empty() {
        return Err(AlgebraError::NonEmptyModRequest(alpha.clone()));
    }
    let leftover = m.ty.without(alpha);
    let added: Vec<SourceName> = leftover
        .names()
        .filter(|n| !head.ty.contains(n))
        .cloned()
        .collect();
    if !added.is_empty() {
        return Err(AlgebraError::ModAddsSources(added));
    }
    if let Some((n, _)) = leftover
        .iter()
        .find(|(n, r)| !head.ty.request(n).is_some_and(|q| q.equiv(r)))
    {
        return Err(AlgebraError::RequestClash(n.clone()));
    }
    let mut out = head.clone();
    let mut map = vec![usize::MAX; m.nodes.len()];
    for (s, &i) in &m.sources {
        map[i] = if s == alpha {
            head.root
        } else {
            head.sources[s]
        };
    }
    out.absorb(m, map)?;
    Ok(out)
}
