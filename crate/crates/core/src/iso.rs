//! Rooted labeled graph isomorphism.
//!
//! Candidate pairs are pruned by joint color refinement over both graphs
//! (root flag, node label, labeled in/out neighborhoods), then a
//! backtracking search extends a partial map outward from the roots.
//! Exponential in the worst case; graphs here have at most a few dozen nodes.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::graph::{label_histogram, SemanticGraph};

struct Indexed<'a> {
    ids: Vec<&'a str>,
    /// per node: (is_out, edge label, neighbor)
    adj: Vec<Vec<(bool, &'a str, usize)>>,
    root: usize,
    labels: Vec<&'a str>,
}

impl<'a> Indexed<'a> {
    fn new(g: &'a SemanticGraph) -> Self {
        let ids: Vec<&str> = g.nodes().iter().map(|n| n.id.as_str()).collect();
        let pos: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut adj = vec![Vec::new(); ids.len()];
        for e in g.edges() {
            let (s, t) = (pos[e.src.as_str()], pos[e.tgt.as_str()]);
            adj[s].push((true, e.label.as_str(), t));
            adj[t].push((false, e.label.as_str(), s));
        }
        Indexed {
            root: pos[g.root()],
            labels: g.nodes().iter().map(|n| n.label.as_str()).collect(),
            ids,
            adj,
        }
    }
}

/// Stable colors for both graphs, drawn from one shared palette.
/// A node's colour with its sorted (outgoing?, edge label, neighbour colour) triples.
type Signature<'a> = (usize, Vec<(bool, &'a str, usize)>);

fn refine<'a>(a: &Indexed<'a>, b: &Indexed<'a>) -> (Vec<usize>, Vec<usize>) {
    let mut palette: BTreeMap<(bool, &str), usize> = BTreeMap::new();
    let mut init = |g: &Indexed<'a>| -> Vec<usize> {
        (0..g.ids.len())
            .map(|i| {
                let key = (i == g.root, g.labels[i]);
                let next = palette.len();
                *palette.entry(key).or_insert(next)
            })
            .collect()
    };
    let mut ca = init(a);
    let mut cb = init(b);
    let mut classes = palette.len();
    loop {
        let mut sigs: BTreeMap<Signature<'a>, usize> = BTreeMap::new();
        let mut step = |g: &Indexed<'a>, c: &[usize]| -> Vec<usize> {
            (0..g.ids.len())
                .map(|i| {
                    let mut nb: Vec<(bool, &'a str, usize)> =
                        g.adj[i].iter().map(|&(o, l, m)| (o, l, c[m])).collect();
                    nb.sort_unstable();
                    let next = sigs.len();
                    *sigs.entry((c[i], nb)).or_insert(next)
                })
                .collect()
        };
        let na = step(a, &ca);
        let nb = step(b, &cb);
        let count = sigs.len();
        ca = na;
        cb = nb;
        if count == classes {
            return (ca, cb);
        }
        classes = count;
    }
}

/// Returns a node mapping from `g1` ids to `g2` ids if the graphs are isomorphic.
pub fn isomorphism(g1: &SemanticGraph, g2: &SemanticGraph) -> Option<BTreeMap<String, String>> {
    if g1.node_count() != g2.node_count()
        || g1.edge_count() != g2.edge_count()
        || g1.label(g1.root()) != g2.label(g2.root())
        || label_histogram(g1) != label_histogram(g2)
    {
        return None;
    }
    let a = Indexed::new(g1);
    let b = Indexed::new(g2);
    let (ca, cb) = refine(&a, &b);
    let mut hist_a = BTreeMap::new();
    let mut hist_b = BTreeMap::new();
    for &c in &ca {
        *hist_a.entry(c).or_insert(0usize) += 1;
    }
    for &c in &cb {
        *hist_b.entry(c).or_insert(0usize) += 1;
    }
    if hist_a != hist_b || ca[a.root] != cb[b.root] {
        return None;
    }

    // visiting order: BFS over the undirected structure from the root
    let mut order = Vec::with_capacity(a.ids.len());
    let mut seen = vec![false; a.ids.len()];
    seen[a.root] = true;
    let mut queue = VecDeque::from([a.root]);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &(_, _, m) in &a.adj[v] {
            if !seen[m] {
                seen[m] = true;
                queue.push_back(m);
            }
        }
    }

    let mut fwd = vec![usize::MAX; a.ids.len()];
    let mut bwd = vec![usize::MAX; b.ids.len()];
    fwd[a.root] = b.root;
    bwd[b.root] = a.root;
    if !consistent(&a, &b, a.root, b.root, &fwd, &bwd) {
        return None;
    }
    if search(&a, &b, &ca, &cb, &order, 1, &mut fwd, &mut bwd) {
        Some(
            (0..a.ids.len())
                .map(|i| (a.ids[i].to_string(), b.ids[fwd[i]].to_string()))
                .collect(),
        )
    } else {
        None
    }
}

/// Checks that the edges between `u` and already-mapped nodes of `a` match
/// the edges between `v` and the mapped nodes of `b`, including self loops.
fn consistent(a: &Indexed, b: &Indexed, u: usize, v: usize, fwd: &[usize], bwd: &[usize]) -> bool {
    let mut ea: Vec<(bool, &str, usize)> = a.adj[u]
        .iter()
        .filter(|&&(_, _, m)| fwd[m] != usize::MAX)
        .map(|&(o, l, m)| (o, l, fwd[m]))
        .collect();
    let mut eb: Vec<(bool, &str, usize)> = b.adj[v]
        .iter()
        .filter(|&&(_, _, m)| bwd[m] != usize::MAX)
        .map(|&(o, l, m)| (o, l, m))
        .collect();
    ea.sort_unstable();
    eb.sort_unstable();
    ea == eb
}

#[allow(clippy::too_many_arguments)]
fn search(
    a: &Indexed,
    b: &Indexed,
    ca: &[usize],
    cb: &[usize],
    order: &[usize],
    k: usize,
    fwd: &mut Vec<usize>,
    bwd: &mut Vec<usize>,
) -> bool {
    if k == order.len() {
        return true;
    }
    let u = order[k];
    // candidates are restricted to neighbors of an already mapped neighbor of u
    let anchor = a.adj[u]
        .iter()
        .find(|&&(_, _, m)| fwd[m] != usize::MAX)
        .map(|&(_, _, m)| fwd[m]);
    let candidates: Vec<usize> = match anchor {
        Some(w) => {
            let mut c: Vec<usize> = b.adj[w].iter().map(|&(_, _, m)| m).collect();
            c.sort_unstable();
            c.dedup();
            c
        }
        None => (0..b.ids.len()).collect(),
    };
    for v in candidates {
        if bwd[v] != usize::MAX || cb[v] != ca[u] {
            continue;
        }
        fwd[u] = v;
        bwd[v] = u;
        if consistent(a, b, u, v, fwd, bwd) && search(a, b, ca, cb, order, k + 1, fwd, bwd) {
            return true;
        }
        fwd[u] = usize::MAX;
        bwd[v] = usize::MAX;
    }
    false
}
