//! Random well-typed AM dependency trees over reusable sources.
//!
//! Generation runs top-down: every subtree is built against a target term
//! type. A node's constant keeps the target's sources open and adds the
//! sources its APP children fill. Those are ordered so that a request only
//! mentions sources that are filled later or stay open, which keeps every
//! generated tree well-typed by construction; the result is still checked.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AlgebraError, AmDepTree, AmType, Op, SGraph, SNode, SourceName, TreeEdge, TreeNode};
use crate::graph::Edge;

const VOCAB: &[&str] = &[
    "fairy", "glow", "sparkle", "begin", "seem", "want", "tiny", "bright", "and", "see", "tree",
    "wizard", "sing", "dark", "forest", "try",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Upper bound on tree nodes, which equals the graph's node count.
    pub max_nodes: usize,
    /// Most source names in one constant's type, nested ones included.
    pub max_sources: usize,
    pub max_depth: usize,
    /// Chance that a request mentions another source, creating a reentrancy.
    pub reentrancy_prob: f64,
    /// Chance that a child is attached by MOD rather than APP.
    pub mod_prob: f64,
    pub sources: Vec<SourceName>,
    pub max_retries: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            max_nodes: 10,
            max_sources: 3,
            max_depth: 3,
            reentrancy_prob: 0.35,
            mod_prob: 0.3,
            sources: default_sources(3),
            max_retries: 1000,
        }
    }
}

/// The inventory `s1..sn`.
pub fn default_sources(n: usize) -> Vec<SourceName> {
    (1..=n).map(|i| SourceName::new(format!("s{i}"))).collect()
}

struct Builder<'a> {
    cfg: &'a GeneratorConfig,
    rng: ChaCha8Rng,
    nodes: BTreeMap<String, TreeNode>,
    edges: Vec<TreeEdge>,
}

impl Builder<'_> {
    fn fresh_id(&self) -> String {
        format!("n{}", self.nodes.len())
    }

    /// Builds a subtree of at most `budget` nodes whose term type is `target`.
    /// `attach` is the source by which a modifier subtree attaches to its head.
    fn subtree(&mut self, target: &AmType, budget: usize, attach: Option<&SourceName>) -> String {
        let id = self.fresh_id();
        // reserve the id before recursing
        self.nodes
            .insert(id.clone(), TreeNode::new(SGraph::singleton(&id, "?")));

        let cap = self.cfg.max_sources.min(self.cfg.sources.len());
        let taken = target.all_names();
        let mut free: Vec<SourceName> = self
            .cfg
            .sources
            .iter()
            .filter(|s| !taken.contains(*s))
            .cloned()
            .collect();
        free.shuffle(&mut self.rng);
        let room = cap.saturating_sub(taken.len()).min(free.len());

        let extra = budget.saturating_sub(1);
        let mut n_fill = 0;
        let mut n_mod = 0;
        for _ in 0..extra {
            if n_fill < room && !self.rng.gen_bool(self.cfg.mod_prob) {
                n_fill += 1;
            } else {
                n_mod += 1;
            }
        }
        if extra > 0 && self.rng.gen_bool(0.2) {
            // occasionally stop early so trees vary in shape
            n_fill = n_fill.min(1);
            n_mod = n_mod.min(1);
        }

        // filled sources in application order; requests built back to front
        // so that each one only mentions later or still-open sources
        let fill: Vec<SourceName> = free[..n_fill].to_vec();
        let mut requests: Vec<AmType> = vec![AmType::empty(); n_fill];
        for i in (0..n_fill).rev() {
            let mut req = AmType::empty();
            for (n, r) in target.iter() {
                if 1 + r.depth() < self.cfg.max_depth && self.rng.gen_bool(self.cfg.reentrancy_prob)
                {
                    req.insert(n.clone(), r.clone());
                }
            }
            for j in i + 1..n_fill {
                if 1 + requests[j].depth() < self.cfg.max_depth
                    && self.rng.gen_bool(self.cfg.reentrancy_prob)
                {
                    req.insert(fill[j].clone(), requests[j].clone());
                }
            }
            requests[i] = req;
        }
        // a source requested by an earlier one may stay out of the constant
        // and enter the type only through unification
        let hidden: Vec<bool> = (0..n_fill)
            .map(|j| (0..j).any(|i| requests[i].contains(&fill[j])) && self.rng.gen_bool(0.5))
            .collect();

        let mut ty = target.clone();
        for i in 0..n_fill {
            if !hidden[i] {
                ty.insert(fill[i].clone(), requests[i].clone());
            }
        }

        let mut child_budgets = vec![1usize; n_fill + n_mod];
        if !child_budgets.is_empty() {
            for _ in 0..extra.saturating_sub(child_budgets.len()) {
                let k = self.rng.gen_range(0..child_budgets.len());
                child_budgets[k] += 1;
            }
        }

        for i in 0..n_fill {
            let child = self.subtree(&requests[i], child_budgets[i], None);
            self.edges.push(TreeEdge {
                parent: id.clone(),
                child,
                op: Op::App,
                source: fill[i].clone(),
            });
        }
        for k in 0..n_mod {
            // a modifier may share sources the head keeps open
            let mut mt = AmType::empty();
            for (n, r) in target.iter() {
                if self.rng.gen_bool(self.cfg.reentrancy_prob) {
                    let mut next = mt.clone();
                    next.insert(n.clone(), r.clone());
                    if next.all_names().len() < cap {
                        mt = next;
                    }
                }
            }
            let used = mt.all_names();
            let options: Vec<&SourceName> = self
                .cfg
                .sources
                .iter()
                .filter(|s| !used.contains(*s))
                .collect();
            let alpha = (*options
                .choose(&mut self.rng)
                .expect("cap leaves a free name"))
            .clone();
            mt.insert(alpha.clone(), AmType::empty());
            let child = self.subtree(&mt, child_budgets[n_fill + k], Some(&alpha));
            self.edges.push(TreeEdge {
                parent: id.clone(),
                child,
                op: Op::Mod,
                source: alpha,
            });
        }

        let label = *VOCAB.choose(&mut self.rng).unwrap();
        let constant = self.constant(&id, label, &ty, attach);
        self.nodes.insert(id.clone(), TreeNode::new(constant));
        id
    }

    /// Star-shaped constant: ARG edges to argument slots and a `mod` edge
    /// from the slot a modifier attaches to.
    fn constant(
        &mut self,
        id: &str,
        label: &str,
        ty: &AmType,
        attach: Option<&SourceName>,
    ) -> SGraph {
        let mut nodes = vec![SNode {
            id: id.to_string(),
            label: Some(label.to_string()),
        }];
        let mut edges = Vec::new();
        let mut sources = BTreeMap::new();
        let mut names: Vec<&SourceName> = ty.names().collect();
        names.shuffle(&mut self.rng);
        let mut arg = 0;
        for s in names {
            let slot = format!("{id}.{s}");
            nodes.push(SNode {
                id: slot.clone(),
                label: None,
            });
            sources.insert(s.clone(), slot.clone());
            if attach == Some(s) {
                edges.push(Edge::new(slot, id, "mod"));
            } else {
                edges.push(Edge::new(id, slot, format!("ARG{arg}")));
                arg += 1;
            }
        }
        SGraph::new(nodes, edges, id, sources, ty.clone()).expect("generated constant is valid")
    }
}

/// Generates a random well-typed tree with empty root type.
pub fn gen_random_tree(cfg: &GeneratorConfig, seed: u64) -> Result<AmDepTree, AlgebraError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.max_retries.max(1) {
        let mut b = Builder {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(rng.gen()),
            nodes: BTreeMap::new(),
            edges: Vec::new(),
        };
        let size = b.rng.gen_range(1..=cfg.max_nodes.max(1));
        let root = b.subtree(&AmType::empty(), size, None);
        let Ok(tree) = AmDepTree::new(root, b.nodes, b.edges) else {
            continue;
        };
        if tree.check_well_typed().is_ok_and(|t| t.is_empty()) && tree.evaluate().is_ok() {
            return Ok(tree);
        }
        log::debug!("generated tree failed validation; retrying");
    }
    Err(AlgebraError::GenerationExhausted(cfg.max_retries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_node() {
        let cfg = GeneratorConfig {
            max_nodes: 1,
            ..Default::default()
        };
        let t = gen_random_tree(&cfg, 3).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.nodes()[t.root()].constant.ty().is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = GeneratorConfig::default();
        assert_eq!(
            gen_random_tree(&cfg, 7).unwrap(),
            gen_random_tree(&cfg, 7).unwrap()
        );
    }

    #[test]
    fn samples_are_well_typed() {
        let cfg = GeneratorConfig::default();
        let mut reentrant = 0;
        for seed in 0..300 {
            let t = gen_random_tree(&cfg, seed).unwrap();
            assert!(t.len() <= cfg.max_nodes);
            assert!(t.check_well_typed().unwrap().is_empty());
            let g = t.evaluate().unwrap();
            assert_eq!(g.node_count(), t.len());
            if t.nodes()
                .values()
                .any(|n| n.constant.ty().iter().any(|(_, r)| !r.is_empty()))
            {
                reentrant += 1;
            }
        }
        assert!(
            reentrant > 30,
            "only {reentrant} trees with nonempty requests"
        );
    }
}
