//! Tree automata over source-name assignments.
//!
//! A decomposed tree uses graph-specific placeholder sources. Binarizing it
//! and building the automaton below gives every way of renaming those
//! placeholders to a small reusable inventory that keeps the tree
//! well-typed. States pair an address in the binary tree with the renaming
//! chosen for the leftmost leaf under it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{AlgebraError, AmDepTree, Op, SGraph, SourceName, TreeEdge, TreeNode};

/// Position in a binary tree: `0` is the head side, `1` the argument side.
pub type Address = String;

/// Injective partial map from placeholders to reusable source names.
pub type Assignment = BTreeMap<SourceName, SourceName>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutomatonError {
    #[error("automaton is empty: {0}")]
    EmptyAutomaton(String),
    #[error("tree cannot be binarized: {0}")]
    Algebra(#[from] AlgebraError),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("automaton does not match its binary tree: {0}")]
    Mismatch(String),
    #[error("run is not accepted: {0}")]
    NotAccepted(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BinCell {
    Leaf {
        node: String,
        constant: SGraph,
    },
    Op {
        op: Op,
        source: SourceName,
        parent: String,
        child: String,
    },
}

/// Binarized dependency tree, cells in pre-order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinTree {
    cells: Vec<(Address, BinCell)>,
    index: BTreeMap<Address, usize>,
    labels: BTreeMap<String, String>,
}

impl BinTree {
    fn from_cells(cells: Vec<(Address, BinCell)>) -> Self {
        let index = cells
            .iter()
            .enumerate()
            .map(|(i, (a, _))| (a.clone(), i))
            .collect();
        let labels = cells
            .iter()
            .filter_map(|(_, c)| match c {
                BinCell::Leaf { node, constant } => Some((
                    node.clone(),
                    constant.root_label().unwrap_or_default().to_string(),
                )),
                BinCell::Op { .. } => None,
            })
            .collect();
        BinTree {
            cells,
            index,
            labels,
        }
    }

    pub fn cells(&self) -> &[(Address, BinCell)] {
        &self.cells
    }

    pub fn at(&self, addr: &str) -> Option<&BinCell> {
        self.index.get(addr).map(|&i| &self.cells[i].1)
    }

    pub fn leaf_count(&self) -> usize {
        self.cells
            .iter()
            .filter(|(_, c)| matches!(c, BinCell::Leaf { .. }))
            .count()
    }

    /// Root label of the constant at tree node `node`.
    pub fn node_label(&self, node: &str) -> &str {
        self.labels.get(node).map(String::as_str).unwrap_or("")
    }

    fn render(&self, addr: &str, out: &mut String) {
        match self.at(addr).expect("address in tree") {
            BinCell::Leaf { node, constant } => {
                out.push_str(constant.root_label().unwrap_or(node));
            }
            BinCell::Op { op, source, .. } => {
                out.push_str(&format!("{op}_{source}("));
                self.render(&format!("{addr}0"), out);
                out.push_str(", ");
                self.render(&format!("{addr}1"), out);
                out.push(')');
            }
        }
    }
}

impl fmt::Display for BinTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.render("", &mut s);
        f.write_str(&s)
    }
}

impl Serialize for BinTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.cells.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BinTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(BinTree::from_cells(Vec::deserialize(d)?))
    }
}

/// Folds every node with its children in the greedy admissible order; the
/// last operation applied ends up outermost, the head always on the left.
pub fn binarize(t: &AmDepTree) -> Result<BinTree, AutomatonError> {
    if let Some((id, _)) = t.nodes().iter().find(|(_, n)| n.is_ref()) {
        return Err(AlgebraError::InvalidTree(format!("unresolved REF node {id:?}")).into());
    }
    let typing = t.typing()?;
    let mut cells = Vec::new();
    fold(
        t,
        &typing.orders,
        t.root(),
        usize::MAX,
        String::new(),
        &mut cells,
    );
    Ok(BinTree::from_cells(cells))
}

/// Emits the cell for node `id` after its first `k` ordered children.
fn fold(
    t: &AmDepTree,
    orders: &BTreeMap<String, Vec<usize>>,
    id: &str,
    k: usize,
    addr: Address,
    out: &mut Vec<(Address, BinCell)>,
) {
    let order = &orders[id];
    let k = k.min(order.len());
    if k == 0 {
        let constant = t.node(id).expect("node exists").constant.clone();
        out.push((
            addr,
            BinCell::Leaf {
                node: id.to_string(),
                constant,
            },
        ));
        return;
    }
    let e = &t.edges()[order[k - 1]];
    out.push((
        addr.clone(),
        BinCell::Op {
            op: e.op,
            source: e.source.clone(),
            parent: e.parent.clone(),
            child: e.child.clone(),
        },
    ));
    fold(t, orders, id, k - 1, format!("{addr}0"), out);
    fold(t, orders, &e.child, usize::MAX, format!("{addr}1"), out);
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct State {
    pub addr: Address,
    pub phi: Assignment,
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let addr = if self.addr.is_empty() {
            "ε"
        } else {
            &self.addr
        };
        let phi: Vec<String> = self.phi.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{addr}:{{{}}}", phi.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleLabel {
    Leaf { node: String },
    Op { op: Op, source: SourceName },
}

impl fmt::Display for RuleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleLabel::Leaf { node } => write!(f, "G_{node}"),
            RuleLabel::Op { op, source } => write!(f, "{op}_{source}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub parent: usize,
    pub label: RuleLabel,
    pub children: Vec<usize>,
}

/// What a rule contributes to a tree, shared across automata.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Event {
    /// `C:` plus the renamed constant's canonical form, or `E:` plus op and source.
    pub key: String,
    /// Normalization group: the constant's skeleton, or the op kind.
    pub group: String,
}

/// Where a rule sits in the instance, for feature extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Anchor<'a> {
    Node { label: &'a str },
    Edge { parent: &'a str, child: &'a str },
}

/// A run: the rule used at a state and runs for its children.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub rule: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Run>,
}

impl Run {
    /// Rule ids in pre-order.
    pub fn rule_sequence(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut Vec<usize>) {
        out.push(self.rule);
        for c in &self.children {
            c.collect(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeAutomaton {
    bin: BinTree,
    sources: Vec<SourceName>,
    states: Vec<State>,
    rules: Vec<Rule>,
    finals: Vec<usize>,
    events: Vec<Event>,
    diagnostic: Option<String>,
    by_parent: Vec<Vec<usize>>,
    bottom_up: Vec<usize>,
}

type RawRule = (State, RuleLabel, Vec<State>, Option<f64>);

/// Builds the automaton of all consistent source assignments for `b`.
pub fn build_automaton(b: &BinTree, sources: &[SourceName]) -> TreeAutomaton {
    let mut avail: BTreeMap<&str, BTreeSet<Assignment>> = BTreeMap::new();
    let mut raw: Vec<RawRule> = Vec::new();
    let mut diagnostic = None;
    // reverse pre-order visits children before parents
    for (addr, cell) in b.cells.iter().rev() {
        let mut here = BTreeSet::new();
        match cell {
            BinCell::Leaf { node, constant } => {
                let dom: Vec<SourceName> = constant.ty().all_names().into_iter().collect();
                if dom.len() > sources.len() && diagnostic.is_none() {
                    diagnostic = Some(format!(
                        "constant {node:?} has {} placeholder sources, inventory has {}",
                        dom.len(),
                        sources.len()
                    ));
                }
                for phi in injective_maps(&dom, sources) {
                    let st = State {
                        addr: addr.clone(),
                        phi: phi.clone(),
                    };
                    let label = RuleLabel::Leaf { node: node.clone() };
                    raw.push((st, label, Vec::new(), None));
                    here.insert(phi);
                }
            }
            BinCell::Op { op, source, .. } => {
                let (a0, a1) = (format!("{addr}0"), format!("{addr}1"));
                let empty = BTreeSet::new();
                let left = avail.get(a0.as_str()).unwrap_or(&empty);
                let right = avail.get(a1.as_str()).unwrap_or(&empty);
                for p1 in left {
                    for p2 in right {
                        if !agree(p1, p2) {
                            continue;
                        }
                        let named = match op {
                            Op::App => p1.get(source),
                            Op::Mod => p2.get(source),
                        };
                        let Some(named) = named else { continue };
                        let parent = State {
                            addr: addr.clone(),
                            phi: p1.clone(),
                        };
                        let kids = vec![
                            State {
                                addr: a0.clone(),
                                phi: p1.clone(),
                            },
                            State {
                                addr: a1.clone(),
                                phi: p2.clone(),
                            },
                        ];
                        let label = RuleLabel::Op {
                            op: *op,
                            source: named.clone(),
                        };
                        raw.push((parent, label, kids, None));
                        here.insert(p1.clone());
                    }
                }
                if here.is_empty() && !left.is_empty() && !right.is_empty() && diagnostic.is_none()
                {
                    diagnostic = Some(format!(
                        "no consistent assignment pair at address {}",
                        display_addr(addr)
                    ));
                }
            }
        }
        avail.insert(addr.as_str(), here);
    }
    let (a, _) = assemble(b.clone(), sources.to_vec(), raw, diagnostic)
        .expect("rules built from the tree are consistent with it");
    a
}

fn display_addr(a: &str) -> &str {
    if a.is_empty() {
        "ε"
    } else {
        a
    }
}

fn agree(p1: &Assignment, p2: &Assignment) -> bool {
    p2.iter().all(|(k, v)| p1.get(k).is_none_or(|w| w == v))
}

/// All injective maps from `dom` into `range`, in lexicographic order.
pub fn injective_maps(dom: &[SourceName], range: &[SourceName]) -> Vec<Assignment> {
    fn go(
        dom: &[SourceName],
        range: &[SourceName],
        used: &mut Vec<bool>,
        cur: &mut Assignment,
        out: &mut Vec<Assignment>,
    ) {
        let Some((first, rest)) = dom.split_first() else {
            out.push(cur.clone());
            return;
        };
        for (i, s) in range.iter().enumerate() {
            if used[i] {
                continue;
            }
            used[i] = true;
            cur.insert(first.clone(), s.clone());
            go(rest, range, used, cur, out);
            cur.remove(first);
            used[i] = false;
        }
    }
    let mut out = Vec::new();
    if dom.len() <= range.len() {
        go(
            dom,
            range,
            &mut vec![false; range.len()],
            &mut Assignment::new(),
            &mut out,
        );
    }
    out
}

/// Prunes, sorts and indexes raw rules. Returns the weights carried along.
fn assemble(
    bin: BinTree,
    sources: Vec<SourceName>,
    raw: Vec<RawRule>,
    mut diagnostic: Option<String>,
) -> Result<(TreeAutomaton, Vec<Option<f64>>), AutomatonError> {
    // bottom-up: a state is productive once some rule has productive children
    let mut productive: BTreeSet<&State> = BTreeSet::new();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(raw[i].0.addr.len()));
    for &i in &order {
        let (p, _, kids, _) = &raw[i];
        if kids.iter().all(|k| productive.contains(k)) {
            productive.insert(p);
        }
    }
    // top-down: keep what a final state can reach
    let mut reach: BTreeSet<&State> = productive
        .iter()
        .copied()
        .filter(|s| s.addr.is_empty())
        .collect();
    let mut keep = vec![false; raw.len()];
    for &i in order.iter().rev() {
        let (p, _, kids, _) = &raw[i];
        if reach.contains(p) && kids.iter().all(|k| productive.contains(k)) {
            keep[i] = true;
            reach.extend(kids.iter());
        }
    }
    let states: Vec<State> = reach.into_iter().cloned().collect();
    let sid: BTreeMap<&State, usize> = states.iter().enumerate().map(|(i, s)| (s, i)).collect();

    let mut rules: Vec<(Rule, Option<f64>)> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, (p, label, kids, w)) in raw.iter().enumerate() {
        if !keep[i] {
            continue;
        }
        let rule = Rule {
            parent: sid[p],
            label: label.clone(),
            children: kids.iter().map(|k| sid[k]).collect(),
        };
        let key = (rule.parent, rule.label.clone(), rule.children.clone());
        if !seen.insert(key) {
            return Err(AutomatonError::Mismatch(format!("duplicate rule for {p}")));
        }
        rules.push((rule, *w));
    }
    rules.sort_by(|(a, _), (b, _)| {
        (a.parent, &a.label, &a.children).cmp(&(b.parent, &b.label, &b.children))
    });
    let (rules, weights): (Vec<Rule>, Vec<Option<f64>>) = rules.into_iter().unzip();

    let finals: Vec<usize> = (0..states.len())
        .filter(|&i| states[i].addr.is_empty())
        .collect();
    if finals.is_empty() && diagnostic.is_none() {
        diagnostic = Some("no assignment reaches the root".into());
    }
    if !finals.is_empty() {
        diagnostic = None;
    }
    let mut a = TreeAutomaton {
        bin,
        sources,
        states,
        rules,
        finals,
        events: Vec::new(),
        diagnostic,
        by_parent: Vec::new(),
        bottom_up: Vec::new(),
    };
    a.index()?;
    Ok((a, weights))
}

impl TreeAutomaton {
    /// Rebuilds the derived indices and events; checks every rule against the tree.
    fn index(&mut self) -> Result<(), AutomatonError> {
        self.by_parent = vec![Vec::new(); self.states.len()];
        for (i, r) in self.rules.iter().enumerate() {
            self.by_parent[r.parent].push(i);
        }
        let mut bu: Vec<usize> = (0..self.states.len()).collect();
        bu.sort_by_key(|&i| std::cmp::Reverse(self.states[i].addr.len()));
        self.bottom_up = bu;
        self.events = (0..self.rules.len())
            .map(|i| self.compute_event(i))
            .collect::<Result<_, _>>()?;
        Ok(())
    }

    fn compute_event(&self, i: usize) -> Result<Event, AutomatonError> {
        let r = &self.rules[i];
        let st = &self.states[r.parent];
        let cell = self
            .bin
            .at(&st.addr)
            .ok_or_else(|| AutomatonError::Mismatch(format!("no cell at {st}")))?;
        let mismatch = || AutomatonError::Mismatch(format!("rule {i} does not fit cell at {st}"));
        match (cell, &r.label) {
            (BinCell::Leaf { node, constant }, RuleLabel::Leaf { node: n }) => {
                if node != n || !r.children.is_empty() {
                    return Err(mismatch());
                }
                let renamed = constant.rename_sources(&st.phi)?;
                Ok(Event {
                    key: format!("C:{}", renamed.canonical_key()),
                    group: format!("C:{}", constant.skeleton_key()),
                })
            }
            (BinCell::Op { op, .. }, RuleLabel::Op { op: o, source }) => {
                let ok = op == o
                    && r.children.len() == 2
                    && self.states[r.children[0]].addr == format!("{}0", st.addr)
                    && self.states[r.children[1]].addr == format!("{}1", st.addr);
                if !ok {
                    return Err(mismatch());
                }
                Ok(Event {
                    key: format!("E:{op}_{source}"),
                    group: format!("E:{op}"),
                })
            }
            _ => Err(mismatch()),
        }
    }

    pub fn bin(&self) -> &BinTree {
        &self.bin
    }

    pub fn sources(&self) -> &[SourceName] {
        &self.sources
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn finals(&self) -> &[usize] {
        &self.finals
    }

    pub fn event(&self, rule: usize) -> &Event {
        &self.events[rule]
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Rules whose parent is state `q`, by id.
    pub fn rules_at(&self, q: usize) -> &[usize] {
        &self.by_parent[q]
    }

    /// States ordered so that children come before parents.
    pub fn bottom_up(&self) -> &[usize] {
        &self.bottom_up
    }

    /// Rules whose parent is a final state, by id.
    pub fn root_rules(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .finals
            .iter()
            .flat_map(|&q| self.by_parent[q].iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn is_empty(&self) -> bool {
        self.finals.is_empty()
    }

    /// Why the automaton accepts nothing, if it does not.
    pub fn diagnostic(&self) -> Option<&str> {
        self.diagnostic.as_deref()
    }

    pub fn check_nonempty(&self) -> Result<(), AutomatonError> {
        match self.is_empty() {
            true => Err(AutomatonError::EmptyAutomaton(
                self.diagnostic.clone().unwrap_or_default(),
            )),
            false => Ok(()),
        }
    }

    pub fn anchor(&self, rule: usize) -> Anchor<'_> {
        let st = &self.states[self.rules[rule].parent];
        match self.bin.at(&st.addr).expect("indexed") {
            BinCell::Leaf { node, .. } => Anchor::Node {
                label: self.bin.node_label(node),
            },
            BinCell::Op { parent, child, .. } => Anchor::Edge {
                parent: self.bin.node_label(parent),
                child: self.bin.node_label(child),
            },
        }
    }

    /// Accepted trees per state.
    pub fn state_counts(&self) -> Vec<BigUint> {
        let mut counts = vec![BigUint::zero(); self.states.len()];
        for &q in &self.bottom_up {
            let mut total = BigUint::zero();
            for &r in &self.by_parent[q] {
                total += self.rule_count(r, &counts);
            }
            counts[q] = total;
        }
        counts
    }

    fn rule_count(&self, r: usize, counts: &[BigUint]) -> BigUint {
        self.rules[r]
            .children
            .iter()
            .fold(BigUint::one(), |acc, &c| acc * &counts[c])
    }

    /// Run number `k` in lexicographic order of rule-id sequences.
    pub fn nth_run(&self, k: &BigUint) -> Option<Run> {
        let counts = self.state_counts();
        self.unrank(&self.root_rules(), k.clone(), &counts)
    }

    fn unrank(&self, rules: &[usize], mut k: BigUint, counts: &[BigUint]) -> Option<Run> {
        for &r in rules {
            let c = self.rule_count(r, counts);
            if k >= c {
                k -= c;
                continue;
            }
            let kids = &self.rules[r].children;
            // mixed radix, first child most significant
            let mut idx = vec![BigUint::zero(); kids.len()];
            for (j, &q) in kids.iter().enumerate().rev() {
                idx[j] = &k % &counts[q];
                k /= &counts[q];
            }
            let children = kids
                .iter()
                .zip(idx)
                .map(|(&q, i)| self.unrank(&self.by_parent[q], i, counts))
                .collect::<Option<Vec<_>>>()?;
            return Some(Run { rule: r, children });
        }
        None
    }

    /// Uniform sample from the accepted trees.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Run> {
        let total = count_trees(self);
        if total.is_zero() {
            return None;
        }
        let k = rng.gen_biguint_below(&total);
        self.nth_run(&k)
    }

    /// Checks that `run` is a run of this automaton ending in a final state.
    pub fn check_run(&self, run: &Run) -> Result<(), AutomatonError> {
        let r = self
            .rules
            .get(run.rule)
            .ok_or_else(|| AutomatonError::NotAccepted(format!("unknown rule {}", run.rule)))?;
        if !self.finals.contains(&r.parent) {
            return Err(AutomatonError::NotAccepted("root rule is not final".into()));
        }
        self.check_below(run)
    }

    fn check_below(&self, run: &Run) -> Result<(), AutomatonError> {
        let r = self
            .rules
            .get(run.rule)
            .ok_or_else(|| AutomatonError::NotAccepted(format!("unknown rule {}", run.rule)))?;
        if r.children.len() != run.children.len() {
            return Err(AutomatonError::NotAccepted(format!(
                "rule {} has {} children",
                run.rule,
                r.children.len()
            )));
        }
        for (&q, c) in r.children.iter().zip(&run.children) {
            if self.rules.get(c.rule).map(|x| x.parent) != Some(q) {
                return Err(AutomatonError::NotAccepted(format!(
                    "rule {} does not produce state {}",
                    c.rule, self.states[q]
                )));
            }
            self.check_below(c)?;
        }
        Ok(())
    }

    /// Serializes as `final:` lines followed by one rule per line.
    pub fn to_text(&self) -> String {
        self.to_text_weighted(None)
    }

    pub fn to_text_weighted(&self, weights: Option<&[f64]>) -> String {
        let mut out = String::new();
        for &q in &self.finals {
            out.push_str(&format!("final: {}\n", self.states[q]));
        }
        for (i, r) in self.rules.iter().enumerate() {
            let kids: Vec<String> = r
                .children
                .iter()
                .map(|&c| self.states[c].to_string())
                .collect();
            out.push_str(&format!(
                "{} <- {}({})",
                self.states[r.parent],
                r.label,
                kids.join(", ")
            ));
            if let Some(w) = weights {
                out.push_str(&format!(" # {}", w[i]));
            }
            out.push('\n');
        }
        out
    }

    /// Reads the text form back; the binary tree supplies the constants.
    /// Rule ids are canonical, so line order in the file does not matter.
    pub fn from_text(
        bin: &BinTree,
        sources: &[SourceName],
        text: &str,
    ) -> Result<(TreeAutomaton, Option<Vec<f64>>), AutomatonError> {
        let mut raw = Vec::new();
        let mut finals = BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            let err = |msg: &str| AutomatonError::Parse {
                line: n + 1,
                msg: msg.to_string(),
            };
            if line.is_empty() {
                continue;
            }
            if let Some(st) = line.strip_prefix("final:") {
                finals.insert(parse_state(st.trim()).map_err(|m| err(&m))?);
                continue;
            }
            let (body, weight) = match line.split_once(" # ") {
                Some((b, w)) => (
                    b,
                    Some(w.trim().parse::<f64>().map_err(|e| err(&e.to_string()))?),
                ),
                None => (line, None),
            };
            let (lhs, rhs) = body.split_once(" <- ").ok_or_else(|| err("missing <-"))?;
            let parent = parse_state(lhs.trim()).map_err(|m| err(&m))?;
            let open = rhs.find('(').ok_or_else(|| err("missing ("))?;
            let inner = rhs[open + 1..]
                .strip_suffix(')')
                .ok_or_else(|| err("missing )"))?;
            let label = parse_label(&rhs[..open]).map_err(|m| err(&m))?;
            let children = split_states(inner)
                .into_iter()
                .map(|s| parse_state(&s))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|m| err(&m))?;
            raw.push((parent, label, children, weight));
        }
        let any_weight = raw.iter().any(|r| r.3.is_some());
        if any_weight && raw.iter().any(|r| r.3.is_none()) {
            return Err(AutomatonError::Parse {
                line: 0,
                msg: "weights given for some rules only".into(),
            });
        }
        let (a, w) = assemble(bin.clone(), sources.to_vec(), raw, None)?;
        let got: BTreeSet<State> = a.finals.iter().map(|&q| a.states[q].clone()).collect();
        if got != finals {
            return Err(AutomatonError::Mismatch(
                "final lines disagree with the rules".into(),
            ));
        }
        let weights = any_weight.then(|| w.into_iter().map(|x| x.expect("all weighted")).collect());
        Ok((a, weights))
    }
}

fn parse_state(s: &str) -> Result<State, String> {
    let (addr, phi) = s
        .split_once(':')
        .ok_or_else(|| format!("bad state {s:?}"))?;
    let addr = if addr == "ε" { "" } else { addr };
    if !addr.chars().all(|c| c == '0' || c == '1') {
        return Err(format!("bad address {addr:?}"));
    }
    let body = phi
        .strip_prefix('{')
        .and_then(|p| p.strip_suffix('}'))
        .ok_or_else(|| format!("bad assignment {phi:?}"))?;
    let mut map = Assignment::new();
    for pair in body.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| format!("bad pair {pair:?}"))?;
        map.insert(SourceName::new(k), SourceName::new(v));
    }
    Ok(State {
        addr: addr.to_string(),
        phi: map,
    })
}

fn split_states(s: &str) -> Vec<String> {
    // states contain commas inside braces only
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '{' => depth += 1,
            '}' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn parse_label(s: &str) -> Result<RuleLabel, String> {
    if let Some(node) = s.strip_prefix("G_") {
        return Ok(RuleLabel::Leaf {
            node: node.to_string(),
        });
    }
    let (op, src) = s
        .split_once('_')
        .ok_or_else(|| format!("bad label {s:?}"))?;
    let op = match op {
        "APP" => Op::App,
        "MOD" => Op::Mod,
        _ => return Err(format!("bad op {op:?}")),
    };
    Ok(RuleLabel::Op {
        op,
        source: SourceName::new(src),
    })
}

/// Exact number of accepted trees.
pub fn count_trees(a: &TreeAutomaton) -> BigUint {
    let counts = a.state_counts();
    a.finals.iter().map(|&q| counts[q].clone()).sum()
}

/// The first `limit` accepted runs in lexicographic order of rule ids.
pub fn enumerate(a: &TreeAutomaton, limit: usize) -> Vec<Run> {
    let counts = a.state_counts();
    let roots = a.root_rules();
    let total: BigUint = a.finals.iter().map(|&q| counts[q].clone()).sum();
    let n = if total < BigUint::from(limit) {
        usize::try_from(&total).expect("below a usize")
    } else {
        limit
    };
    (0..n)
        .map(|k| {
            a.unrank(&roots, BigUint::from(k), &counts)
                .expect("index below count")
        })
        .collect()
}

/// Turns a run into a dependency tree over reusable sources.
pub fn reconstruct_tree(a: &TreeAutomaton, run: &Run) -> Result<AmDepTree, AutomatonError> {
    a.check_run(run)?;
    let mut nodes = BTreeMap::new();
    let mut edges = Vec::new();
    let mut root = None;
    let mut stack = vec![run];
    while let Some(r) = stack.pop() {
        let rule = &a.rules[r.rule];
        let st = &a.states[rule.parent];
        match (a.bin.at(&st.addr).expect("indexed"), &rule.label) {
            (BinCell::Leaf { node, constant }, _) => {
                nodes.insert(
                    node.clone(),
                    TreeNode::new(constant.rename_sources(&st.phi)?),
                );
                if st.addr.chars().all(|c| c == '0') {
                    root = Some(node.clone());
                }
            }
            (BinCell::Op { parent, child, .. }, RuleLabel::Op { op, source }) => {
                edges.push(TreeEdge {
                    parent: parent.clone(),
                    child: child.clone(),
                    op: *op,
                    source: source.clone(),
                });
            }
            _ => unreachable!("rules are checked against cells"),
        }
        stack.extend(r.children.iter().rev());
    }
    let root = root.expect("leftmost leaf exists");
    Ok(AmDepTree::new(root, nodes, edges)?)
}
