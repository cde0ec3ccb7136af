//! Weighted automata: inside and outside scores, Viterbi, EM over shared
//! event weights, random baselines, and a log-linear scorer trained on
//! the summed log inside score.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{AmDepTree, SourceName};
use crate::automata::{binarize, build_automaton, Anchor, AutomatonError, Run, TreeAutomaton};
use crate::blobs::BlobHeuristics;
use crate::decompose::decompose;
use crate::graph::{Edge, Node, SemanticGraph};
use crate::par::{self, Exec};

/// Weight per rule id, all positive and finite.
pub type RuleWeights = Vec<f64>;

/// Weight given to events a table has never seen.
pub const UNSEEN_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainingError {
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error("rule {rule} has weight {value}; weights must be positive and finite")]
    InvalidWeight { rule: usize, value: f64 },
    #[error("expected {expected} rule weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("corpus has no usable automaton")]
    EmptyCorpus,
    #[error("non-finite gradient in epoch {epoch} for feature {feature:?}")]
    NonFiniteGradient { epoch: usize, feature: String },
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn log_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn to_log(a: &TreeAutomaton, w: &[f64]) -> Result<Vec<f64>, TrainingError> {
    if w.len() != a.rules().len() {
        return Err(TrainingError::WeightCount {
            expected: a.rules().len(),
            got: w.len(),
        });
    }
    w.iter()
        .enumerate()
        .map(|(rule, &value)| {
            if value > 0.0 && value.is_finite() {
                Ok(value.ln())
            } else {
                Err(TrainingError::InvalidWeight { rule, value })
            }
        })
        .collect()
}

/// Inside scores, and after [`outer_weights`] also outside scores and
/// outer weights; everything in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct InsideOutsideResult {
    pub log_weights: Vec<f64>,
    pub log_inside: Vec<f64>,
    /// Log of the total inside score; negative infinity for an empty automaton.
    pub log_i: f64,
    pub log_outside: Vec<f64>,
    pub log_alpha: Vec<f64>,
}

impl InsideOutsideResult {
    pub fn total(&self) -> f64 {
        self.log_i.exp()
    }

    pub fn is_empty(&self) -> bool {
        self.log_i == f64::NEG_INFINITY
    }

    /// Outer weight of rule `r`, the derivative of I by its weight.
    pub fn alpha(&self, r: usize) -> f64 {
        self.log_alpha[r].exp()
    }

    /// Share of the total weight carried by trees that use rule `r`.
    pub fn posterior(&self, r: usize) -> f64 {
        (self.log_alpha[r] + self.log_weights[r] - self.log_i).exp()
    }
}

pub fn inside(a: &TreeAutomaton, w: &[f64]) -> Result<InsideOutsideResult, TrainingError> {
    Ok(inside_log(a, to_log(a, w)?))
}

/// Inside pass over log weights.
pub fn inside_log(a: &TreeAutomaton, log_weights: Vec<f64>) -> InsideOutsideResult {
    let mut log_inside = vec![f64::NEG_INFINITY; a.states().len()];
    for &q in a.bottom_up() {
        log_inside[q] = log_sum(a.rules_at(q).iter().map(|&r| {
            log_weights[r]
                + a.rules()[r]
                    .children
                    .iter()
                    .map(|&c| log_inside[c])
                    .sum::<f64>()
        }));
    }
    let log_i = log_sum(a.finals().iter().map(|&q| log_inside[q]));
    InsideOutsideResult {
        log_weights,
        log_inside,
        log_i,
        log_outside: Vec::new(),
        log_alpha: Vec::new(),
    }
}

pub fn outer_weights(a: &TreeAutomaton, w: &[f64]) -> Result<InsideOutsideResult, TrainingError> {
    Ok(outer_weights_log(a, to_log(a, w)?))
}

/// Inside and outside passes over log weights.
pub fn outer_weights_log(a: &TreeAutomaton, log_weights: Vec<f64>) -> InsideOutsideResult {
    let mut res = inside_log(a, log_weights);
    let mut out = vec![f64::NEG_INFINITY; a.states().len()];
    for &q in a.finals() {
        out[q] = 0.0;
    }
    let mut alpha = vec![f64::NEG_INFINITY; a.rules().len()];
    for &q in a.bottom_up().iter().rev() {
        for &r in a.rules_at(q) {
            let kids = &a.rules()[r].children;
            let ins: f64 = kids.iter().map(|&c| res.log_inside[c]).sum();
            alpha[r] = out[q] + ins;
            for (j, &c) in kids.iter().enumerate() {
                let others: f64 = kids
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != j)
                    .map(|(_, &d)| res.log_inside[d])
                    .sum();
                out[c] = log_add(out[c], out[q] + res.log_weights[r] + others);
            }
        }
    }
    res.log_outside = out;
    res.log_alpha = alpha;
    res
}

/// Best run and its log weight; ties go to the smallest rule-id sequence.
pub fn viterbi(a: &TreeAutomaton, w: &[f64]) -> Result<(Run, f64), TrainingError> {
    viterbi_log(a, &to_log(a, w)?)
}

pub fn viterbi_log(a: &TreeAutomaton, lw: &[f64]) -> Result<(Run, f64), TrainingError> {
    a.check_nonempty()?;
    let n = a.states().len();
    let mut best: Vec<Option<(f64, Vec<usize>)>> = vec![None; n];
    let consider = |slot: &mut Option<(f64, Vec<usize>)>, score: f64, seq: Vec<usize>| {
        let better = match slot {
            None => true,
            Some((s, q)) => score > *s || (score == *s && seq < *q),
        };
        if better {
            *slot = Some((score, seq));
        }
    };
    for &q in a.bottom_up() {
        let mut slot = None;
        for &r in a.rules_at(q) {
            let mut score = lw[r];
            let mut seq = vec![r];
            for &c in &a.rules()[r].children {
                let (s, cs) = best[c].as_ref().expect("children are productive");
                score += s;
                seq.extend_from_slice(cs);
            }
            consider(&mut slot, score, seq);
        }
        best[q] = slot;
    }
    let mut top = None;
    for &q in a.finals() {
        if let Some((s, seq)) = &best[q] {
            consider(&mut top, *s, seq.clone());
        }
    }
    let (score, seq) = top.expect("nonempty automaton");
    let mut it = seq.into_iter();
    let run = rebuild(a, &mut it);
    Ok((run, score))
}

/// Reads a pre-order rule sequence back into a run.
fn rebuild(a: &TreeAutomaton, seq: &mut impl Iterator<Item = usize>) -> Run {
    let rule = seq.next().expect("sequence covers the run");
    let children = a.rules()[rule]
        .children
        .iter()
        .map(|_| rebuild(a, seq))
        .collect();
    Run { rule, children }
}

/// Global weight per event plus the group each event is normalized in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventTable {
    pub weights: BTreeMap<String, f64>,
    pub groups: BTreeMap<String, String>,
}

impl EventTable {
    pub fn weight(&self, key: &str) -> f64 {
        self.weights.get(key).copied().unwrap_or(UNSEEN_WEIGHT)
    }

    pub fn rule_weights(&self, a: &TreeAutomaton) -> RuleWeights {
        a.events().iter().map(|e| self.weight(&e.key)).collect()
    }

    /// Sums of weights per group.
    pub fn group_totals(&self) -> BTreeMap<&str, f64> {
        let mut out: BTreeMap<&str, f64> = BTreeMap::new();
        for (k, g) in &self.groups {
            *out.entry(g.as_str()).or_default() += self.weights[k];
        }
        out
    }
}

fn collect_events(corpus: &[&TreeAutomaton]) -> BTreeMap<String, String> {
    corpus
        .iter()
        .flat_map(|a| a.events().iter())
        .map(|e| (e.key.clone(), e.group.clone()))
        .collect()
}

fn random_table(events: BTreeMap<String, String>, rng: &mut ChaCha8Rng) -> EventTable {
    let weights = events
        .keys()
        .map(|k| (k.clone(), rng.gen_range(0.1..1.0)))
        .collect();
    EventTable {
        weights,
        groups: events,
    }
}

fn usable(corpus: &[TreeAutomaton]) -> (Vec<&TreeAutomaton>, Vec<usize>) {
    let mut keep = Vec::new();
    let mut skipped = Vec::new();
    for (i, a) in corpus.iter().enumerate() {
        if a.is_empty() {
            skipped.push(i);
        } else {
            keep.push(a);
        }
    }
    (keep, skipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Added to every expected count before renormalizing.
    pub smoothing: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            iterations: 25,
            seed: 0,
            smoothing: 1e-6,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmResult {
    pub table: EventTable,
    /// Corpus log-likelihood before the first and after every iteration.
    pub log_likelihood: Vec<f64>,
    /// Corpus positions of empty automata.
    pub skipped: Vec<usize>,
    pub degenerate_resets: usize,
    /// Iterations whose log-likelihood dropped by more than 1e-9.
    pub monotonicity_violations: usize,
}

/// Expected event counts and log-likelihood of one instance.
fn expected_counts(a: &TreeAutomaton, table: &EventTable) -> (Vec<(String, f64)>, f64) {
    let lw: Vec<f64> = table.rule_weights(a).iter().map(|w| w.ln()).collect();
    let io = outer_weights_log(a, lw);
    let counts = (0..a.rules().len())
        .map(|r| (a.event(r).key.clone(), io.posterior(r)))
        .collect();
    (counts, io.log_i)
}

/// EM over event weights shared across the corpus.
pub fn em_fit(corpus: &[TreeAutomaton], cfg: &EmConfig) -> Result<EmResult, TrainingError> {
    let (live, skipped) = usable(corpus);
    if live.is_empty() {
        return Err(TrainingError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut table = random_table(collect_events(&live), &mut rng);
    let init = table.weights.clone();
    normalize(&mut table, |k| init[k], 0.0);

    let mut lls = Vec::with_capacity(cfg.iterations + 1);
    let mut resets = 0;
    for _ in 0..cfg.iterations {
        let per = par::map(cfg.exec, &live, |a| expected_counts(a, &table));
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        let mut ll = 0.0;
        for (cs, l) in per {
            ll += l;
            for (k, c) in cs {
                *counts.entry(k).or_default() += c;
            }
        }
        lls.push(ll);
        resets += normalize(
            &mut table,
            |k| counts.get(k).copied().unwrap_or(0.0),
            cfg.smoothing,
        );
    }
    let final_ll: f64 = par::map(cfg.exec, &live, |a| {
        inside(a, &table.rule_weights(a)).map(|r| r.log_i)
    })
    .into_iter()
    .sum::<Result<f64, _>>()?;
    lls.push(final_ll);
    let violations = lls.windows(2).filter(|w| w[1] - w[0] < -1e-9).count();
    if violations > 0 {
        log::warn!("EM log-likelihood decreased in {violations} iteration(s)");
    }
    Ok(EmResult {
        table,
        log_likelihood: lls,
        skipped,
        degenerate_resets: resets,
        monotonicity_violations: violations,
    })
}

/// Renormalizes within groups from `mass`; returns how many groups were reset.
fn normalize(table: &mut EventTable, mass: impl Fn(&str) -> f64, eps: f64) -> usize {
    let mut members: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (k, g) in &table.groups {
        members.entry(g.as_str()).or_default().push(k.as_str());
    }
    let mut new = BTreeMap::new();
    let mut resets = 0;
    for (g, keys) in members {
        let raw: f64 = keys.iter().map(|k| mass(k)).sum();
        if !(raw > 0.0 && raw.is_finite()) {
            log::warn!("group {g:?} has no expected mass; resetting it to uniform");
            resets += 1;
            for k in &keys {
                new.insert(k.to_string(), 1.0 / keys.len() as f64);
            }
            continue;
        }
        let total = raw + eps * keys.len() as f64;
        for k in &keys {
            new.insert(k.to_string(), (mass(k) + eps) / total);
        }
    }
    table.weights = new;
    resets
}

/// Random event weights, uniform on [0.1, 1.0).
pub fn random_weights_baseline(corpus: &[TreeAutomaton], seed: u64) -> EventTable {
    let (live, _) = usable(corpus);
    random_table(collect_events(&live), &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Viterbi run under an event table.
pub fn viterbi_table(a: &TreeAutomaton, t: &EventTable) -> Result<(Run, f64), TrainingError> {
    viterbi(a, &t.rule_weights(a))
}

/// One accepted tree drawn uniformly.
pub fn random_tree_baseline(a: &TreeAutomaton, seed: u64) -> Result<Run, TrainingError> {
    a.check_nonempty()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(a.sample_uniform(&mut rng).expect("nonempty automaton"))
}

/// Log-linear rule scorer; a missing feature has weight zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    pub params: BTreeMap<String, f64>,
}

/// The single feature a rule fires: its event conjoined with the node
/// label of a constant, or with the two labels an edge connects.
pub fn rule_feature(a: &TreeAutomaton, r: usize) -> String {
    let ev = &a.event(r).key;
    match a.anchor(r) {
        Anchor::Node { label } => format!("N|{label}|{ev}"),
        Anchor::Edge { parent, child } => format!("P|{parent}|{child}|{ev}"),
    }
}

impl Scorer {
    pub fn score(&self, a: &TreeAutomaton, r: usize) -> f64 {
        self.params.get(&rule_feature(a, r)).copied().unwrap_or(0.0)
    }

    /// Every feature the corpus fires, at zero.
    pub fn zero_for(corpus: &[TreeAutomaton]) -> Self {
        let params = corpus
            .iter()
            .flat_map(|a| (0..a.rules().len()).map(move |r| rule_feature(a, r)))
            .map(|f| (f, 0.0))
            .collect();
        Scorer { params }
    }
}

/// Rule weights `exp(score)`.
pub fn score_rules(s: &Scorer, a: &TreeAutomaton) -> RuleWeights {
    score_rules_log(s, a).into_iter().map(f64::exp).collect()
}

pub fn score_rules_log(s: &Scorer, a: &TreeAutomaton) -> Vec<f64> {
    (0..a.rules().len()).map(|r| s.score(a, r)).collect()
}

/// Log inside score and its gradient by the scorer's parameters.
pub fn log_inside_gradient(s: &Scorer, a: &TreeAutomaton) -> (f64, BTreeMap<String, f64>) {
    let io = outer_weights_log(a, score_rules_log(s, a));
    let mut grad: BTreeMap<String, f64> = BTreeMap::new();
    for r in 0..a.rules().len() {
        *grad.entry(rule_feature(a, r)).or_default() += io.posterior(r);
    }
    (io.log_i, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Instances per update; zero means the whole corpus.
    pub batch: usize,
    pub seed: u64,
    /// Strength of the squared-norm penalty, scaled by batch share.
    pub l2: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            epochs: 30,
            lr: 0.1,
            batch: 0,
            seed: 0,
            l2: 0.01,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointResult {
    pub scorer: Scorer,
    /// Mean log inside before training and after each epoch.
    pub mean_log_inside: Vec<f64>,
    pub skipped: Vec<usize>,
}

/// Gradient ascent on the summed log inside score, starting from `init`
/// (or zero).
pub fn joint_fit(
    corpus: &[TreeAutomaton],
    cfg: &JointConfig,
    init: Option<Scorer>,
) -> Result<JointResult, TrainingError> {
    let (live, skipped) = usable(corpus);
    if live.is_empty() {
        return Err(TrainingError::EmptyCorpus);
    }
    let owned: Vec<TreeAutomaton> = live.iter().map(|a| (*a).clone()).collect();
    let mut scorer = Scorer::zero_for(&owned);
    if let Some(init) = init {
        scorer.params.extend(init.params);
    }
    let n = live.len();
    let batch = if cfg.batch == 0 { n } else { cfg.batch.min(n) };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mean = |s: &Scorer| {
        par::map(cfg.exec, &live, |a| {
            inside_log(a, score_rules_log(s, a)).log_i
        })
        .into_iter()
        .sum::<f64>()
            / n as f64
    };
    let mut history = vec![mean(&scorer)];
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let items: Vec<&TreeAutomaton> = chunk.iter().map(|&i| live[i]).collect();
            let grads = par::map(cfg.exec, &items, |a| log_inside_gradient(&scorer, a).1);
            let mut total: BTreeMap<String, f64> = BTreeMap::new();
            for g in grads {
                for (f, v) in g {
                    *total.entry(f).or_default() += v;
                }
            }
            let share = chunk.len() as f64 / n as f64;
            let mut steps = Vec::with_capacity(scorer.params.len());
            for (f, &theta) in &scorer.params {
                let g = total.get(f).copied().unwrap_or(0.0) - cfg.l2 * share * theta;
                if !g.is_finite() {
                    return Err(TrainingError::NonFiniteGradient {
                        epoch,
                        feature: f.clone(),
                    });
                }
                steps.push(cfg.lr * g);
            }
            for (theta, step) in scorer.params.values_mut().zip(steps) {
                if step != 0.0 {
                    *theta += step;
                }
            }
        }
        history.push(mean(&scorer));
    }
    Ok(JointResult {
        scorer,
        mean_log_inside: history,
        skipped,
    })
}

/// Entropy in nats of the constants used across `trees`, compared by
/// canonical form. REF leaves are not constants and are ignored.
pub fn constant_entropy(trees: &[AmDepTree]) -> f64 {
    let hist = constant_histogram(trees);
    let n: usize = hist.values().sum();
    if n == 0 {
        return 0.0;
    }
    let h: f64 = hist
        .values()
        .map(|&c| {
            let f = c as f64 / n as f64;
            f * f.ln()
        })
        .sum();
    if h == 0.0 {
        0.0
    } else {
        -h
    }
}

pub fn constant_histogram(trees: &[AmDepTree]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for t in trees {
        for n in t.nodes().values().filter(|n| !n.is_ref()) {
            *out.entry(n.constant.canonical_key()).or_default() += 1;
        }
    }
    out
}

/// Counts of `OP_source` edge labels.
pub fn edge_histogram(trees: &[AmDepTree]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for t in trees {
        for e in t.edges() {
            *out.entry(format!("{}_{}", e.op, e.source)).or_default() += 1;
        }
    }
    out
}

/// Synthetic corpus where every instance has exactly two namings: a head
/// with one argument, automata over two source names. Labels come from a
/// small vocabulary, so constant and edge events recur across instances.
pub fn two_way_corpus(n: usize, seed: u64) -> Vec<TreeAutomaton> {
    const HEADS: &[&str] = &["glow", "sparkle", "sing", "sleep", "shine"];
    const ARGS: &[&str] = &["fairy", "wizard", "tree", "star"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources: Vec<SourceName> = vec!["s1".into(), "s2".into()];
    (0..n)
        .map(|i| {
            let h = HEADS[rng.gen_range(0..HEADS.len())];
            let x = ARGS[rng.gen_range(0..ARGS.len())];
            let g = SemanticGraph::new(
                format!("amb{i}"),
                vec![Node::new("h", h), Node::new("x", x)],
                vec![Edge::new("h", "x", "ARG0")],
                "h",
            )
            .expect("valid graph");
            let t = decompose(&g, &BlobHeuristics::default(), &Default::default())
                .expect("a single edge decomposes");
            build_automaton(&binarize(&t).expect("well-typed"), &sources)
        })
        .collect()
}

/// The reusable source name of every APP and MOD edge of a run, in tree order.
pub fn run_edge_sources(a: &TreeAutomaton, run: &Run) -> Vec<String> {
    run.rule_sequence()
        .into_iter()
        .filter_map(|r| match &a.rules()[r].label {
            crate::automata::RuleLabel::Op { source, .. } => Some(source.to_string()),
            crate::automata::RuleLabel::Leaf { .. } => None,
        })
        .collect()
}
