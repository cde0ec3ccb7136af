//! On-disk formats shared by the subcommands.

use std::fs;
use std::path::Path;

use am_decomp::algebra::{AmDepTree, SourceName};
use am_decomp::automata::{binarize, TreeAutomaton};
use am_decomp::training::{EventTable, Scorer};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::manifest::write_json;

/// One line of a trees file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEntry {
    pub id: String,
    pub tree: AmDepTree,
    /// Further analyses, when all unrollings were requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<AmDepTree>,
    /// Log weight of the tree under the weights that picked it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_weight: Option<f64>,
}

impl TreeEntry {
    pub fn new(id: &str, tree: AmDepTree) -> Self {
        TreeEntry {
            id: id.to_string(),
            tree,
            alternatives: Vec::new(),
            log_weight: None,
        }
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_trees(path: &Path) -> Result<Vec<TreeEntry>> {
    read_json(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutomatonStatus {
    Ok,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub file: String,
    pub status: AutomatonStatus,
    pub states: usize,
    pub rules: usize,
    /// Decimal, since counts outgrow any fixed-width integer.
    pub count: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// `index.json` of an automata directory. The trees the automata were built
/// from sit next to it in `trees.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutomataIndex {
    pub sources: Vec<SourceName>,
    pub entries: Vec<IndexEntry>,
}

pub const INDEX_FILE: &str = "index.json";
pub const TREES_FILE: &str = "trees.json";

pub struct LoadedAutomaton {
    pub id: String,
    pub automaton: TreeAutomaton,
    pub diagnostic: Option<String>,
}

/// Reads every automaton of a directory, checking each text file against
/// the binarized tree it came from.
pub fn load_automata(dir: &Path) -> Result<(AutomataIndex, Vec<LoadedAutomaton>)> {
    let index: AutomataIndex = read_json(&dir.join(INDEX_FILE))?;
    let trees = read_trees(&dir.join(TREES_FILE))?;
    if trees.len() != index.entries.len() {
        bail!(
            "{} lists {} automata but {} has {} trees",
            INDEX_FILE,
            index.entries.len(),
            TREES_FILE,
            trees.len()
        );
    }
    let mut out = Vec::with_capacity(trees.len());
    for (e, t) in index.entries.iter().zip(trees) {
        if e.id != t.id {
            bail!("index entry {:?} does not match tree {:?}", e.id, t.id);
        }
        let path = dir.join(&e.file);
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let bin = binarize(&t.tree).with_context(|| format!("binarizing {}", e.id))?;
        let (automaton, _) = TreeAutomaton::from_text(&bin, &index.sources, &text)
            .with_context(|| format!("loading {}", path.display()))?;
        out.push(LoadedAutomaton {
            id: e.id.clone(),
            automaton,
            diagnostic: e.diagnostic.clone(),
        });
    }
    Ok((index, out))
}

/// Either kind of weights `viterbi` accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightsFile {
    Em {
        iterations: usize,
        seed: u64,
        smoothing: f64,
        log_likelihood: Vec<f64>,
        degenerate_resets: usize,
        table: EventTable,
    },
    RandomWeights {
        seed: u64,
        table: EventTable,
    },
    Scorer {
        epochs: usize,
        lr: f64,
        batch: usize,
        seed: u64,
        l2: f64,
        mean_log_inside: Vec<f64>,
        scorer: Scorer,
    },
}

pub fn write_trees(path: &Path, entries: &[TreeEntry]) -> Result<()> {
    write_json(path, &entries)
}
