use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use am_decomp::algebra::{default_sources, gen_random_tree, AmDepTree, GeneratorConfig};
use am_decomp::automata::{
    binarize, build_automaton, count_trees, reconstruct_tree, TreeAutomaton,
};
use am_decomp::blobs::BlobHeuristics;
use am_decomp::decompose::{
    decompose as decompose_graph, decompose_all, DecomposeError, DecomposeOptions, TieBreak,
};
use am_decomp::figures::figure_graphs;
use am_decomp::graph::{is_isomorphic, read_corpus, SemanticGraph};
use am_decomp::par::{self, Exec};
use am_decomp::training::{
    constant_entropy, constant_histogram, edge_histogram, em_fit, joint_fit, random_tree_baseline,
    random_weights_baseline, score_rules_log, viterbi_log, EmConfig, JointConfig,
};
use anyhow::{anyhow, bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::files::{
    load_automata, read_json, read_trees, write_trees, AutomataIndex, AutomatonStatus, IndexEntry,
    TreeEntry, WeightsFile, INDEX_FILE, TREES_FILE,
};
use crate::manifest::{manifest_path, write_atomic, write_json, RunManifest};
use crate::{
    BuildArgs, CountArgs, DecomposeArgs, GenArgs, Outcome, PipelineArgs, StatsArgs, TrainEmArgs,
    TrainJointArgs, VerifyArgs, ViterbiArgs,
};

/// Writes to stdout; a reader that went away early is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn finish(m: &RunManifest, out: &Path, started: Instant) -> Result<()> {
    m.write(&manifest_path(out), started)
}

/// Per-instance seed, independent of how work is scheduled.
fn instance_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn heuristics(path: Option<&Path>) -> Result<BlobHeuristics> {
    match path {
        Some(p) => Ok(BlobHeuristics::load(p)?),
        None => Ok(BlobHeuristics::default()),
    }
}

pub fn gen(a: &GenArgs) -> Result<Outcome> {
    let started = Instant::now();
    let cfg = GeneratorConfig {
        max_nodes: a.max_nodes,
        max_sources: a.sources.min(3),
        sources: default_sources(a.sources),
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let seeds: Vec<u64> = (0..a.n).map(|_| rng.gen()).collect();
    let made = par::map_indexed(Exec::Parallel, &seeds, |i, &s| -> Result<_> {
        let t = gen_random_tree(&cfg, s)?;
        let g = t.evaluate()?.with_id(format!("g{i}"));
        Ok((g, TreeEntry::new(&format!("g{i}"), t)))
    });
    let (graphs, trees): (Vec<SemanticGraph>, Vec<TreeEntry>) = made
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    fs::create_dir_all(&a.out)?;
    let gp = a.out.join("graphs.json");
    let tp = a.out.join("gold-trees.json");
    write_json(&gp, &graphs)?;
    write_trees(&tp, &trees)?;
    let mut m = RunManifest::new(
        "gen",
        json!({"n": a.n, "max_nodes": a.max_nodes, "sources": a.sources}),
    );
    m.seeds.insert("seed".into(), a.seed);
    m.output("graphs", &gp)?;
    m.output("gold_trees", &tp)?;
    m.count("graphs", graphs.len());
    finish(&m, &a.out, started)?;
    Ok(Outcome::Success)
}

#[derive(Debug, Serialize)]
struct DecomposeStatus {
    id: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    analyses: Option<usize>,
}

pub fn decompose(a: &DecomposeArgs) -> Result<Outcome> {
    let started = Instant::now();
    let graphs = read_corpus(&a.graphs)?;
    let h = heuristics(a.blobs.as_deref())?;
    let tie_break: TieBreak = a.tie_break.parse().map_err(|e: String| anyhow!(e))?;
    let opts = DecomposeOptions {
        tie_break,
        ..Default::default()
    };
    let results = par::map(Exec::Parallel, &graphs, |g| {
        let first = decompose_graph(g, &h, &opts)?;
        let mut entry = TreeEntry::new(&g.id, first);
        if a.enumerate_unrollings {
            let key = entry.tree.shape_key();
            entry.alternatives = decompose_all(g, &h, &opts)?
                .into_iter()
                .filter(|t| t.shape_key() != key)
                .collect();
        }
        Ok::<_, DecomposeError>(entry)
    });
    let mut trees = Vec::new();
    let mut report = Vec::new();
    let (mut skipped, mut failed) = (0, 0);
    for (g, r) in graphs.iter().zip(results) {
        let status = match r {
            Ok(e) => {
                let n = 1 + e.alternatives.len();
                trees.push(e);
                DecomposeStatus {
                    id: g.id.clone(),
                    status: "ok",
                    reason: None,
                    analyses: Some(n),
                }
            }
            Err(e) if e.is_non_decomposable() => {
                skipped += 1;
                log::info!("skipping {}: {e}", g.id);
                DecomposeStatus {
                    id: g.id.clone(),
                    status: "non_decomposable",
                    reason: Some(e.to_string()),
                    analyses: None,
                }
            }
            Err(e) => {
                failed += 1;
                log::error!("{}: {e}", g.id);
                DecomposeStatus {
                    id: g.id.clone(),
                    status: "failed",
                    reason: Some(e.to_string()),
                    analyses: None,
                }
            }
        };
        report.push(status);
    }
    write_trees(&a.out, &trees)?;
    let report_path = a
        .report
        .clone()
        .unwrap_or_else(|| sibling(&a.out, "report"));
    write_json(&report_path, &report)?;
    let mut m = RunManifest::new(
        "decompose",
        json!({"tie_break": tie_break.to_string(), "enumerate_unrollings": a.enumerate_unrollings}),
    );
    if let TieBreak::Seeded(k) = tie_break {
        m.seeds.insert("tie_break".into(), k);
    }
    m.input("graphs", &a.graphs)?;
    if let Some(b) = &a.blobs {
        m.input("blobs", b)?;
    }
    m.output("trees", &a.out)?;
    m.output("report", &report_path)?;
    m.count("graphs", graphs.len());
    m.count("decomposed", trees.len());
    m.count("skipped_non_decomposable", skipped);
    m.count("failed", failed);
    finish(&m, &a.out, started)?;
    if failed > 0 {
        bail!(
            "{failed} graph(s) failed to decompose; see {}",
            report_path.display()
        );
    }
    Ok(Outcome::from_skips(skipped))
}

/// `dir/x.json` with tag `report` gives `dir/x.report.json`.
fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{tag}.json"))
}

fn file_name_for(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.auto")
}

pub fn build_automata(a: &BuildArgs) -> Result<Outcome> {
    let started = Instant::now();
    if a.sources == 0 {
        bail!("--sources must be at least 1");
    }
    let trees = read_trees(&a.trees)?;
    let sources = default_sources(a.sources);
    let built = par::map(Exec::Parallel, &trees, |e| -> Result<TreeAutomaton> {
        let bin = binarize(&e.tree).with_context(|| format!("binarizing {}", e.id))?;
        Ok(build_automaton(&bin, &sources))
    });
    fs::create_dir_all(&a.out)?;
    let mut entries = Vec::with_capacity(trees.len());
    let mut names = BTreeSet::new();
    let mut empty = 0;
    for (e, auto) in trees.iter().zip(built) {
        let auto = auto?;
        let mut file = file_name_for(&e.id);
        if !names.insert(file.clone()) {
            file = format!("{}-{}", names.len(), file);
            names.insert(file.clone());
        }
        write_atomic(&a.out.join(&file), auto.to_text().as_bytes())?;
        let status = if auto.is_empty() {
            empty += 1;
            log::warn!(
                "{}: empty automaton, skipped ({})",
                e.id,
                auto.diagnostic().unwrap_or("")
            );
            AutomatonStatus::Empty
        } else {
            AutomatonStatus::Ok
        };
        entries.push(IndexEntry {
            id: e.id.clone(),
            file,
            status,
            states: auto.states().len(),
            rules: auto.rules().len(),
            count: count_trees(&auto).to_string(),
            diagnostic: auto.diagnostic().map(str::to_string),
        });
    }
    let plain: Vec<TreeEntry> = trees
        .iter()
        .map(|e| TreeEntry::new(&e.id, e.tree.clone()))
        .collect();
    write_trees(&a.out.join(TREES_FILE), &plain)?;
    let index = AutomataIndex { sources, entries };
    write_json(&a.out.join(INDEX_FILE), &index)?;
    let mut m = RunManifest::new("build-automata", json!({"sources": a.sources}));
    m.input("trees", &a.trees)?;
    m.output("automata", &a.out)?;
    m.count("automata", trees.len());
    m.count("empty_automata", empty);
    m.count(
        "states",
        index.entries.iter().map(|e| e.states).sum::<usize>(),
    );
    m.count(
        "rules",
        index.entries.iter().map(|e| e.rules).sum::<usize>(),
    );
    finish(&m, &a.out, started)?;
    Ok(Outcome::from_skips(empty))
}

pub fn count(a: &CountArgs) -> Result<Outcome> {
    let (_, autos) = load_automata(&a.automata)?;
    let mut text = String::new();
    for l in &autos {
        text.push_str(&format!("{}\t{}\n", l.id, count_trees(&l.automaton)));
    }
    emit(&text)?;
    Ok(Outcome::Success)
}

pub fn train_em(a: &TrainEmArgs) -> Result<Outcome> {
    let started = Instant::now();
    let (_, autos) = load_automata(&a.automata)?;
    let corpus: Vec<TreeAutomaton> = autos.into_iter().map(|l| l.automaton).collect();
    let skipped = corpus.iter().filter(|x| x.is_empty()).count();
    let mut m = RunManifest::new(
        "train-em",
        json!({"iters": a.iters, "smoothing": a.smoothing, "random_weights": a.random_weights}),
    );
    m.seeds.insert("seed".into(), a.seed);
    let file = if a.random_weights {
        let table = random_weights_baseline(&corpus, a.seed);
        m.count("events", table.weights.len());
        WeightsFile::RandomWeights {
            seed: a.seed,
            table,
        }
    } else {
        let cfg = EmConfig {
            iterations: a.iters,
            seed: a.seed,
            smoothing: a.smoothing,
            ..Default::default()
        };
        let res = em_fit(&corpus, &cfg)?;
        m.count("events", res.table.weights.len());
        m.count("degenerate_resets", res.degenerate_resets);
        m.count("monotonicity_violations", res.monotonicity_violations);
        WeightsFile::Em {
            iterations: a.iters,
            seed: a.seed,
            smoothing: a.smoothing,
            log_likelihood: res.log_likelihood,
            degenerate_resets: res.degenerate_resets,
            table: res.table,
        }
    };
    write_json(&a.out, &file)?;
    m.input("automata", &a.automata)?;
    m.output("weights", &a.out)?;
    m.count("instances", corpus.len() - skipped);
    m.count("skipped_empty", skipped);
    finish(&m, &a.out, started)?;
    Ok(Outcome::from_skips(skipped))
}

pub fn train_joint(a: &TrainJointArgs) -> Result<Outcome> {
    let started = Instant::now();
    let graphs = read_corpus(&a.corpus)?;
    let (_, autos) = load_automata(&a.automata)?;
    let known: BTreeSet<&str> = graphs.iter().map(|g| g.id.as_str()).collect();
    if let Some(l) = autos.iter().find(|l| !known.contains(l.id.as_str())) {
        bail!(
            "automaton {:?} has no graph in {}",
            l.id,
            a.corpus.display()
        );
    }
    let corpus: Vec<TreeAutomaton> = autos.into_iter().map(|l| l.automaton).collect();
    let cfg = JointConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch: a.batch,
        seed: a.seed,
        l2: a.l2,
        ..Default::default()
    };
    let res = joint_fit(&corpus, &cfg, None)?;
    let skipped = res.skipped.len();
    let file = WeightsFile::Scorer {
        epochs: a.epochs,
        lr: a.lr,
        batch: a.batch,
        seed: a.seed,
        l2: a.l2,
        mean_log_inside: res.mean_log_inside,
        scorer: res.scorer,
    };
    write_json(&a.out, &file)?;
    let mut m = RunManifest::new(
        "train-joint",
        json!({"epochs": a.epochs, "lr": a.lr, "batch": a.batch, "l2": a.l2}),
    );
    m.seeds.insert("seed".into(), a.seed);
    m.input("corpus", &a.corpus)?;
    m.input("automata", &a.automata)?;
    m.output("scorer", &a.out)?;
    m.count("instances", corpus.len() - skipped);
    m.count("skipped_empty", skipped);
    finish(&m, &a.out, started)?;
    Ok(Outcome::from_skips(skipped))
}

pub fn viterbi(a: &ViterbiArgs) -> Result<Outcome> {
    let started = Instant::now();
    let (_, autos) = load_automata(&a.automata)?;
    let weights: Option<WeightsFile> = a.weights.as_deref().map(read_json).transpose()?;
    let decoded = par::map_indexed(
        Exec::Parallel,
        &autos,
        |i, l| -> Result<Option<TreeEntry>> {
            let auto = &l.automaton;
            if auto.is_empty() {
                return Ok(None);
            }
            let (run, lw) = match &weights {
                None => (random_tree_baseline(auto, instance_seed(a.seed, i))?, None),
                Some(WeightsFile::Em { table, .. } | WeightsFile::RandomWeights { table, .. }) => {
                    let lw: Vec<f64> = table.rule_weights(auto).iter().map(|w| w.ln()).collect();
                    let (run, s) = viterbi_log(auto, &lw)?;
                    (run, Some(s))
                }
                Some(WeightsFile::Scorer { scorer, .. }) => {
                    let (run, s) = viterbi_log(auto, &score_rules_log(scorer, auto))?;
                    (run, Some(s))
                }
            };
            let mut e = TreeEntry::new(&l.id, reconstruct_tree(auto, &run)?);
            e.log_weight = lw;
            Ok(Some(e))
        },
    );
    let mut out = Vec::new();
    let mut skipped = 0;
    for d in decoded {
        match d? {
            Some(e) => out.push(e),
            None => skipped += 1,
        }
    }
    write_trees(&a.out, &out)?;
    let mut m = RunManifest::new("viterbi", json!({"random_trees": a.random_trees}));
    if a.random_trees {
        m.seeds.insert("seed".into(), a.seed);
    }
    m.input("automata", &a.automata)?;
    if let Some(w) = &a.weights {
        m.input("weights", w)?;
    }
    m.output("trees", &a.out)?;
    m.count("decoded", out.len());
    m.count("skipped_empty", skipped);
    finish(&m, &a.out, started)?;
    Ok(Outcome::from_skips(skipped))
}

#[derive(Debug, Serialize)]
pub struct Verdict {
    pub id: String,
    pub verdict: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub missing: usize,
    pub instances: Vec<Verdict>,
}

fn check_tree(g: &SemanticGraph, t: &AmDepTree) -> Result<(), String> {
    let ty = t
        .check_well_typed()
        .map_err(|e| format!("NotWellTyped: {e}"))?;
    if !ty.is_empty() {
        return Err(format!("NotWellTyped: root type {ty} is not empty"));
    }
    let h = t.evaluate().map_err(|e| format!("EvaluationFailed: {e}"))?;
    if !is_isomorphic(g, &h) {
        return Err("NotIsomorphic: evaluation differs from the graph".into());
    }
    Ok(())
}

pub fn verify_entries(graphs: &[SemanticGraph], trees: &[TreeEntry]) -> Result<VerifyReport> {
    let by_id: BTreeMap<&str, &TreeEntry> = trees.iter().map(|e| (e.id.as_str(), e)).collect();
    let known: BTreeSet<&str> = graphs.iter().map(|g| g.id.as_str()).collect();
    if let Some(e) = trees.iter().find(|e| !known.contains(e.id.as_str())) {
        bail!("tree {:?} has no graph with that id", e.id);
    }
    let instances = par::map(Exec::Parallel, graphs, |g| match by_id.get(g.id.as_str()) {
        None => Verdict {
            id: g.id.clone(),
            verdict: "missing",
            error: None,
        },
        Some(e) => match check_tree(g, &e.tree) {
            Ok(()) => Verdict {
                id: g.id.clone(),
                verdict: "pass",
                error: None,
            },
            Err(err) => Verdict {
                id: g.id.clone(),
                verdict: "fail",
                error: Some(err),
            },
        },
    });
    let tally = |v: &str| instances.iter().filter(|x| x.verdict == v).count();
    Ok(VerifyReport {
        total: instances.len(),
        passed: tally("pass"),
        failed: tally("fail"),
        missing: tally("missing"),
        instances,
    })
}

pub fn verify(a: &VerifyArgs) -> Result<Outcome> {
    let graphs = read_corpus(&a.graphs)?;
    let trees = read_trees(&a.trees)?;
    let report = verify_entries(&graphs, &trees)?;
    match &a.report {
        Some(p) => write_json(p, &report)?,
        None => emit(&format!("{}\n", serde_json::to_string_pretty(&report)?))?,
    }
    if report.failed > 0 {
        bail!(
            "{} of {} instance(s) failed verification",
            report.failed,
            report.total
        );
    }
    Ok(Outcome::from_skips(report.missing))
}

pub fn tree_stats(trees: &[AmDepTree]) -> serde_json::Value {
    json!({
        "trees": trees.len(),
        "constants": constant_histogram(trees).values().sum::<usize>(),
        "constant_entropy_nats": constant_entropy(trees),
        "constant_histogram": constant_histogram(trees),
        "edge_histogram": edge_histogram(trees),
    })
}

pub fn stats(a: &StatsArgs) -> Result<Outcome> {
    let trees: Vec<AmDepTree> = read_trees(&a.trees)?.into_iter().map(|e| e.tree).collect();
    let s = tree_stats(&trees);
    if let Some(out) = &a.out {
        write_json(out, &s)?;
    }
    emit(&format!("{}\n", serde_json::to_string_pretty(&s)?))?;
    Ok(Outcome::Success)
}

pub fn pipeline(a: &PipelineArgs) -> Result<Outcome> {
    let started = Instant::now();
    fs::create_dir_all(&a.out)?;
    let graphs_path = match (&a.graphs, a.demo) {
        (Some(p), _) => p.clone(),
        (None, true) => {
            let p = a.out.join("graphs.json");
            write_json(&p, &figure_graphs())?;
            p
        }
        (None, false) => bail!("either --graphs or --demo is required"),
    };
    let stage = |name: &'static str| move |e: anyhow::Error| e.context(format!("stage {name}"));

    let trees = a.out.join("trees.json");
    let report = a.out.join("decompose-report.json");
    let mut outcome = decompose(&DecomposeArgs {
        graphs: graphs_path.clone(),
        blobs: a.blobs.clone(),
        tie_break: "sorted".into(),
        enumerate_unrollings: false,
        out: trees.clone(),
        report: Some(report.clone()),
    })
    .map_err(stage("decompose"))?;

    let automata = a.out.join("automata");
    outcome = outcome.and(
        build_automata(&BuildArgs {
            trees: trees.clone(),
            sources: a.sources,
            out: automata.clone(),
        })
        .map_err(stage("build-automata"))?,
    );

    let index: AutomataIndex = read_json(&automata.join(INDEX_FILE))?;
    let usable = index
        .entries
        .iter()
        .filter(|e| e.status == AutomatonStatus::Ok)
        .count();
    let theta = a.out.join("theta.json");
    let best = a.out.join("best-trees.json");
    let scorer = a.out.join("scorer.json");
    if usable > 0 {
        train_em(&TrainEmArgs {
            automata: automata.clone(),
            iters: a.iters,
            seed: a.seed,
            smoothing: 1e-6,
            random_weights: false,
            out: theta.clone(),
        })
        .map_err(stage("train-em"))?;
        viterbi(&ViterbiArgs {
            automata: automata.clone(),
            weights: Some(theta.clone()),
            random_trees: false,
            seed: a.seed,
            out: best.clone(),
        })
        .map_err(stage("viterbi"))?;
        if a.epochs > 0 {
            train_joint(&TrainJointArgs {
                corpus: graphs_path.clone(),
                automata: automata.clone(),
                epochs: a.epochs,
                lr: 0.1,
                batch: 0,
                seed: a.seed,
                l2: 0.01,
                out: scorer.clone(),
            })
            .map_err(stage("train-joint"))?;
        }
    } else {
        log::warn!("no usable automaton; training and decoding skipped");
        write_trees(&best, &[])?;
    }
    let best_trees: Vec<AmDepTree> = read_trees(&best)?.into_iter().map(|e| e.tree).collect();
    let stats_path = a.out.join("stats.json");
    write_json(&stats_path, &tree_stats(&best_trees))?;

    let graphs = read_corpus(&graphs_path)?;
    let decomposed = read_trees(&trees)?.len();
    let mut m = RunManifest::new(
        "pipeline",
        json!({"demo": a.demo, "sources": a.sources, "iters": a.iters, "epochs": a.epochs}),
    );
    m.seeds.insert("seed".into(), a.seed);
    m.input("graphs", &graphs_path)?;
    if let Some(b) = &a.blobs {
        m.input("blobs", b)?;
    }
    m.output("trees", &trees)?;
    m.output("decompose_report", &report)?;
    m.output("automata", &automata)?;
    if usable > 0 {
        m.output("theta", &theta)?;
        if a.epochs > 0 {
            m.output("scorer", &scorer)?;
        }
    }
    m.output("best_trees", &best)?;
    m.output("stats", &stats_path)?;
    m.count("graphs", graphs.len());
    m.count("decomposed", decomposed);
    m.count("skipped_non_decomposable", graphs.len() - decomposed);
    m.count("skipped_empty_automaton", index.entries.len() - usable);
    m.count("decoded", best_trees.len());
    m.write(&a.out.join("manifest.json"), started)?;
    Ok(outcome)
}
