//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints its verdict line whether it passes or not.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use am_decomp::algebra::{default_sources, gen_random_tree, AmDepTree, GeneratorConfig, SGraph};
use am_decomp::automata::{binarize, build_automaton, count_trees, enumerate, reconstruct_tree};
use am_decomp::automata::{Run, TreeAutomaton};
use am_decomp::blobs::BlobHeuristics;
use am_decomp::decompose::{decompose, DecomposeOptions};
use am_decomp::figures::{figure, FIGURE_IDS};
use am_decomp::graph::{is_isomorphic, SemanticGraph};
use am_decomp::par::{self, Exec};
use am_decomp::training::{
    constant_entropy, em_fit, inside, inside_log, log_inside_gradient, outer_weights,
    run_edge_sources, score_rules, score_rules_log, two_way_corpus, viterbi_table, EmConfig,
    Scorer,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Verdict = Result<String, String>;
type Check<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

fn decompose_default(g: &SemanticGraph) -> Result<AmDepTree, String> {
    decompose(g, &BlobHeuristics::default(), &DecomposeOptions::default())
        .map_err(|e| e.to_string())
}

fn evaluates_to(t: &AmDepTree, g: &SemanticGraph) -> Result<(), String> {
    let ty = t.check_well_typed().map_err(|e| e.to_string())?;
    if !ty.is_empty() {
        return Err(format!("root type {ty}"));
    }
    let h = t.evaluate().map_err(|e| e.to_string())?;
    if is_isomorphic(g, &h) {
        Ok(())
    } else {
        Err("evaluation not isomorphic".into())
    }
}

fn gen_graph(cfg: &GeneratorConfig, seed: u64) -> SemanticGraph {
    gen_random_tree(cfg, seed)
        .and_then(|t| t.evaluate())
        .expect("generator output evaluates")
        .with_id(format!("g{seed}"))
}

fn count_u64(a: &TreeAutomaton) -> Option<u64> {
    count_trees(a).to_string().parse().ok()
}

/// A decomposed generated graph with its automaton.
struct Instance {
    graph: SemanticGraph,
    automaton: TreeAutomaton,
    count: u64,
}

/// Generated instances whose automata accept between 1 and `max_count` trees.
fn small_instances(want: usize, max_count: u64, seed_base: u64) -> Vec<Instance> {
    let cfg = GeneratorConfig {
        max_nodes: 12,
        ..Default::default()
    };
    let mut out = Vec::new();
    let mut seed = seed_base;
    while out.len() < want {
        let batch: Vec<u64> = (seed..seed + 64).collect();
        seed += 64;
        let made = par::map(Exec::Parallel, &batch, |&s| {
            let g = gen_graph(&cfg, s);
            let t = decompose_default(&g).ok()?;
            let n_sources = 3 + (s % 2) as usize;
            let a = build_automaton(&binarize(&t).ok()?, &default_sources(n_sources));
            let count = count_u64(&a)?;
            (1..=max_count).contains(&count).then_some(Instance {
                graph: g,
                automaton: a,
                count,
            })
        });
        out.extend(made.into_iter().flatten());
    }
    out.truncate(want);
    out
}

/// Compensated sum, so the brute-force side of an oracle is not the weak one.
fn neumaier(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() {
            (s - t) + x
        } else {
            (x - t) + s
        };
        s = t;
    }
    s + c
}

fn run_weight(run: &Run, w: &[f64]) -> f64 {
    run.rule_sequence().iter().map(|&r| w[r]).product()
}

fn round_trip() -> Verdict {
    let started = Instant::now();
    let cfg = GeneratorConfig {
        max_nodes: 12,
        ..Default::default()
    };
    let seeds: Vec<u64> = (0..1000).collect();
    let failures: Vec<String> = par::map(Exec::Parallel, &seeds, |&s| {
        let g = gen_graph(&cfg, s);
        decompose_default(&g)
            .and_then(|t| evaluates_to(&t, &g))
            .err()
            .map(|e| format!("g{s}: {e}"))
    })
    .into_iter()
    .flatten()
    .collect();
    let secs = started.elapsed().as_secs_f64();
    if !failures.is_empty() {
        return Err(format!(
            "{} of 1000 failed, first: {}",
            failures.len(),
            failures[0]
        ));
    }
    if secs >= 60.0 {
        return Err(format!("all 1000 round-tripped but took {secs:.1} s"));
    }
    Ok(format!("1000/1000 round-tripped in {secs:.1} s"))
}

fn figure_goldens() -> Verdict {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data/goldens");
    for id in FIGURE_IDS {
        let g = figure(id).ok_or(format!("{id} missing"))?;
        let t = decompose_default(&g)?;
        let text = fs::read_to_string(dir.join(format!("{id}.json"))).map_err(|e| e.to_string())?;
        let golden: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        if serde_json::to_value(&t).unwrap() != golden {
            return Err(format!("{id} differs from its golden"));
        }
        evaluates_to(&t, &g).map_err(|e| format!("{id}: {e}"))?;
    }
    Ok("3/3 exact, re-evaluated isomorphically".into())
}

fn soundness(pool: &[Instance]) -> Verdict {
    let results = par::map(Exec::Parallel, pool, |inst| -> Result<u64, String> {
        let a = &inst.automaton;
        let runs = enumerate(a, usize::MAX);
        if runs.len() as u64 != inst.count {
            return Err(format!(
                "{}: count {} but {} enumerated",
                inst.graph.id,
                inst.count,
                runs.len()
            ));
        }
        let distinct: BTreeSet<Vec<usize>> = runs.iter().map(Run::rule_sequence).collect();
        if distinct.len() != runs.len() {
            return Err(format!("{}: duplicate runs", inst.graph.id));
        }
        for run in &runs {
            let t = reconstruct_tree(a, run).map_err(|e| format!("{}: {e}", inst.graph.id))?;
            evaluates_to(&t, &inst.graph).map_err(|e| format!("{}: {e}", inst.graph.id))?;
        }
        Ok(inst.count)
    });
    let mut trees = 0;
    for r in results {
        trees += r?;
    }
    Ok(format!(
        "{} instances, {trees} trees, all sound; counts equal enumeration",
        pool.len()
    ))
}

fn inside_outer_oracles(pool: &[Instance]) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let (mut worst_i, mut worst_enum, mut worst_fd) = (0.0f64, 0.0f64, 0.0f64);
    let mut worst_fd_narrow = 0.0f64;
    for inst in pool.iter().take(50) {
        let a = &inst.automaton;
        let w: Vec<f64> = (0..a.rules().len())
            .map(|_| rng.gen_range(0.05..2.0))
            .collect();
        let io = outer_weights(a, &w).map_err(|e| e.to_string())?;
        let runs = enumerate(a, usize::MAX);
        let brute = neumaier(runs.iter().map(|r| run_weight(r, &w)));
        worst_i = worst_i.max(((io.total() - brute) / brute).abs());
        for r in 0..a.rules().len() {
            let by_enum = neumaier(
                runs.iter()
                    .filter(|run| run.rule_sequence().contains(&r))
                    .map(|run| run_weight(run, &w)),
            ) / w[r];
            worst_enum = worst_enum.max((io.alpha(r) - by_enum).abs() / by_enum);
            let at = |d: f64| {
                let mut v = w.clone();
                v[r] += d;
                inside(a, &v).map(|x| x.total())
            };
            let fd = |h: f64| -> Result<f64, String> {
                Ok(
                    (at(h).map_err(|e| e.to_string())? - at(-h).map_err(|e| e.to_string())?)
                        / (2.0 * h),
                )
            };
            // I is linear in each single weight, so the wide step is exact up to
            // rounding; the narrow one loses digits on rules with little posterior mass
            let rel = |x: f64| (io.alpha(r) - x).abs() / io.alpha(r);
            worst_fd = worst_fd.max(rel(fd(0.5 * w[r])?));
            worst_fd_narrow = worst_fd_narrow.max(rel(fd(1e-6 * w[r])?));
        }
    }
    let detail = format!(
        "50 automata: max rel err I {worst_i:.1e}, alpha vs enumeration {worst_enum:.1e}, \
         alpha vs finite differences {worst_fd:.1e} (step 0.5 w; step 1e-6 w gives {worst_fd_narrow:.1e})"
    );
    if worst_i < 1e-12 && worst_enum < 1e-10 && worst_fd < 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn em_checks() -> Verdict {
    let cfg = GeneratorConfig {
        max_nodes: 10,
        ..Default::default()
    };
    let mut worst_drop = 0.0f64;
    for k in 0..20u64 {
        let seeds: Vec<u64> = (0..40).map(|i| 10_000 * (k + 1) + i).collect();
        let corpus: Vec<TreeAutomaton> = par::map(Exec::Parallel, &seeds, |&s| {
            let t = decompose_default(&gen_graph(&cfg, s)).ok()?;
            Some(build_automaton(&binarize(&t).ok()?, &default_sources(3)))
        })
        .into_iter()
        .flatten()
        .collect();
        let res = em_fit(
            &corpus,
            &EmConfig {
                seed: k,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        for pair in res.log_likelihood.windows(2) {
            worst_drop = worst_drop.max(pair[0] - pair[1]);
        }
    }
    if worst_drop > 1e-9 {
        return Err(format!("log-likelihood fell by {worst_drop:.3e}"));
    }
    let mut shares = Vec::new();
    for seed in 0..10u64 {
        let corpus = two_way_corpus(100, seed);
        let res = em_fit(
            &corpus,
            &EmConfig {
                seed,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let mut namings: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for a in &corpus {
            let (run, _) = viterbi_table(a, &res.table).map_err(|e| e.to_string())?;
            *namings.entry(run_edge_sources(a, &run)).or_default() += 1;
        }
        let top = namings.values().copied().max().unwrap_or(0);
        shares.push(top as f64 / corpus.len() as f64);
    }
    let good = shares.iter().filter(|&&s| s >= 0.95).count();
    let detail = format!(
        "20 corpora monotone (largest drop {worst_drop:.1e}); consistent naming on {good}/10 seeds, shares {:?}",
        shares.iter().map(|s| (s * 100.0).round() / 100.0).collect::<Vec<_>>()
    );
    if good >= 8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn joint_gradient(pool: &[Instance]) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut worst = 0.0f64;
    let mut used = 0;
    for inst in pool {
        let a = &inst.automaton;
        let mut s = Scorer::zero_for(std::slice::from_ref(a));
        if s.params.len() < 20 {
            continue;
        }
        for v in s.params.values_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let keys: Vec<String> = s.params.keys().cloned().collect();
        let (_, grad) = log_inside_gradient(&s, a);
        for f in keys.choose_multiple(&mut rng, 20) {
            let h = 1e-5;
            let at = |d: f64| {
                let mut t = s.clone();
                *t.params.get_mut(f).unwrap() += d;
                inside_log(a, score_rules_log(&t, a)).log_i
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let g = grad.get(f).copied().unwrap_or(0.0);
            let err = if g == 0.0 {
                fd.abs()
            } else {
                (fd - g).abs() / g.abs()
            };
            worst = worst.max(err);
        }
        used += 1;
        if used == 10 {
            break;
        }
    }
    if used < 10 {
        return Err(format!("only {used} instances have 20 parameters"));
    }
    if worst >= 1e-4 {
        return Err(format!("gradient rel err {worst:.2e}"));
    }
    for inst in pool {
        let a = &inst.automaton;
        let total = inside(a, &score_rules(&Scorer::default(), a))
            .map_err(|e| e.to_string())?
            .total();
        if total.round() != inst.count as f64 {
            return Err(format!(
                "{}: zero scorer gives {total}, count {}",
                inst.graph.id, inst.count
            ));
        }
    }
    Ok(format!(
        "10 instances x 20 parameters, max rel err {worst:.1e}; zero scorer reproduces {} counts",
        pool.len()
    ))
}

fn uniform_sampling(pool: &[Instance]) -> Verdict {
    let mut by_size: BTreeMap<u64, &Instance> = BTreeMap::new();
    for inst in pool.iter().filter(|i| (2..=24).contains(&i.count)) {
        by_size.entry(inst.count).or_insert(inst);
    }
    if by_size.is_empty() {
        return Err("no automaton with 2..=24 trees".into());
    }
    let mut worst_p = 1.0f64;
    for (&n, inst) in &by_size {
        let a = &inst.automaton;
        let runs = enumerate(a, usize::MAX);
        let mut rng = ChaCha8Rng::seed_from_u64(700 + n);
        let mut hits = vec![0u64; runs.len()];
        for _ in 0..10 * n {
            let run = a.sample_uniform(&mut rng).ok_or("empty automaton")?;
            let k = runs
                .iter()
                .position(|r| *r == run)
                .ok_or("sample not enumerated")?;
            hits[k] += 1;
        }
        let expected = 10.0;
        let stat: f64 = hits
            .iter()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        let p = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(stat);
        worst_p = worst_p.min(p);
    }
    let sizes: Vec<u64> = by_size.keys().copied().collect();
    let detail = format!("sizes {sizes:?}, smallest p-value {worst_p:.3}");
    if worst_p >= 0.01 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn entropy_cases() -> Verdict {
    let leaf = |i: usize, label: &str| {
        let id = format!("n{i}");
        AmDepTree::leaf(&id, SGraph::singleton(&id, label))
    };
    let trees = |labels: &[&str]| -> Vec<AmDepTree> {
        labels.iter().enumerate().map(|(i, l)| leaf(i, l)).collect()
    };
    let cases = [
        (trees(&["fairy", "fairy", "fairy"]), 0.0),
        (trees(&["fairy", "glow", "glow", "fairy"]), 2f64.ln()),
        (trees(&["fairy", "glow", "tiny", "sparkle"]), 4f64.ln()),
    ];
    for (ts, want) in &cases {
        let h = constant_entropy(ts);
        if (h - want).abs() > 1e-12 {
            return Err(format!("entropy {h} where {want} was expected"));
        }
    }
    Ok("0, ln 2, ln 4 within 1e-12".into())
}

fn source_count_knob() -> Verdict {
    let cfg = GeneratorConfig {
        max_nodes: 12,
        max_sources: 3,
        sources: default_sources(3),
        ..Default::default()
    };
    let mut graphs: Vec<SemanticGraph> = (0..200).map(|s| gen_graph(&cfg, 90_000 + s)).collect();
    graphs.extend(FIGURE_IDS.iter().map(|id| figure(id).unwrap()));
    let trees: Vec<(String, AmDepTree)> = graphs
        .iter()
        .map(|g| decompose_default(g).map(|t| (g.id.clone(), t)))
        .collect::<Result<_, _>>()?;
    // slot counting: a constant needs one distinct inventory name per source it mentions
    let predicted: BTreeSet<&str> = trees
        .iter()
        .filter(|(_, t)| {
            t.nodes()
                .values()
                .filter(|n| !n.is_ref())
                .any(|n| n.constant.ty().all_names().len() > 2)
        })
        .map(|(id, _)| id.as_str())
        .collect();
    let empty_with = |n: usize| -> Result<BTreeSet<&str>, String> {
        let mut out = BTreeSet::new();
        for (id, t) in &trees {
            let a = build_automaton(
                &binarize(t).map_err(|e| e.to_string())?,
                &default_sources(n),
            );
            if a.is_empty() {
                out.insert(id.as_str());
            }
        }
        Ok(out)
    };
    let two = empty_with(2)?;
    let three = empty_with(3)?;
    if predicted.is_empty() {
        return Err("corpus has no constant with three sources".into());
    }
    if two != predicted {
        return Err(format!(
            "with two sources {} skipped, slot counting predicts {}",
            two.len(),
            predicted.len()
        ));
    }
    if !three.is_empty() {
        return Err(format!("with three sources {} still skipped", three.len()));
    }
    Ok(format!(
        "{} graphs: {} skipped with two sources, exactly as predicted; none with three",
        trees.len(),
        two.len()
    ))
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with("timing.json") {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn determinism() -> Verdict {
    let base = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str, jobs: &str| -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
        let root = base.path().join(name);
        let amd = |args: &[&str]| -> Result<(), String> {
            let st = Command::new(env!("CARGO_BIN_EXE_amd"))
                .args(["--jobs", jobs])
                .args(args)
                .env("AMD_LOG", "error")
                .status()
                .map_err(|e| e.to_string())?;
            match st.code() {
                Some(0) | Some(2) => Ok(()),
                c => Err(format!("amd {args:?} exited with {c:?}")),
            }
        };
        let gen = root.join("gen");
        let out = root.join("pipe");
        let s = |p: &Path| p.to_str().unwrap().to_string();
        amd(&["gen", "--n", "60", "--seed", "5", "--out", &s(&gen)])?;
        let graphs = gen.join("graphs.json");
        amd(&[
            "pipeline",
            "--graphs",
            &s(&graphs),
            "--seed",
            "5",
            "--epochs",
            "3",
            "--out",
            &s(&out),
        ])?;
        amd(&[
            "viterbi",
            "--automata",
            &s(&out.join("automata")),
            "--random-trees",
            "--seed",
            "5",
            "--out",
            &s(&root.join("random.json")),
        ])?;
        Ok(files_under(&root))
    };
    let a = run("a", "1")?;
    let b = run("b", "4")?;
    if a.keys().ne(b.keys()) {
        return Err("runs wrote different file sets".into());
    }
    let differing: Vec<_> = a
        .iter()
        .filter(|(k, v)| b[*k] != **v)
        .map(|(k, _)| k.display().to_string())
        .collect();
    if !differing.is_empty() {
        return Err(format!("files differ: {differing:?}"));
    }
    let manifests = a
        .keys()
        .filter(|k| k.to_string_lossy().ends_with("manifest.json"))
        .count();
    Ok(format!(
        "{} files ({manifests} manifests) byte-identical across runs with 1 and 4 jobs",
        a.len()
    ))
}

fn main() {
    let started = Instant::now();
    let pool = small_instances(200, 5000, 0);
    let checks: Vec<Check> = vec![
        ("round trip of 1000 generated graphs", Box::new(round_trip)),
        ("figure goldens", Box::new(figure_goldens)),
        (
            "automaton soundness and counting",
            Box::new(|| soundness(&pool)),
        ),
        (
            "inside and outer weight oracles",
            Box::new(|| inside_outer_oracles(&pool)),
        ),
        (
            "EM monotonicity and naming consistency",
            Box::new(em_checks),
        ),
        (
            "joint gradient and zero scorer",
            Box::new(|| joint_gradient(&pool)),
        ),
        (
            "uniform tree sampling",
            Box::new(|| uniform_sampling(&pool)),
        ),
        ("constant entropy", Box::new(entropy_cases)),
        ("source-count knob", Box::new(source_count_knob)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let t = Instant::now();
        let verdict = check();
        let secs = t.elapsed().as_secs_f64();
        match verdict {
            Ok(d) => println!("PASS criterion {:>2} {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        checks.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
