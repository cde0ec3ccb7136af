use std::path::PathBuf;

use am_decomp::algebra::AmDepTree;
use am_decomp::blobs::BlobHeuristics;
use am_decomp::decompose::{decompose, DecomposeOptions};
use am_decomp::figures::{figure, FIGURE_IDS};
use am_decomp::graph::is_isomorphic;

fn golden_path(id: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data/goldens")
        .join(format!("{id}.json"))
}

fn decomposed(id: &str) -> AmDepTree {
    let g = figure(id).expect("figure exists");
    decompose(&g, &BlobHeuristics::default(), &DecomposeOptions::default())
        .unwrap_or_else(|e| panic!("{id}: {e}"))
}

#[test]
fn figures_match_checked_in_goldens() {
    for id in FIGURE_IDS {
        let text = std::fs::read_to_string(golden_path(id)).unwrap();
        let golden: serde_json::Value = serde_json::from_str(&text).unwrap();
        let got = serde_json::to_value(decomposed(id)).unwrap();
        assert_eq!(got, golden, "{id} differs from its golden");
        let parsed: AmDepTree = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, decomposed(id), "{id}: golden does not parse back");
    }
}

#[test]
fn figures_reevaluate_isomorphically() {
    for id in FIGURE_IDS {
        let t = decomposed(id);
        assert!(t.check_well_typed().unwrap().is_empty(), "{id}");
        let h = t.evaluate().unwrap();
        assert!(is_isomorphic(&figure(id).unwrap(), &h), "{id}");
    }
}

/// Ops and attachment points, written out by hand rather than read back.
#[test]
fn figure_shapes_by_hand() {
    let edges = |id: &str| -> Vec<(String, String, String)> {
        let t = decomposed(id);
        let v = serde_json::to_value(&t).unwrap();
        let label = |n: &str| {
            v["nodes"][n]["nodes"][0]["label"]
                .as_str()
                .unwrap()
                .to_string()
        };
        let mut out: Vec<_> = v["edges"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| {
                (
                    label(e["parent"].as_str().unwrap()),
                    format!(
                        "{}_{}",
                        e["op"].as_str().unwrap(),
                        e["source"].as_str().unwrap()
                    ),
                    label(e["child"].as_str().unwrap()),
                )
            })
            .collect();
        out.sort();
        out
    };
    let e = |p: &str, o: &str, c: &str| (p.to_string(), o.to_string(), c.to_string());
    assert_eq!(
        edges("tiny-fairy"),
        vec![
            e("fairy", "MOD_ps(f)", "tiny"),
            e("glow", "APP_ps(f)", "fairy")
        ]
    );
    assert_eq!(
        edges("sparkle-and-glow"),
        vec![
            e("and", "APP_ps(f)", "fairy"),
            e("and", "APP_ps(g)", "glow"),
            e("and", "APP_ps(s)", "sparkle"),
        ]
    );
    assert_eq!(
        edges("relative-clause"),
        vec![
            e("begin", "APP_ps(g)", "glow"),
            e("fairy", "MOD_ps(f)", "begin")
        ]
    );
}
