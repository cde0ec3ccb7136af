//! The three running-example graphs, embedded for tests, goldens and demos.

use crate::graph::{parse_corpus, SemanticGraph};

const FIGURES_JSON: &str = include_str!("../data/figures.json");

/// Ids of the embedded graphs, in file order.
pub const FIGURE_IDS: [&str; 3] = ["tiny-fairy", "sparkle-and-glow", "relative-clause"];

pub fn figure_graphs() -> Vec<SemanticGraph> {
    parse_corpus(FIGURES_JSON).expect("embedded figure corpus is valid")
}

pub fn figure(id: &str) -> Option<SemanticGraph> {
    figure_graphs().into_iter().find(|g| g.id == id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_match_file() {
        let ids: Vec<String> = figure_graphs().into_iter().map(|g| g.id).collect();
        assert_eq!(ids, FIGURE_IDS);
        assert!(figure("nope").is_none());
    }
}
