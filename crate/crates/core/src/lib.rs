//! Decomposition of rooted semantic graphs into Apply-Modify dependency
//! trees, tree automata over source assignments, and latent-source training.

pub mod algebra;
pub mod automata;
pub mod blobs;
pub mod decompose;
pub mod figures;
pub mod graph;
pub mod iso;
pub mod par;
pub mod training;
