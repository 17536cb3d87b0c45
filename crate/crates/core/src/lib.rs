//! Knowledge-graph recommender with intent-factored user modeling.
//!
//! Users are represented through a small set of latent intents, each a
//! learned mixture of KG relations. Item and entity representations are
//! refined by relation-aware propagation over the knowledge graph. Training
//! uses BPR with an independence penalty on the intents, and gradients come
//! from the reverse-mode tape in [`grad`].

pub mod aggregate;
mod binio;
pub mod checkpoint;
pub mod eval;
pub mod explain;
pub mod grad;
pub mod graph;
pub mod independence;
pub mod intent;
pub mod matrix;
pub mod model;
pub mod synth;
pub mod train;
