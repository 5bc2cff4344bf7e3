//! Stage executions as activities over versioned artifact entities.

mod graph;
mod query;
mod record;

pub use graph::{ProvActivity, ProvEntity, ProvenanceGraph, Used, WasGeneratedBy};
pub use query::{filter_by_artifact, query, NodeFilter};
pub use record::{build_graph, reads_of, record, snapshot_digest, ProvError};
