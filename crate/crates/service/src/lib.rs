//! HTTP facade over a file-system [`feaflow_core::store::StudyStore`].
//!
//! Every study has one writer thread that serializes submissions and publishes an immutable
//! snapshot after each commit; reads are served from the latest snapshot without waiting for
//! the writer. Accepted events fan out on a per-study change stream (server-sent events).

pub mod api;
mod http;
pub mod ops;

pub use http::{router, serve, AppState, BackgroundServer};
