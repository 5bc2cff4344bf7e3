//! The FEA study workflow: artifact types, stages and the reference case study.

mod case_study;
mod definition;
mod script;
mod session;

pub use case_study::*;
pub use definition::*;
pub use script::*;
pub use session::*;
