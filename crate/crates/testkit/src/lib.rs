//! Oracles written against the engine and the raw event log, kept apart from the code they
//! check, plus generators of small random studies.

pub mod guard_oracle;
pub mod macros;
pub mod planner_check;
pub mod prov_fold;
pub mod random;
