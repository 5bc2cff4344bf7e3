//! Artifact-based workflow workbench for finite-element simulation studies.
//!
//! The [`gsm`] engine enforces lifecycles over study artifacts and [`study`] ships the
//! FEA workflow definition with its case study. [`provenance`] records every completed stage
//! as an activity, [`planner`] suggests the shortest way to a milestone, and [`experiment`]
//! generates convergence studies that run on the [`fem`] kernel through the [`toolbox`].
//! [`store`] persists studies as append-only event logs with snapshots.

pub mod experiment;
pub mod fem;
pub mod gsm;
pub mod parallel;
pub mod planner;
pub mod provenance;
pub mod store;
pub mod study;
pub mod toolbox;
