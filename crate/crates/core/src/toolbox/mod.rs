//! Registered modeling approaches: syntax checks for specifications, model loading from
//! the study state and experiment execution on the [`crate::fem`] kernel.

mod blobs;
mod exec;
mod spec;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{FemError, Mesh2D, RectCad};
use crate::gsm::{ArtifactInstance, AttrValue, SpecChecker};
use crate::parallel::Exec;
use crate::study::{GEOMETRICAL_MODEL, PHYSICAL_MODEL, SIMULATION_EXPERIMENT, SIMULATION_MODEL};

pub(crate) use blobs::verified;
pub use blobs::{digest_of, BlobError, BlobStore, MemoryBlobs};
pub use exec::{
    CalibrationPoint, ExecutionReport, ExperimentKind, ModelProblem, ValidationReport, FIELD_PROBE_SAMPLES,
};
pub use spec::{BoundarySpec, ExperimentSpec, PhysicalModelSpec, RequirementData};

pub const GEOMETRY_APPROACH: &str = "toolbox:rect2d";
pub const PHYSICS_APPROACH: &str = "toolbox:es2d";
pub const EXPERIMENT_APPROACH: &str = "toolbox:es2d-experiment";

pub const CAD_MEDIA_TYPE: &str = "application/vnd.feaflow.cad+json";
pub const MESH_MEDIA_TYPE: &str = "application/vnd.feaflow.mesh+json";

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum ToolboxError {
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error("{artifact}.{attribute}: {reason}")]
    Invalid {
        artifact: String,
        attribute: String,
        reason: String,
    },
    #[error("{0}")]
    Missing(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("solver failure{}: {source}", iteration.map(|i| format!(" in iteration {i}")).unwrap_or_default())]
    Solver { iteration: Option<usize>, source: FemError },
}

impl From<FemError> for ToolboxError {
    fn from(source: FemError) -> Self {
        ToolboxError::Solver {
            iteration: None,
            source,
        }
    }
}

/// The built-in 2D electro-quasistatic toolbox bound to a blob store.
#[derive(Clone)]
pub struct Toolbox {
    blobs: Arc<dyn BlobStore>,
    exec: Exec,
}

impl Toolbox {
    pub fn new(blobs: Arc<dyn BlobStore>) -> Self {
        Toolbox {
            blobs,
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn blobs(&self) -> &Arc<dyn BlobStore> {
        &self.blobs
    }

    /// Text content of an attribute, reading through blob references.
    pub fn content(&self, value: &AttrValue) -> Result<String, ToolboxError> {
        match value {
            AttrValue::Text(t) => Ok(t.clone()),
            AttrValue::Blob(b) => Ok(self.blobs.get_text(&b.digest)?),
            other => Err(ToolboxError::Unsupported(format!(
                "{} values carry no text",
                other.kind_name()
            ))),
        }
    }

    pub fn read_cad(&self, value: &AttrValue) -> Result<RectCad, String> {
        let text = self.content(value).map_err(|e| e.to_string())?;
        let cad: RectCad = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        cad.validate().map_err(|e| e.to_string())?;
        Ok(cad)
    }

    pub fn read_mesh(&self, value: &AttrValue) -> Result<Mesh2D, String> {
        let text = self.content(value).map_err(|e| e.to_string())?;
        let mesh: Mesh2D = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        mesh.check().map_err(|e| e.to_string())?;
        Ok(mesh)
    }

    /// Syntax check of one attribute value in the notation its artifact type expects.
    pub fn check_value(&self, artifact_type: &str, attribute: &str, value: &AttrValue) -> Result<(), String> {
        if !value.is_present() {
            return Err(format!("{attribute} is not set"));
        }
        let approach = |expected: &str| match value.as_text() {
            Some(t) if t == expected => Ok(()),
            Some(t) => Err(format!("unknown approach {t:?}; registered: {expected}")),
            None => Err("approach must be text".to_string()),
        };
        let text = || self.content(value).map_err(|e| e.to_string());
        match (artifact_type, attribute) {
            (GEOMETRICAL_MODEL, "approach") => approach(GEOMETRY_APPROACH),
            (PHYSICAL_MODEL, "approach") => approach(PHYSICS_APPROACH),
            (SIMULATION_EXPERIMENT, "approach") => approach(EXPERIMENT_APPROACH),
            (GEOMETRICAL_MODEL, "cad") => self.read_cad(value).map(drop),
            (GEOMETRICAL_MODEL, "specification") => self.read_mesh(value).map(drop),
            (PHYSICAL_MODEL, "specification") => PhysicalModelSpec::parse(&text()?).map(drop),
            (SIMULATION_MODEL, "boundary-conditions") => BoundarySpec::parse(&text()?).map(drop),
            (SIMULATION_EXPERIMENT, "specification") => ExperimentSpec::parse(&text()?).map(drop),
            _ => Ok(()),
        }
    }
}

impl SpecChecker for Toolbox {
    fn check(&self, artifact: &ArtifactInstance, attribute: &str) -> Result<(), String> {
        match artifact.attribute(attribute) {
            Some(v) => self.check_value(&artifact.artifact_type, attribute, v),
            None => Err(format!("{attribute} is not set")),
        }
    }
}

impl std::fmt::Debug for Toolbox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Toolbox")
            .field("exec", &self.exec)
            .finish_non_exhaustive()
    }
}
