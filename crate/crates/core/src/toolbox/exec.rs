use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BoundarySpec, ExperimentSpec, PhysicalModelSpec, RequirementData, Toolbox, ToolboxError};
use crate::experiment::{run_convergence, ConvergenceResult};
use crate::fem::{analytical_plate_field, solve_potential_with, FemSolution, Mesh2D, RectCad};
use crate::gsm::{ArtifactInstance, AttrValue, BlobRef, StudyState};
use crate::parallel::Exec;
use crate::study::RoleTag;

/// Samples along the probe line of an analysis experiment when none are given.
pub const FIELD_PROBE_SAMPLES: usize = 101;

/// Everything needed to solve a simulation model: geometry, mesh, materials and contacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProblem {
    pub simulation_model: String,
    pub cad: RectCad,
    pub mesh: Mesh2D,
    pub physics: PhysicalModelSpec,
    pub dirichlet: BTreeMap<String, f64>,
}

impl ModelProblem {
    pub fn solve(&self, exec: Exec) -> Result<FemSolution, ToolboxError> {
        self.solve_on(&self.mesh, exec)
    }

    pub fn solve_on(&self, mesh: &Mesh2D, exec: Exec) -> Result<FemSolution, ToolboxError> {
        Ok(solve_potential_with(
            mesh,
            &self.physics.conductivity,
            &self.dirichlet,
            exec,
        )?)
    }

    /// A fresh mesh of the model's CAD at the given element sizes.
    pub fn remesh(&self, hmax: f64, hmin: f64) -> Result<Mesh2D, ToolboxError> {
        Ok(self.cad.mesh(hmax, hmin)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Validation,
    Calibration,
    Analysis,
    Convergence,
}

/// Outcome of comparing a solved model against a data requirement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub probe: [f64; 2],
    pub field: f64,
    pub analytical: f64,
    pub deviation: f64,
    pub tolerance: f64,
    /// Boundary current at the region of interest on the model mesh.
    pub region: Option<String>,
    pub quantity: Option<f64>,
    /// The same quantity on a mesh with both element sizes halved.
    pub quantity_refined: Option<f64>,
    pub discretization_error: Option<f64>,
    pub threshold: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub conductivity: f64,
    pub report: ValidationReport,
}

/// What an experiment execution produced, ready to be recorded on a simulation data artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub experiment: String,
    pub kind: ExperimentKind,
    pub payload: BlobRef,
    pub metric: AttrValue,
    /// Outcome label for the owning simulation model's outcome stage, if any.
    pub outcome: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceResult>,
}

fn linked_one<'s>(
    state: &'s StudyState,
    from: &ArtifactInstance,
    link: &str,
) -> Result<&'s ArtifactInstance, ToolboxError> {
    from.linked(link)
        .first()
        .and_then(|id| state.artifact(id))
        .ok_or_else(|| ToolboxError::Missing(format!("{} has no {link}", from.id)))
}

fn required<'a>(a: &'a ArtifactInstance, attribute: &str) -> Result<&'a AttrValue, ToolboxError> {
    a.attribute(attribute)
        .filter(|v| v.is_present())
        .ok_or_else(|| ToolboxError::Missing(format!("{}.{attribute} is not set", a.id)))
}

impl Toolbox {
    fn invalid(&self, a: &ArtifactInstance, attribute: &str, reason: String) -> ToolboxError {
        ToolboxError::Invalid {
            artifact: a.id.clone(),
            attribute: attribute.into(),
            reason,
        }
    }

    /// Combine geometrical model, physical model and boundary conditions of a simulation model.
    ///
    /// Boundary conditions of the simulation model take precedence over the template's block.
    pub fn load_model(&self, state: &StudyState, smo: &str) -> Result<ModelProblem, ToolboxError> {
        let sm = state
            .artifact(smo)
            .ok_or_else(|| ToolboxError::Missing(format!("unknown simulation model {smo}")))?;
        let gm = linked_one(state, sm, "geometrical-model")?;
        let pm = linked_one(state, sm, "physical-model")?;
        let cad = self
            .read_cad(required(gm, "cad")?)
            .map_err(|e| self.invalid(gm, "cad", e))?;
        let mesh = self
            .read_mesh(required(gm, "specification")?)
            .map_err(|e| self.invalid(gm, "specification", e))?;
        let physics = PhysicalModelSpec::parse(&self.content(required(pm, "specification")?)?)
            .map_err(|e| self.invalid(pm, "specification", e))?;
        let dirichlet = match sm.attribute("boundary-conditions").filter(|v| v.is_present()) {
            Some(v) => {
                BoundarySpec::parse(&self.content(v)?)
                    .map_err(|e| self.invalid(sm, "boundary-conditions", e))?
                    .dirichlet
            }
            None => physics.boundaries.dirichlet.clone(),
        };
        if let Some(r) = mesh.materials.iter().find(|r| !physics.conductivity.contains_key(*r)) {
            return Err(self.invalid(pm, "specification", format!("mesh region {r} has no conductivity")));
        }
        Ok(ModelProblem {
            simulation_model: smo.to_string(),
            cad,
            mesh,
            physics,
            dirichlet,
        })
    }

    fn owning_model<'s>(
        &self,
        state: &'s StudyState,
        exp: &ArtifactInstance,
    ) -> Result<&'s ArtifactInstance, ToolboxError> {
        state
            .artifacts
            .iter()
            .find(|a| a.linked("experiments").contains(&exp.id))
            .ok_or_else(|| ToolboxError::Missing(format!("{} belongs to no simulation model", exp.id)))
    }

    /// Compare a model against a data requirement: analytical field at the probe point and,
    /// when the requirement names a region and threshold, the discretization error estimate
    /// of the region's boundary current under halved element sizes.
    pub fn validate_model(
        &self,
        problem: &ModelProblem,
        req: &ArtifactInstance,
    ) -> Result<ValidationReport, ToolboxError> {
        match required(req, "type")?.as_text() {
            Some("data") => {}
            Some(other) => {
                return Err(ToolboxError::Unsupported(format!(
                    "{other} requirements are not executable"
                )))
            }
            None => return Err(self.invalid(req, "type", "must be text".into())),
        }
        let data = RequirementData::parse(&self.content(required(req, "specification")?)?)
            .map_err(|e| self.invalid(req, "specification", e))?;
        let solution = problem.solve(self.exec())?;
        let field = solution.field_at(data.probe).ok_or_else(|| {
            self.invalid(
                req,
                "specification",
                format!("probe {:?} lies outside the mesh", data.probe),
            )
        })?;
        let analytical = analytical_plate_field(data.voltage, data.distance);
        let deviation = (field - analytical).abs() / analytical.abs();
        let mut report = ValidationReport {
            probe: data.probe,
            field,
            analytical,
            deviation,
            tolerance: data.tolerance,
            region: None,
            quantity: None,
            quantity_refined: None,
            discretization_error: None,
            threshold: None,
            passed: deviation <= data.tolerance,
        };
        let region = req.text("region").filter(|r| !r.trim().is_empty());
        let threshold = req.attribute("threshold").and_then(AttrValue::as_number);
        if let (Some(region), Some(threshold)) = (region, threshold) {
            let q = solution.compute_current(region)?;
            let finer = problem.remesh(problem.mesh.hmax / 2.0, problem.mesh.hmin / 2.0)?;
            let q_fine = problem.solve_on(&finer, self.exec())?.compute_current(region)?;
            let err = (q_fine - q).abs();
            report.region = Some(region.to_string());
            report.quantity = Some(q);
            report.quantity_refined = Some(q_fine);
            report.discretization_error = Some(err);
            report.threshold = Some(threshold);
            report.passed &= err <= threshold;
        }
        Ok(report)
    }

    /// Run an assembled experiment against its simulation model and store the payload blob.
    pub fn execute(&self, state: &StudyState, exp: &str) -> Result<ExecutionReport, ToolboxError> {
        self.execute_attribute(state, exp, "specification")
    }

    /// Run the generated script attached to the experiment instead of its specification.
    pub fn execute_script(&self, state: &StudyState, exp: &str) -> Result<ExecutionReport, ToolboxError> {
        self.execute_attribute(state, exp, "script")
    }

    fn execute_attribute(
        &self,
        state: &StudyState,
        exp: &str,
        attribute: &str,
    ) -> Result<ExecutionReport, ToolboxError> {
        let e = state
            .artifact(exp)
            .ok_or_else(|| ToolboxError::Missing(format!("unknown experiment {exp}")))?;
        let spec = ExperimentSpec::parse(&self.content(required(e, attribute)?)?)
            .map_err(|err| self.invalid(e, attribute, err))?;
        self.execute_spec(state, exp, spec)
    }

    pub fn execute_spec(
        &self,
        state: &StudyState,
        exp: &str,
        spec: ExperimentSpec,
    ) -> Result<ExecutionReport, ToolboxError> {
        let e = state
            .artifact(exp)
            .ok_or_else(|| ToolboxError::Missing(format!("unknown experiment {exp}")))?;
        let sm = self.owning_model(state, e)?;
        let problem = self.load_model(state, &sm.id)?;
        let role = e.text("role").and_then(RoleTag::from_code);
        let requirement = || linked_one(state, e, "requirement");
        let (kind, name, media, body, metric, outcome, convergence) = match spec {
            ExperimentSpec::Validation => {
                if role != Some(RoleTag::Validation) {
                    return Err(self.invalid(e, "role", "validation specifications need role val".into()));
                }
                let report = self.validate_model(&problem, requirement()?)?;
                let metric = AttrValue::quantity(report.field, "V/m");
                let outcome = if report.passed { "succeed" } else { "fail" };
                (
                    ExperimentKind::Validation,
                    "validation.json",
                    "application/json",
                    pretty(&report),
                    metric,
                    Some(outcome.to_string()),
                    None,
                )
            }
            ExperimentSpec::Calibration { material, values } => {
                let req = requirement()?;
                if !problem.physics.conductivity.contains_key(&material) {
                    return Err(self.invalid(e, "specification", format!("unknown material {material}")));
                }
                let mut points = Vec::new();
                for v in values {
                    let mut p = problem.clone();
                    p.physics.conductivity.insert(material.clone(), v);
                    points.push(CalibrationPoint {
                        conductivity: v,
                        report: self.validate_model(&p, req)?,
                    });
                }
                let best = points.iter().find(|p| p.report.passed).map(|p| p.conductivity);
                let outcome = if best.is_some() { "success" } else { "failure" };
                let metric = best
                    .map(|b| AttrValue::quantity(b, "S/m"))
                    .unwrap_or(AttrValue::text("none"));
                (
                    ExperimentKind::Calibration,
                    "calibration.json",
                    "application/json",
                    pretty(&points),
                    metric,
                    Some(outcome.to_string()),
                    None,
                )
            }
            ExperimentSpec::Analysis { probe_y, samples } => {
                let solution = problem.solve(self.exec())?;
                let line = solution.probe_line(probe_y, samples);
                if line.is_empty() {
                    return Err(self.invalid(e, "specification", format!("probe line y={probe_y} misses the mesh")));
                }
                let mean = line.iter().map(|p| p.1).sum::<f64>() / line.len() as f64;
                (
                    ExperimentKind::Analysis,
                    "field_probe.csv",
                    "text/csv",
                    solution.probe_csv(probe_y, samples),
                    AttrValue::quantity(mean, "V/m"),
                    None,
                    None,
                )
            }
            ExperimentSpec::Convergence(plan) => {
                let result = run_convergence(&plan, &problem, self.exec())?;
                let metric = match result.rows.last() {
                    Some(r) => AttrValue::quantity(r.error, "A/m"),
                    None => AttrValue::text("no comparable rows"),
                };
                (
                    ExperimentKind::Convergence,
                    "convergence.csv",
                    "text/csv",
                    result.to_csv(),
                    metric,
                    None,
                    Some(result),
                )
            }
        };
        let payload = self.blobs().put(name, media, body.as_bytes())?;
        Ok(ExecutionReport {
            experiment: exp.to_string(),
            kind,
            payload,
            metric,
            outcome,
            convergence,
        })
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}
