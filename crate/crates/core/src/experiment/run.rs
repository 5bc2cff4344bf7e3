use serde::{Deserialize, Serialize};

use super::plan::ConvergencePlan;
use crate::parallel::Exec;
use crate::toolbox::{ModelProblem, ToolboxError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub min_size: f64,
    pub max_size: f64,
    pub quantity: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Iterations,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    /// One row per iteration after the first.
    pub rows: Vec<ConvergenceRow>,
    pub terminated_by: Termination,
    /// Quantity of interest on the initial mesh, which has no error row.
    pub initial_quantity: f64,
}

impl ConvergenceResult {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("rows serialize");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
    }

    pub fn rows_from_csv(text: &str) -> Result<Vec<ConvergenceRow>, csv::Error> {
        csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
    }

    pub fn final_error(&self) -> Option<f64> {
        self.rows.last().map(|r| r.error)
    }
}

/// Regenerate the mesh from the CAD at halved sizes, solve, and track the change in
/// the boundary current until the iteration budget or the threshold is reached.
pub fn run_convergence(
    plan: &ConvergencePlan,
    problem: &ModelProblem,
    exec: Exec,
) -> Result<ConvergenceResult, ToolboxError> {
    plan.validate().map_err(|e| ToolboxError::Unsupported(e.to_string()))?;
    let mut rows = Vec::new();
    let mut previous: Option<f64> = None;
    let mut initial_quantity = f64::NAN;
    for k in 0..plan.iterations {
        let (max_size, min_size) = plan.sizes(k);
        let at = |e: ToolboxError| match e {
            ToolboxError::Solver { source, .. } => ToolboxError::Solver {
                iteration: Some(k + 1),
                source,
            },
            other => other,
        };
        let mesh = problem.remesh(max_size, min_size).map_err(at)?;
        let solution = problem.solve_on(&mesh, exec).map_err(at)?;
        let current = solution
            .compute_current(&plan.region)
            .map_err(|e| at(ToolboxError::from(e)))?;
        match previous {
            None => initial_quantity = current,
            Some(old) => {
                let error = (current - old).abs();
                rows.push(ConvergenceRow {
                    min_size,
                    max_size,
                    quantity: current,
                    error,
                });
                if plan.threshold.is_some_and(|t| error < t) {
                    return Ok(ConvergenceResult {
                        rows,
                        terminated_by: Termination::Threshold,
                        initial_quantity,
                    });
                }
            }
        }
        previous = Some(current);
    }
    Ok(ConvergenceResult {
        rows,
        terminated_by: Termination::Iterations,
        initial_quantity,
    })
}
