use serde::{Deserialize, Serialize};

use super::schema::*;
use super::ExperimentError;
use crate::gsm::AttrValue;

/// The successive-difference metric; the only one the generator understands.
pub const SUCCESSIVE_DIFFERENCE: &str = "abs(current - current_old)";

/// A mesh convergence study: re-solve with element sizes halved each iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePlan {
    pub simulation_model: String,
    pub target: String,
    pub region: String,
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub iterations: usize,
    pub max_size: f64,
    pub min_size: f64,
    /// Slots the modeler supplied by hand, in schema order.
    #[serde(default)]
    pub manual: Vec<String>,
}

impl ConvergencePlan {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |reason: String| Err(ExperimentError::InvalidPlan(reason));
        if self.iterations < 2 {
            return bad(format!("needs at least 2 iterations, got {}", self.iterations));
        }
        if !(self.min_size > 0.0 && self.max_size >= self.min_size && self.max_size.is_finite()) {
            return bad(format!(
                "element sizes must satisfy 0 < min <= max, got min {} max {}",
                self.min_size, self.max_size
            ));
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("threshold must be positive, got {t}"));
            }
        }
        if self.metric.trim() != SUCCESSIVE_DIFFERENCE {
            return Err(ExperimentError::UnsupportedMetric(self.metric.clone()));
        }
        if self.region.trim().is_empty() {
            return bad("empty region of interest".into());
        }
        Ok(())
    }

    /// Element sizes (max, min) used on iteration `k`, counting from zero.
    pub fn sizes(&self, k: usize) -> (f64, f64) {
        let f = 0.5f64.powi(k as i32);
        (self.max_size * f, self.min_size * f)
    }

    /// Run every iteration regardless of the error reached.
    pub fn without_threshold(mut self) -> Self {
        self.threshold = None;
        self.manual.retain(|s| s != SLOT_THRESHOLD);
        self
    }

    fn is_manual(&self, slot: &str) -> bool {
        self.manual.iter().any(|s| s == slot)
    }

    /// Heuristic used to tell a generated script apart from a YAML experiment specification.
    pub fn looks_like_script(text: &str) -> bool {
        text.lines()
            .any(|l| l.trim_start().starts_with("for i in range(iterations)"))
    }

    /// Python-flavoured rendering of the plan. Manually supplied inputs carry a `# manual` marker.
    pub fn render_script(&self) -> String {
        let mark = |slot: &str| if self.is_manual(slot) { MANUAL_MARK } else { "" };
        let threshold = match self.threshold {
            Some(t) => format!("{t:e}"),
            None => "None".into(),
        };
        let mut s = String::new();
        s.push_str(&format!(
            "# convergence study for simulation model {}\n",
            self.simulation_model
        ));
        s.push_str(&format!("# target: {}\n", self.target));
        s.push_str(&format!(
            "iterations = {}{}\n",
            self.iterations,
            mark(SLOT_MAX_ITERATIONS)
        ));
        s.push_str("# initial meshing assumptions\n");
        s.push_str(&format!("max_size = {:e}{}\n", self.max_size, mark(SLOT_MAX_SIZE)));
        s.push_str(&format!("min_size = {:e}{}\n", self.min_size, mark(SLOT_MIN_SIZE)));
        s.push_str(&format!("threshold = {threshold}{}\n", mark(SLOT_THRESHOLD)));
        s.push_str("results = []\n");
        s.push_str("for i in range(iterations):\n");
        s.push_str("    # prepare the simulation\n");
        s.push_str(&format!(
            "    input_dict = prepare_input_dict(max_size, min_size, \"{}\")\n",
            self.simulation_model
        ));
        s.push_str("    # run the simulation\n");
        s.push_str("    model = Simulation(input_dict)\n");
        s.push_str("    model.run()\n");
        s.push_str(&format!("    # get current at {} from results\n", self.region));
        s.push_str(&format!(
            "    current = model.fenics_study.compute_current(\"{}\")\n",
            self.region
        ));
        s.push_str("    # calculate discretization error\n");
        s.push_str("    if i > 0:\n");
        s.push_str(&format!("        error = {}\n", self.metric));
        s.push_str("        results.append((min_size, max_size, current, error))\n");
        s.push_str("        if threshold is not None and error < threshold:\n");
        s.push_str("            break\n");
        s.push_str("    current_old = current\n");
        s.push_str("    # halve the max_size and min_size for next iteration\n");
        s.push_str("    max_size = max_size / 2.0\n");
        s.push_str("    min_size = min_size / 2.0\n");
        s.push_str("print(results)\n");
        s
    }

    /// Inverse of [`ConvergencePlan::render_script`].
    pub fn parse_script(text: &str) -> Result<Self, ExperimentError> {
        let mut simulation_model = None;
        let mut target = None;
        let mut region = None;
        let mut metric = None;
        let mut threshold: Option<Option<f64>> = None;
        let mut iterations = None;
        let mut max_size = None;
        let mut min_size = None;
        let mut manual = Vec::new();
        let err = |line: usize, reason: &str| ExperimentError::ScriptSyntax {
            line,
            reason: reason.to_string(),
        };
        let number = |line: usize, v: &str| v.parse::<f64>().map_err(|_| err(line, "expected a number"));

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if let Some(rest) = t.strip_prefix("# convergence study for simulation model ") {
                simulation_model = Some(rest.trim().to_string());
                continue;
            }
            if let Some(rest) = t.strip_prefix("# target:") {
                target = Some(rest.trim().to_string());
                continue;
            }
            let (code, is_manual) = match t.strip_suffix(MANUAL_MARK.trim_start()) {
                Some(c) => (c.trim_end(), true),
                None => (t, false),
            };
            let Some((lhs, rhs)) = code.split_once(" = ") else {
                if is_manual {
                    return Err(err(line, "manual marker on a derived line"));
                }
                continue;
            };
            let rhs = rhs.trim();
            let slot = match lhs.trim() {
                "iterations" => {
                    iterations = Some(rhs.parse::<usize>().map_err(|_| err(line, "expected an integer"))?);
                    Some(SLOT_MAX_ITERATIONS)
                }
                "max_size" if max_size.is_none() => {
                    max_size = Some(number(line, rhs)?);
                    Some(SLOT_MAX_SIZE)
                }
                "min_size" if min_size.is_none() => {
                    min_size = Some(number(line, rhs)?);
                    Some(SLOT_MIN_SIZE)
                }
                "threshold" => {
                    threshold = Some(if rhs == "None" { None } else { Some(number(line, rhs)?) });
                    Some(SLOT_THRESHOLD)
                }
                "current" => {
                    let inner = rhs
                        .strip_prefix("model.fenics_study.compute_current(\"")
                        .and_then(|r| r.strip_suffix("\")"))
                        .ok_or_else(|| err(line, "expected compute_current(\"<region>\")"))?;
                    region = Some(inner.to_string());
                    None
                }
                "error" => {
                    metric = Some(rhs.to_string());
                    None
                }
                _ => None,
            };
            if is_manual {
                match slot {
                    Some(s) => manual.push(s.to_string()),
                    None => return Err(err(line, "manual marker on a derived line")),
                }
            }
        }
        let missing = |what: &str| ExperimentError::ScriptSyntax {
            line: 0,
            reason: format!("script does not define {what}"),
        };
        let order = convergence_schema();
        manual.sort_by_key(|m| order.slots.iter().position(|s| &s.name == m));
        let plan = ConvergencePlan {
            simulation_model: simulation_model.ok_or_else(|| missing("the simulation model"))?,
            target: target.ok_or_else(|| missing("the target"))?,
            region: region.ok_or_else(|| missing("the region of interest"))?,
            metric: metric.ok_or_else(|| missing("the error metric"))?,
            threshold: threshold.ok_or_else(|| missing("the threshold"))?,
            iterations: iterations.ok_or_else(|| missing("the iteration count"))?,
            max_size: max_size.ok_or_else(|| missing("max_size"))?,
            min_size: min_size.ok_or_else(|| missing("min_size"))?,
            manual,
        };
        plan.validate()?;
        Ok(plan)
    }
}

const MANUAL_MARK: &str = "  # manual";

/// Build a plan from a fully bound convergence schema.
pub fn generate_convergence(filled: &FilledSchema) -> Result<ConvergencePlan, ExperimentError> {
    if !filled.is_complete() {
        return Err(ExperimentError::Incomplete(filled.missing.clone()));
    }
    let get = |slot: &str| filled.value(slot).expect("complete schema binds every slot");
    let text = |slot: &str| -> Result<String, ExperimentError> {
        match get(slot) {
            AttrValue::Text(s) => Ok(s.clone()),
            AttrValue::References(ids) if ids.len() == 1 => Ok(ids[0].clone()),
            other => Err(ExperimentError::SlotType {
                slot: slot.to_string(),
                found: other.kind_name().to_string(),
            }),
        }
    };
    let real = |slot: &str| -> Result<f64, ExperimentError> {
        get(slot).as_number().ok_or_else(|| ExperimentError::SlotType {
            slot: slot.to_string(),
            found: get(slot).kind_name().to_string(),
        })
    };
    let iterations = real(SLOT_MAX_ITERATIONS)?;
    if iterations.fract() != 0.0 || iterations < 0.0 {
        return Err(ExperimentError::InvalidPlan(format!(
            "iteration count {iterations} is not a whole number"
        )));
    }
    let manual = convergence_schema()
        .slots
        .iter()
        .filter(|s| {
            matches!(
                filled.values.get(&s.name),
                Some(BoundValue {
                    source: SlotSource::Manual { .. },
                    ..
                })
            )
        })
        .map(|s| s.name.clone())
        .collect();
    let plan = ConvergencePlan {
        simulation_model: text(SLOT_SIMULATION_MODEL)?,
        target: text(SLOT_TARGET)?,
        region: text(SLOT_REGION)?,
        metric: text(SLOT_METRIC)?,
        threshold: Some(real(SLOT_THRESHOLD)?),
        iterations: iterations as usize,
        max_size: real(SLOT_MAX_SIZE)?,
        min_size: real(SLOT_MIN_SIZE)?,
        manual,
    };
    plan.validate()?;
    Ok(plan)
}
