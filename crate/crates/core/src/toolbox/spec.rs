use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::experiment::ConvergencePlan;

/// Physics template with material data, in the YAML notation of the ES toolbox.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalModelSpec {
    pub physics: String,
    pub materials: Vec<String>,
    /// S/m per region.
    pub conductivity: BTreeMap<String, f64>,
    pub boundaries: BoundarySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    /// Prescribed potential per contact tag.
    #[serde(rename = "Dirichlet")]
    pub dirichlet: BTreeMap<String, f64>,
}

impl PhysicalModelSpec {
    pub fn parse(text: &str) -> Result<Self, String> {
        let spec: PhysicalModelSpec = serde_yaml::from_str(text).map_err(|e| e.to_string())?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.physics != "ES" {
            return Err(format!("unsupported physics template {:?}", self.physics));
        }
        for (region, sigma) in &self.conductivity {
            if !self.materials.contains(region) {
                return Err(format!("conductivity given for undeclared material {region}"));
            }
            if !(sigma.is_finite() && *sigma > 0.0) {
                return Err(format!("conductivity of {region} must be positive, got {sigma}"));
            }
        }
        if let Some(m) = self.materials.iter().find(|m| !self.conductivity.contains_key(*m)) {
            return Err(format!("material {m} has no conductivity"));
        }
        self.boundaries.validate(2)
    }
}

impl BoundarySpec {
    pub fn parse(text: &str) -> Result<Self, String> {
        let spec: BoundarySpec = serde_yaml::from_str(text).map_err(|e| e.to_string())?;
        spec.validate(1)?;
        Ok(spec)
    }

    fn validate(&self, min_tags: usize) -> Result<(), String> {
        if self.dirichlet.len() < min_tags {
            return Err(format!("at least {min_tags} Dirichlet contact(s) required"));
        }
        match self.dirichlet.iter().find(|(_, v)| !v.is_finite()) {
            Some((tag, v)) => Err(format!("boundary value of {tag} is not finite: {v}")),
            None => Ok(()),
        }
    }

    /// Renders the block in the same YAML notation it is parsed from.
    pub fn to_yaml(&self) -> String {
        let mut out = String::from("Dirichlet:\n");
        for (tag, v) in &self.dirichlet {
            out.push_str(&format!("  {tag}: {v:?}\n"));
        }
        out
    }
}

/// Executable content of a `data` requirement: an analytical reference for the field
/// at a probe point plus the tolerated relative deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequirementData {
    pub analytical: String,
    /// Applied voltage of the reference problem.
    pub voltage: f64,
    /// Electrode distance of the reference problem, m.
    pub distance: f64,
    pub probe: [f64; 2],
    /// Allowed relative deviation between simulated and analytical field.
    pub tolerance: f64,
}

impl RequirementData {
    pub const PLATE_FIELD: &'static str = "plate-field";

    pub fn parse(text: &str) -> Result<Self, String> {
        let data: RequirementData = serde_yaml::from_str(text).map_err(|e| e.to_string())?;
        if data.analytical != Self::PLATE_FIELD {
            return Err(format!("unknown analytical reference {:?}", data.analytical));
        }
        if !(data.distance > 0.0) || !(data.tolerance > 0.0) {
            return Err("distance and tolerance must be positive".into());
        }
        Ok(data)
    }
}

/// What an experiment specification asks the toolbox to do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExperimentSpec {
    /// Compare the model against its linked requirement.
    Validation,
    /// Sample |E| along a horizontal line.
    Analysis { probe_y: f64, samples: usize },
    /// Sweep the conductivity of one material and accept if any point meets the requirement.
    Calibration { material: String, values: Vec<f64> },
    /// Generated refinement loop; only produced from the rendered script form.
    #[serde(skip)]
    Convergence(ConvergencePlan),
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, String> {
        if ConvergencePlan::looks_like_script(text) {
            return ConvergencePlan::parse_script(text)
                .map(ExperimentSpec::Convergence)
                .map_err(|e| e.to_string());
        }
        let spec: ExperimentSpec = serde_yaml::from_str(text).map_err(|e| e.to_string())?;
        match &spec {
            ExperimentSpec::Analysis { samples, .. } if *samples == 0 => Err("samples must be positive".into()),
            ExperimentSpec::Calibration { values, .. } if values.is_empty() => {
                Err("calibration needs at least one value".into())
            }
            ExperimentSpec::Calibration { values, .. } if values.iter().any(|v| !(*v > 0.0)) => {
                Err("calibration values must be positive conductivities".into())
            }
            _ => Ok(spec),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const LISTING: &str = "# Using the electrical stimulation template
physics: ES

# Specifying the materials
materials: [Air, Medium]

# Specifying the material conductivities in S/m
conductivity:
  Air: 1e-14
  Medium : 1.0

# Specifying the boundary conditions and boundary values
boundaries:
  Dirichlet:
    Contact1: 1.0
    Contact2: 0.0
";

    #[test]
    fn physical_model_listing_parses() {
        let spec = PhysicalModelSpec::parse(LISTING).unwrap();
        assert_eq!(spec.materials, ["Air", "Medium"]);
        assert_eq!(spec.conductivity["Air"], 1e-14);
        assert_eq!(spec.conductivity["Medium"], 1.0);
        assert_eq!(spec.boundaries.dirichlet["Contact1"], 1.0);
    }

    #[test]
    fn physical_model_rejects_bad_material_data() {
        let undeclared = LISTING.replace("[Air, Medium]", "[Medium]");
        assert!(PhysicalModelSpec::parse(&undeclared)
            .unwrap_err()
            .contains("undeclared"));
        let negative = LISTING.replace("Medium : 1.0", "Medium : -1.0");
        assert!(PhysicalModelSpec::parse(&negative).unwrap_err().contains("positive"));
        let one_contact = LISTING.replace("    Contact2: 0.0\n", "");
        assert!(PhysicalModelSpec::parse(&one_contact).is_err());
        assert!(PhysicalModelSpec::parse("physics: [").is_err());
    }

    #[test]
    fn boundary_block_round_trips() {
        let b = BoundarySpec::parse("Dirichlet:\n  Contact1: 1.0\n  Contact2: 0.0\n").unwrap();
        assert_eq!(BoundarySpec::parse(&b.to_yaml()).unwrap(), b);
        assert!(BoundarySpec::parse("Dirichlet: {}").is_err());
    }

    #[test]
    fn experiment_spec_forms() {
        assert_eq!(
            ExperimentSpec::parse("experiment: validation\n").unwrap(),
            ExperimentSpec::Validation
        );
        assert!(ExperimentSpec::parse("experiment: analysis\nprobe_y: 0.002\nsamples: 0\n").is_err());
        assert!(ExperimentSpec::parse("experiment: teleport\n").is_err());
    }
}
