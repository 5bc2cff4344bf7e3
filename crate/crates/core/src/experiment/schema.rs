use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::gsm::{AttrValue, Nav, StudyState, WorkflowDefinition};
use crate::study::SIMULATION_EXPERIMENT;

pub const SLOT_SIMULATION_MODEL: &str = "simulation model";
pub const SLOT_REGION: &str = "region of interest";
pub const SLOT_METRIC: &str = "error metric";
pub const SLOT_THRESHOLD: &str = "error threshold";
pub const SLOT_MAX_ITERATIONS: &str = "max iterations";
pub const SLOT_MAX_SIZE: &str = "initial max element size";
pub const SLOT_MIN_SIZE: &str = "initial min element size";
pub const SLOT_TARGET: &str = "target language";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemanticType {
    Reference,
    Text,
    MathExpression,
    RealNumber,
    ExperimentToolbox,
}

/// Where a slot value comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "binding", rename_all = "kebab-case")]
pub enum SlotBinding {
    /// Follow `path` from the experiment; take `attribute`, or the artifact id itself when absent.
    ArtifactPath {
        path: Vec<Nav>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        attribute: Option<String>,
    },
    /// Supplied by the modeler through this experiment attribute.
    Manual { attribute: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub semantic_type: SemanticType,
    pub binding: SlotBinding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSchema {
    pub name: String,
    pub slots: Vec<Slot>,
}

impl ExperimentSchema {
    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }
}

fn path_slot(name: &str, semantic_type: SemanticType, path: Vec<Nav>, attribute: Option<&str>) -> Slot {
    Slot {
        name: name.into(),
        semantic_type,
        binding: SlotBinding::ArtifactPath {
            path,
            attribute: attribute.map(str::to_string),
        },
    }
}

fn manual_slot(name: &str, attribute: &str) -> Slot {
    Slot {
        name: name.into(),
        semantic_type: SemanticType::RealNumber,
        binding: SlotBinding::Manual {
            attribute: attribute.into(),
        },
    }
}

/// Inputs of a mesh convergence study.
pub fn convergence_schema() -> ExperimentSchema {
    let req = || vec![Nav::Forward("requirement".into())];
    ExperimentSchema {
        name: "convergence".into(),
        slots: vec![
            path_slot(
                SLOT_SIMULATION_MODEL,
                SemanticType::Reference,
                vec![Nav::Backward("experiments".into())],
                None,
            ),
            path_slot(SLOT_REGION, SemanticType::Text, req(), Some("region")),
            path_slot(SLOT_METRIC, SemanticType::MathExpression, req(), Some("metric")),
            path_slot(SLOT_THRESHOLD, SemanticType::RealNumber, req(), Some("threshold")),
            manual_slot(SLOT_MAX_ITERATIONS, "max-iterations"),
            manual_slot(SLOT_MAX_SIZE, "initial-max-size"),
            manual_slot(SLOT_MIN_SIZE, "initial-min-size"),
            path_slot(SLOT_TARGET, SemanticType::ExperimentToolbox, vec![], Some("approach")),
        ],
    }
}

/// Which artifact attribute (or manual input) a bound value was read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum SlotSource {
    Artifact {
        artifact: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        attribute: Option<String>,
    },
    Manual {
        artifact: String,
        attribute: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub value: AttrValue,
    pub source: SlotSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilledSchema {
    pub schema: String,
    pub experiment: String,
    pub values: BTreeMap<String, BoundValue>,
    /// Unbound slots in schema order.
    pub missing: Vec<String>,
}

impl FilledSchema {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn value(&self, slot: &str) -> Option<&AttrValue> {
        self.values.get(slot).map(|b| &b.value)
    }
}

/// Bind every slot whose path resolves on the study state; report the rest as missing.
pub fn fill_schema(
    def: &WorkflowDefinition,
    schema: &ExperimentSchema,
    state: &StudyState,
    experiment: &str,
) -> Result<FilledSchema, ExperimentError> {
    let exp = state
        .artifact(experiment)
        .filter(|a| a.artifact_type == SIMULATION_EXPERIMENT)
        .ok_or_else(|| ExperimentError::UnknownExperiment(experiment.to_string()))?;
    let mut values = BTreeMap::new();
    let mut missing = Vec::new();
    for slot in &schema.slots {
        let bound = match &slot.binding {
            SlotBinding::ArtifactPath { path, attribute } => {
                let mut ty = exp.artifact_type.clone();
                let mut at = vec![exp];
                for nav in path {
                    ty = def
                        .nav_target(&ty, nav)
                        .ok_or_else(|| ExperimentError::BrokenBinding {
                            slot: slot.name.clone(),
                            reason: format!("{ty} has no navigation {nav}"),
                        })?
                        .name
                        .clone();
                    at = at.iter().flat_map(|a| state.navigate(a, nav)).collect();
                }
                if let Some(attr) = attribute {
                    if def.artifact_type(&ty).and_then(|t| t.attribute(attr)).is_none() {
                        return Err(ExperimentError::BrokenBinding {
                            slot: slot.name.clone(),
                            reason: format!("{ty} declares no attribute {attr}"),
                        });
                    }
                }
                at.first().and_then(|a| match attribute {
                    None => Some(BoundValue {
                        value: AttrValue::References(vec![a.id.clone()]),
                        source: SlotSource::Artifact {
                            artifact: a.id.clone(),
                            attribute: None,
                        },
                    }),
                    Some(attr) => a.attribute(attr).filter(|v| v.is_present()).map(|v| BoundValue {
                        value: v.clone(),
                        source: SlotSource::Artifact {
                            artifact: a.id.clone(),
                            attribute: Some(attr.clone()),
                        },
                    }),
                })
            }
            SlotBinding::Manual { attribute } => {
                exp.attribute(attribute).filter(|v| v.is_present()).map(|v| BoundValue {
                    value: v.clone(),
                    source: SlotSource::Manual {
                        artifact: exp.id.clone(),
                        attribute: attribute.clone(),
                    },
                })
            }
        };
        match bound {
            Some(b) => {
                values.insert(slot.name.clone(), b);
            }
            None => missing.push(slot.name.clone()),
        }
    }
    Ok(FilledSchema {
        schema: schema.name.clone(),
        experiment: experiment.to_string(),
        values,
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_lists_the_eight_inputs_in_order() {
        let s = convergence_schema();
        let names: Vec<_> = s.slots.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            [
                SLOT_SIMULATION_MODEL,
                SLOT_REGION,
                SLOT_METRIC,
                SLOT_THRESHOLD,
                SLOT_MAX_ITERATIONS,
                SLOT_MAX_SIZE,
                SLOT_MIN_SIZE,
                SLOT_TARGET
            ]
        );
        assert!(matches!(
            s.slot(SLOT_MAX_ITERATIONS).unwrap().binding,
            SlotBinding::Manual { .. }
        ));
        match &s.slot(SLOT_REGION).unwrap().binding {
            SlotBinding::ArtifactPath { path, .. } => assert_eq!(path, &[Nav::Forward("requirement".into())]),
            other => panic!("unexpected binding {other:?}"),
        }
        let unique: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
    }
}
