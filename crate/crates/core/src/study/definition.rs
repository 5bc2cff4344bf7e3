use crate::gsm::{
    ArtifactTypeDef, AttrCondition, AttrKind, AttributeDef, CreateSpec, GuardExpression as G, LinkDef,
    MilestoneDefinition, Nav, OutcomeSpec, Sentry, SentryTrigger, StageDefinition, WorkflowDefinition,
};

pub const WORKFLOW_NAME: &str = "fea-study";
pub const WORKFLOW_VERSION: &str = "1";

pub const CONCEPTUAL_MODEL: &str = "ConceptualModel";
pub const REQUIREMENT: &str = "Requirement";
pub const INPUT_DATA: &str = "InputData";
pub const SIMULATION_MODEL: &str = "SimulationModel";
pub const GEOMETRICAL_MODEL: &str = "GeometricalModel";
pub const PHYSICAL_MODEL: &str = "PhysicalModel";
pub const SIMULATION_EXPERIMENT: &str = "SimulationExperiment";
pub const SIMULATION_DATA: &str = "SimulationData";

pub const ARTIFACT_TYPES: [&str; 8] = [
    CONCEPTUAL_MODEL,
    REQUIREMENT,
    INPUT_DATA,
    SIMULATION_MODEL,
    GEOMETRICAL_MODEL,
    PHYSICAL_MODEL,
    SIMULATION_EXPERIMENT,
    SIMULATION_DATA,
];

/// Experiment role recorded in the `role` attribute of a simulation experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoleTag {
    Validation,
    Calibration,
    Analysis,
}

impl RoleTag {
    pub const ALL: [RoleTag; 3] = [RoleTag::Validation, RoleTag::Calibration, RoleTag::Analysis];

    /// Attribute value, e.g. `val`.
    pub fn code(self) -> &'static str {
        match self {
            RoleTag::Validation => "val",
            RoleTag::Calibration => "cal",
            RoleTag::Analysis => "ana",
        }
    }

    pub fn from_code(code: &str) -> Option<RoleTag> {
        RoleTag::ALL.into_iter().find(|r| r.code() == code)
    }

    pub fn needs_requirement(self) -> bool {
        self != RoleTag::Analysis
    }
}

fn attr(name: &str, kind: AttrKind) -> AttributeDef {
    AttributeDef {
        name: name.into(),
        kind,
        requires: vec![],
        predicate: false,
    }
}

fn attr_after(name: &str, kind: AttrKind, requires: &[&str]) -> AttributeDef {
    AttributeDef {
        requires: requires.iter().map(|s| s.to_string()).collect(),
        ..attr(name, kind)
    }
}

fn link(name: &str, target: &str) -> LinkDef {
    LinkDef {
        name: name.into(),
        target: target.into(),
        max: None,
        forbidden_when: None,
        scope: vec![],
    }
}

fn milestone(name: &str, achieve: G) -> MilestoneDefinition {
    MilestoneDefinition {
        name: name.into(),
        outcome: None,
        achieve,
        sentries: vec![],
    }
}

fn outcome(name: &str, label: &str) -> MilestoneDefinition {
    MilestoneDefinition {
        outcome: Some(label.into()),
        ..milestone(name, G::True)
    }
}

fn stage(
    name: &str,
    action: &str,
    parent: Option<&str>,
    guard: G,
    milestones: Vec<MilestoneDefinition>,
) -> StageDefinition {
    StageDefinition {
        name: name.into(),
        action: action.into(),
        parent: parent.map(str::to_string),
        guard,
        milestones,
        interactive: true,
        writes: vec![],
        creates: None,
        outcome: None,
    }
}

fn writes(mut s: StageDefinition, names: &[&str]) -> StageDefinition {
    s.writes = names.iter().map(|n| n.to_string()).collect();
    s
}

fn creating(
    name: &str,
    action: &str,
    parent: Option<&str>,
    guard: G,
    created: &str,
    via: &str,
    ms: &str,
) -> StageDefinition {
    let mut s = stage(name, action, parent, guard, vec![milestone(ms, G::Created)]);
    s.creates = Some(CreateSpec {
        artifact_type: created.into(),
        link: via.into(),
    });
    s
}

fn with_outcome(mut s: StageDefinition, result_key: Option<&str>) -> StageDefinition {
    s.outcome = Some(OutcomeSpec {
        result_key: result_key.map(str::to_string),
    });
    s.interactive = result_key.is_none();
    s
}

fn with_sentries(mut s: StageDefinition, sentries: &[Sentry]) -> StageDefinition {
    for m in &mut s.milestones {
        m.sentries = sentries.to_vec();
    }
    s
}

fn on(trigger: SentryTrigger, via: Option<Nav>) -> Sentry {
    Sentry { on: trigger, via }
}

fn changed(attribute: Option<&str>) -> SentryTrigger {
    SentryTrigger::AttributeChanged {
        attribute: attribute.map(str::to_string),
    }
}

fn invalidated(milestone: &str) -> SentryTrigger {
    SentryTrigger::MilestoneInvalidated {
        milestone: milestone.into(),
    }
}

fn fwd(l: &str) -> Nav {
    Nav::Forward(l.into())
}

fn back(l: &str) -> Nav {
    Nav::Backward(l.into())
}

fn m(name: &str) -> G {
    G::milestone(name)
}

fn conceptual_model() -> ArtifactTypeDef {
    const ASSEMBLING: &str = "Assembling conceptual model";
    let validation_sentries = [
        on(
            SentryTrigger::StageEntered {
                stage: ASSEMBLING.into(),
            },
            None,
        ),
        on(changed(None), None),
        on(changed(None), Some(fwd("requirements"))),
        on(changed(None), Some(fwd("input-data"))),
        on(invalidated("assembled-req"), Some(fwd("requirements"))),
        on(invalidated("assembled-inp"), Some(fwd("input-data"))),
        on(
            SentryTrigger::LinkAdded {
                link: Some("requirements".into()),
            },
            None,
        ),
        on(
            SentryTrigger::LinkAdded {
                link: Some("input-data".into()),
            },
            None,
        ),
    ];
    ArtifactTypeDef {
        name: CONCEPTUAL_MODEL.into(),
        abbreviation: "cmo".into(),
        planning_type: "CModel".into(),
        attributes: vec![attr("objective", AttrKind::Text)],
        links: vec![
            link("requirements", REQUIREMENT),
            link("input-data", INPUT_DATA),
            link("simulation-models", SIMULATION_MODEL),
        ],
        stages: vec![
            writes(
                stage(
                    "Specifying objective",
                    "specify-objective",
                    None,
                    G::not(m("objective-specified")),
                    vec![milestone("objective-specified", G::attr("objective"))],
                ),
                &["objective"],
            ),
            stage(
                ASSEMBLING,
                "assemble-cmo",
                None,
                m("objective-specified"),
                vec![milestone("assembled-cmo", G::True)],
            ),
            creating(
                "Creating requirement",
                "create-req",
                Some(ASSEMBLING),
                G::True,
                REQUIREMENT,
                "requirements",
                "requirement-created",
            ),
            creating(
                "Creating input data",
                "create-inp",
                Some(ASSEMBLING),
                G::True,
                INPUT_DATA,
                "input-data",
                "input-data-created",
            ),
            with_sentries(
                with_outcome(
                    stage(
                        "Validating conceptual model",
                        "validate-cmo",
                        None,
                        G::and([
                            m("assembled-cmo"),
                            G::for_all_linked(fwd("requirements"), m("assembled-req")),
                            G::for_all_linked(fwd("input-data"), m("assembled-inp")),
                        ]),
                        vec![outcome("validated-cmo", "valid"), outcome("invalid-cmo", "invalid")],
                    ),
                    None,
                ),
                &validation_sentries,
            ),
            creating(
                "Creating simulation model",
                "create-smo",
                None,
                m("objective-specified"),
                SIMULATION_MODEL,
                "simulation-models",
                "smo-created",
            ),
        ],
    }
}

fn requirement() -> ArtifactTypeDef {
    ArtifactTypeDef {
        name: REQUIREMENT.into(),
        abbreviation: "req".into(),
        planning_type: "Req".into(),
        attributes: vec![
            attr("type", AttrKind::Enum(vec!["data".into(), "logic-formula".into()])),
            attr_after("specification", AttrKind::TextOrBlob, &["type"]),
            attr("region", AttrKind::Text),
            attr("metric", AttrKind::Text),
            attr("threshold", AttrKind::Quantity),
        ],
        links: vec![],
        stages: vec![writes(
            stage(
                "Assembling requirement",
                "assemble-req",
                None,
                G::True,
                vec![milestone(
                    "assembled-req",
                    G::and([G::attr("type"), G::attr("specification")]),
                )],
            ),
            &["type", "specification", "region", "metric", "threshold"],
        )],
    }
}

fn input_data() -> ArtifactTypeDef {
    ArtifactTypeDef {
        name: INPUT_DATA.into(),
        abbreviation: "inp".into(),
        planning_type: "Input".into(),
        attributes: vec![
            attr("name", AttrKind::Text),
            attr("type", AttrKind::Text),
            attr_after("specification", AttrKind::Any, &["type"]),
            attr("source", AttrKind::Text),
        ],
        links: vec![],
        stages: vec![writes(
            stage(
                "Assembling input data",
                "assemble-inp",
                None,
                G::True,
                vec![milestone(
                    "assembled-inp",
                    G::and([G::attr("type"), G::attr("specification"), G::attr("source")]),
                )],
            ),
            &["name", "type", "specification", "source"],
        )],
    }
}

fn simulation_model() -> ArtifactTypeDef {
    const ASSEMBLING: &str = "Assembling simulation model";
    let model_sentries = [
        on(changed(None), Some(fwd("geometrical-model"))),
        on(changed(None), Some(fwd("physical-model"))),
        on(invalidated("assembled-gmo"), Some(fwd("geometrical-model"))),
        on(invalidated("assembled-pmo"), Some(fwd("physical-model"))),
        on(changed(Some("boundary-conditions")), None),
        on(invalidated("bcs-specified"), None),
    ];
    let mut chosen = milestone(
        "requirements-chosen",
        G::linked_exists(fwd("requirements"), m("assembled-req")),
    );
    chosen.sentries = vec![on(invalidated("assembled-req"), Some(fwd("requirements")))];
    ArtifactTypeDef {
        name: SIMULATION_MODEL.into(),
        abbreviation: "smo".into(),
        planning_type: "SModel".into(),
        attributes: vec![attr("boundary-conditions", AttrKind::TextOrBlob)],
        links: vec![
            LinkDef {
                max: Some(1),
                ..link("geometrical-model", GEOMETRICAL_MODEL)
            },
            LinkDef {
                max: Some(1),
                ..link("physical-model", PHYSICAL_MODEL)
            },
            link("experiments", SIMULATION_EXPERIMENT),
            LinkDef {
                scope: vec![back("simulation-models"), fwd("requirements")],
                ..link("requirements", REQUIREMENT)
            },
        ],
        stages: vec![
            stage(
                ASSEMBLING,
                "assemble-smo",
                None,
                G::True,
                vec![milestone(
                    "assembled-smo",
                    G::and([
                        m("bcs-specified"),
                        G::linked_exists(fwd("geometrical-model"), m("assembled-gmo")),
                        G::linked_exists(fwd("physical-model"), m("assembled-pmo")),
                    ]),
                )],
            ),
            creating(
                "Creating geometrical model",
                "create-gmo",
                Some(ASSEMBLING),
                G::True,
                GEOMETRICAL_MODEL,
                "geometrical-model",
                "gmo-created",
            ),
            creating(
                "Creating physical model",
                "create-pmo",
                Some(ASSEMBLING),
                G::True,
                PHYSICAL_MODEL,
                "physical-model",
                "pmo-created",
            ),
            writes(
                stage(
                    "Specifying boundary conditions",
                    "specify-bcs",
                    Some(ASSEMBLING),
                    G::and([
                        G::linked_exists(fwd("geometrical-model"), m("assembled-gmo")),
                        G::linked_exists(fwd("physical-model"), m("assembled-pmo")),
                    ]),
                    vec![milestone("bcs-specified", G::SyntaxValid("boundary-conditions".into()))],
                ),
                &["boundary-conditions"],
            ),
            writes(
                stage("Choosing requirements", "choose-req", None, G::True, vec![chosen]),
                &["requirements"],
            ),
            creating(
                "Creating simulation experiment",
                "create-exp",
                None,
                G::True,
                SIMULATION_EXPERIMENT,
                "experiments",
                "exp-created",
            ),
            with_sentries(
                with_outcome(
                    stage(
                        "Calibrating simulation model",
                        "calibrate-smo",
                        None,
                        G::and([
                            m("assembled-smo"),
                            G::linked_exists(
                                fwd("experiments"),
                                G::and([m("assembled-exp"), G::role_equals(RoleTag::Calibration.code())]),
                            ),
                        ]),
                        vec![
                            outcome("calibrated-smo", "success"),
                            outcome("calibration-failed-smo", "failure"),
                        ],
                    ),
                    Some("calibration-outcome"),
                ),
                &model_sentries,
            ),
            with_sentries(
                with_outcome(
                    stage(
                        "Validating simulation model",
                        "validate-smo",
                        None,
                        G::and([
                            G::linked_exists(back("simulation-models"), m("validated-cmo")),
                            m("assembled-smo"),
                            m("requirements-chosen"),
                            G::linked_exists(
                                fwd("experiments"),
                                G::and([m("assembled-exp"), G::role_equals(RoleTag::Validation.code())]),
                            ),
                        ]),
                        vec![
                            outcome("validated-smo", "succeed"),
                            outcome("validation-failed-smo", "fail"),
                        ],
                    ),
                    Some("validation-outcome"),
                ),
                &model_sentries,
            ),
        ],
    }
}

fn geometrical_model() -> ArtifactTypeDef {
    const ASSEMBLING: &str = "Assembling geometrical model";
    let mut specified = milestone("gmo-specified", G::SyntaxValid("specification".into()));
    specified.sentries = vec![on(changed(Some("cad")), None)];
    ArtifactTypeDef {
        name: GEOMETRICAL_MODEL.into(),
        abbreviation: "gmo".into(),
        planning_type: "GModel".into(),
        attributes: vec![
            attr("approach", AttrKind::Text),
            attr("cad", AttrKind::Blob),
            attr("specification", AttrKind::Blob),
        ],
        links: vec![LinkDef {
            scope: vec![back("geometrical-model"), back("simulation-models"), fwd("input-data")],
            ..link("inputs", INPUT_DATA)
        }],
        stages: vec![
            stage(
                ASSEMBLING,
                "assemble-gmo",
                None,
                G::True,
                vec![milestone(
                    "assembled-gmo",
                    G::and([m("approach-specified-gmo"), m("cad-defined"), m("gmo-specified")]),
                )],
            ),
            writes(
                stage(
                    "Specifying approach",
                    "specify-approach-gmo",
                    Some(ASSEMBLING),
                    G::not(m("approach-specified-gmo")),
                    vec![milestone("approach-specified-gmo", G::SyntaxValid("approach".into()))],
                ),
                &["approach"],
            ),
            writes(
                stage(
                    "Choosing input data",
                    "choose-inp-gmo",
                    Some(ASSEMBLING),
                    G::True,
                    vec![milestone("inputs-chosen-gmo", G::True)],
                ),
                &["inputs"],
            ),
            writes(
                stage(
                    "CAD definition",
                    "define-cad",
                    Some(ASSEMBLING),
                    m("approach-specified-gmo"),
                    vec![milestone("cad-defined", G::SyntaxValid("cad".into()))],
                ),
                &["cad"],
            ),
            writes(
                stage(
                    "Specifying geometrical model",
                    "specify-gmo",
                    Some(ASSEMBLING),
                    m("cad-defined"),
                    vec![specified],
                ),
                &["specification"],
            ),
        ],
    }
}

fn physical_model() -> ArtifactTypeDef {
    const ASSEMBLING: &str = "Assembling physical model";
    ArtifactTypeDef {
        name: PHYSICAL_MODEL.into(),
        abbreviation: "pmo".into(),
        planning_type: "PModel".into(),
        attributes: vec![
            attr("approach", AttrKind::Text),
            attr_after("specification", AttrKind::TextOrBlob, &["approach"]),
        ],
        links: vec![LinkDef {
            scope: vec![back("physical-model"), back("simulation-models"), fwd("input-data")],
            ..link("inputs", INPUT_DATA)
        }],
        stages: vec![
            stage(
                ASSEMBLING,
                "assemble-pmo",
                None,
                G::True,
                vec![milestone(
                    "assembled-pmo",
                    G::and([m("approach-specified-pmo"), m("pmo-specified")]),
                )],
            ),
            writes(
                stage(
                    "Choosing input data",
                    "choose-inp-pmo",
                    Some(ASSEMBLING),
                    G::True,
                    vec![milestone("inputs-chosen-pmo", G::True)],
                ),
                &["inputs"],
            ),
            writes(
                stage(
                    "Specifying approach",
                    "specify-approach-pmo",
                    Some(ASSEMBLING),
                    G::not(m("approach-specified-pmo")),
                    vec![milestone("approach-specified-pmo", G::SyntaxValid("approach".into()))],
                ),
                &["approach"],
            ),
            writes(
                stage(
                    "Specifying physical model",
                    "specify-pmo",
                    Some(ASSEMBLING),
                    m("approach-specified-pmo"),
                    vec![milestone("pmo-specified", G::SyntaxValid("specification".into()))],
                ),
                &["specification"],
            ),
        ],
    }
}

fn simulation_experiment() -> ArtifactTypeDef {
    let needs_req = |role: RoleTag| {
        G::and([
            G::role_equals(role.code()),
            G::linked_exists(fwd("requirement"), m("assembled-req")),
        ])
    };
    let mut role = attr(
        "role",
        AttrKind::Enum(RoleTag::ALL.iter().map(|r| r.code().to_string()).collect()),
    );
    role.predicate = true;
    let mut execute = creating(
        "Executing experiment",
        "execute-exp",
        None,
        G::and([
            m("assembled-exp"),
            G::linked_exists(back("experiments"), m("assembled-smo")),
        ]),
        SIMULATION_DATA,
        "data",
        "executed-exp",
    );
    execute.interactive = false;
    ArtifactTypeDef {
        name: SIMULATION_EXPERIMENT.into(),
        abbreviation: "exp".into(),
        planning_type: "Exp".into(),
        attributes: vec![
            attr("approach", AttrKind::Text),
            role,
            attr_after("specification", AttrKind::TextOrBlob, &["approach"]),
            attr("max-iterations", AttrKind::Number),
            attr("initial-max-size", AttrKind::Quantity),
            attr("initial-min-size", AttrKind::Quantity),
            attr("script", AttrKind::Blob),
        ],
        links: vec![
            LinkDef {
                max: Some(1),
                forbidden_when: Some(AttrCondition {
                    attribute: "role".into(),
                    value: RoleTag::Analysis.code().into(),
                }),
                scope: vec![back("experiments"), fwd("requirements")],
                ..link("requirement", REQUIREMENT)
            },
            LinkDef {
                scope: vec![back("experiments"), back("simulation-models"), fwd("input-data")],
                ..link("inputs", INPUT_DATA)
            },
            link("data", SIMULATION_DATA),
        ],
        stages: vec![
            writes(
                stage(
                    "Assembling simulation experiment",
                    "assemble-exp",
                    None,
                    G::True,
                    vec![milestone(
                        "assembled-exp",
                        G::and([
                            G::SyntaxValid("approach".into()),
                            G::attr("role"),
                            G::SyntaxValid("specification".into()),
                            G::or([
                                G::role_equals(RoleTag::Analysis.code()),
                                needs_req(RoleTag::Validation),
                                needs_req(RoleTag::Calibration),
                            ]),
                        ]),
                    )],
                ),
                &[
                    "approach",
                    "role",
                    "specification",
                    "requirement",
                    "inputs",
                    "max-iterations",
                    "initial-max-size",
                    "initial-min-size",
                    "script",
                ],
            ),
            execute,
        ],
    }
}

fn simulation_data() -> ArtifactTypeDef {
    ArtifactTypeDef {
        name: SIMULATION_DATA.into(),
        abbreviation: "sd".into(),
        planning_type: "SData".into(),
        attributes: vec![
            attr("payload", AttrKind::TextOrBlob),
            attr("metric-value", AttrKind::Any),
            attr("producing-experiment", AttrKind::Any),
        ],
        links: vec![],
        stages: vec![with_outcome(
            stage(
                "Reproducing simulation data",
                "reproduce-sd",
                None,
                G::attr("payload"),
                vec![
                    outcome("reproduced-sd", "succeed"),
                    outcome("not-reproduced-sd", "fail"),
                ],
            ),
            Some("reproduction-outcome"),
        )],
    }
}

/// The eight FEA artifact lifecycles with their information models and link rules.
pub fn build_fea_workflow() -> WorkflowDefinition {
    WorkflowDefinition {
        name: WORKFLOW_NAME.into(),
        version: WORKFLOW_VERSION.into(),
        artifact_types: vec![
            conceptual_model(),
            requirement(),
            input_data(),
            simulation_model(),
            geometrical_model(),
            physical_model(),
            simulation_experiment(),
            simulation_data(),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsm::validate_definition;

    #[test]
    fn shipped_definition_validates() {
        assert_eq!(validate_definition(&build_fea_workflow()), vec![]);
    }

    #[test]
    fn exactly_the_eight_artifact_types() {
        let def = build_fea_workflow();
        let names: Vec<_> = def.artifact_types.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ARTIFACT_TYPES);
    }

    #[test]
    fn simulation_data_is_only_created_by_execution() {
        let def = build_fea_workflow();
        let creators: Vec<_> = def
            .stages()
            .filter(|(_, s)| s.creates.as_ref().is_some_and(|c| c.artifact_type == SIMULATION_DATA))
            .map(|(_, s)| s.action.as_str())
            .collect();
        assert_eq!(creators, ["execute-exp"]);
    }

    #[test]
    fn reproducing_declares_succeed_and_fail() {
        let def = build_fea_workflow();
        let sd = def.artifact_type(SIMULATION_DATA).unwrap();
        let labels: Vec<_> = sd.stages[0]
            .milestones
            .iter()
            .map(|m| m.outcome.clone().unwrap())
            .collect();
        assert_eq!(labels, ["succeed", "fail"]);
    }

    #[test]
    fn role_codes_round_trip() {
        for r in RoleTag::ALL {
            assert_eq!(RoleTag::from_code(r.code()), Some(r));
        }
        assert!(!RoleTag::Analysis.needs_requirement());
    }
}
