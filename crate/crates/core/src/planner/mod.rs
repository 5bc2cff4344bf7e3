//! Planning view of a study: stages as actions, guards as preconditions, milestones as
//! add effects. Invalidation is ignored, so plans are advice rather than schedules.

mod derive;
mod formula;
mod pddl;
mod search;

pub use derive::*;
pub use formula::*;
pub use pddl::*;
pub use search::*;

use serde::{Deserialize, Serialize};

use crate::gsm::{AttrValue, MilestoneStatus, StudyState, WorkflowDefinition};

/// Name of the one hypothetical artifact per creatable type.
pub fn hypothetical(abbreviation: &str) -> String {
    format!("new-{abbreviation}")
}

/// Facts true in `state`: existence, achieved milestones, links and predicate attributes.
pub fn abstract_state(def: &WorkflowDefinition, state: &StudyState) -> Vec<Atom> {
    let c = |s: &str| Term::Const(s.to_string());
    let mut out = Vec::new();
    for a in &state.artifacts {
        let Some(ty) = def.artifact_type(&a.artifact_type) else {
            continue;
        };
        out.push(Atom::new(&exists_predicate(&ty.abbreviation), vec![c(&a.id)]));
        for (m, s) in &a.milestones {
            if s.status == MilestoneStatus::Achieved {
                out.push(Atom::new(m, vec![c(&a.id)]));
            }
        }
        for targets in a.links.values() {
            for t in targets {
                out.push(Atom::new(LINK, vec![c(&a.id), c(t)]));
            }
        }
        for attr in ty.attributes.iter().filter(|d| d.predicate) {
            if let Some(AttrValue::Text(v)) = a.attribute(&attr.name) {
                out.push(Atom::new(&attr.name, vec![c(&a.id), c(v.as_str())]));
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Existing artifacts followed by one hypothetical object per type some stage creates.
pub fn objects(def: &WorkflowDefinition, state: &StudyState) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for t in &def.artifact_types {
        for a in state.of_type(&t.name) {
            out.push((a.id.clone(), t.planning_type.clone()));
        }
    }
    for t in &def.artifact_types {
        if def.creating_stage_for(&t.name).is_some() {
            let name = hypothetical(&t.abbreviation);
            if state.artifact(&name).is_none() {
                out.push((name, t.planning_type.clone()));
            }
        }
    }
    out
}

/// Target milestone, on a given artifact or on any artifact of the owning type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub milestone: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
}

impl Goal {
    pub fn milestone(name: &str) -> Self {
        Goal {
            milestone: name.to_string(),
            artifact: None,
        }
    }

    pub fn formula(&self, def: &WorkflowDefinition) -> Result<Formula, GuidanceError> {
        let ty = def
            .artifact_types
            .iter()
            .find(|t| t.milestone(&self.milestone).is_some())
            .ok_or_else(|| GuidanceError::UnknownMilestone(self.milestone.clone()))?;
        Ok(match &self.artifact {
            Some(a) => Formula::atom(&self.milestone, vec![Term::Const(a.clone())]),
            None => Formula::Exists(
                vec![TypedVar::new("goal", &ty.planning_type)],
                Box::new(Formula::atom(&self.milestone, vec![Term::var("goal")])),
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum GuidanceError {
    #[error("unknown milestone {0}")]
    UnknownMilestone(String),
    #[error("{0} is not an artifact of this study")]
    UnknownArtifact(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

impl GuidanceError {
    pub fn code(&self) -> &'static str {
        match self {
            GuidanceError::UnknownMilestone(_) => "unknown_milestone",
            GuidanceError::UnknownArtifact(_) => "unknown_artifact",
            GuidanceError::Plan(PlanError::Unreachable) => "goal_unreachable",
            GuidanceError::Plan(_) => "planning_failed",
        }
    }
}

pub fn problem(def: &WorkflowDefinition, state: &StudyState, goal: &Goal) -> Result<Problem, GuidanceError> {
    if let Some(a) = &goal.artifact {
        if state.artifact(a).is_none() {
            return Err(GuidanceError::UnknownArtifact(a.clone()));
        }
    }
    Ok(Problem {
        name: "study".into(),
        domain: def.name.clone(),
        objects: objects(def, state),
        init: abstract_state(def, state),
        goal: goal.formula(def)?,
    })
}

/// One planned stage execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub action: String,
    pub args: Vec<String>,
    pub artifact: String,
    pub artifact_type: String,
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creates: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sub_items: Vec<String>,
}

/// A suggestion shown to the modeler: a creating step is merged with the step that
/// assembles what it created.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub title: String,
    pub steps: Vec<PlanStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guidance {
    pub goal: Goal,
    pub plan: Vec<PlanStep>,
    /// Everything before the goal stage, grouped.
    pub suggestions: Vec<Suggestion>,
    /// The stage that achieves the goal once the suggestions are done.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub then: Option<PlanStep>,
}

pub fn plan(
    abs: &Abstraction,
    def: &WorkflowDefinition,
    state: &StudyState,
    goal: &Goal,
) -> Result<Vec<PlanStep>, GuidanceError> {
    let p = problem(def, state, goal)?;
    let steps = solve(&abs.domain, &p)?;
    Ok(steps
        .into_iter()
        .map(|s| {
            let (_, info) = abs.action(&s.action).expect("steps come from the domain");
            PlanStep {
                artifact: s.args.first().cloned().unwrap_or_default(),
                artifact_type: info.artifact_type.clone(),
                stage: info.stage.clone(),
                creates: info.creates.clone(),
                sub_items: info.sub_items.clone(),
                action: s.action,
                args: s.args,
            }
        })
        .collect())
}

fn title(steps: &[PlanStep]) -> String {
    let first = &steps[0];
    match steps {
        [create, assemble] if create.creates.is_some() => format!(
            "{} and {} {}",
            create.stage,
            assemble.stage.to_lowercase(),
            assemble.artifact
        ),
        _ => format!("{} {}", first.stage, first.artifact),
    }
}

pub fn group(plan: &[PlanStep]) -> Vec<Suggestion> {
    let mut out: Vec<Suggestion> = Vec::new();
    let mut i = 0;
    while i < plan.len() {
        let s = &plan[i];
        let created = s.creates.as_ref().and_then(|_| s.args.last());
        let merge = match (created, plan.get(i + 1)) {
            (Some(new), Some(next)) => &next.artifact == new,
            _ => false,
        };
        let steps: Vec<PlanStep> = plan[i..i + if merge { 2 } else { 1 }].to_vec();
        i += steps.len();
        out.push(Suggestion {
            title: title(&steps),
            steps,
        });
    }
    out
}

/// Shortest completion towards `goal`, grouped into suggestions.
pub fn suggest(
    abs: &Abstraction,
    def: &WorkflowDefinition,
    state: &StudyState,
    goal: &Goal,
) -> Result<Guidance, GuidanceError> {
    let mut steps = plan(abs, def, state, goal)?;
    let full = steps.clone();
    let then = steps.pop();
    Ok(Guidance {
        goal: goal.clone(),
        plan: full,
        suggestions: group(&steps),
        then,
    })
}

/// Domain and problem text for an external planner.
pub fn export_pddl(
    abs: &Abstraction,
    def: &WorkflowDefinition,
    state: &StudyState,
    goal: &Goal,
) -> Result<(String, String), GuidanceError> {
    Ok((abs.domain.to_pddl(), problem(def, state, goal)?.to_pddl()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsm::{AcceptAll, Engine, StudyEvent};
    use crate::study::{build_fea_workflow, ReplayScript, CASE_STUDY_JSONL};

    fn state_before(step: &str) -> (WorkflowDefinition, StudyState) {
        let def = build_fea_workflow();
        let events: Vec<StudyEvent> = ReplayScript::parse(CASE_STUDY_JSONL)
            .unwrap()
            .prefix_before_step(step)
            .unwrap();
        let state = Engine::new(&def, &AcceptAll).replay(&events).unwrap();
        (def, state)
    }

    #[test]
    fn abstraction_of_the_step_three_state() {
        let (def, state) = state_before("Step 4");
        let facts = abstract_state(&def, &state);
        let has = |p: &str, args: &[&str]| {
            facts.contains(&Atom::new(p, args.iter().map(|a| Term::Const(a.to_string())).collect()))
        };
        assert!(has("assembled-smo", &["smo-1"]));
        assert!(has(LINK, &["cmo-1", "smo-1"]));
        assert!(!has("validated-cmo", &["cmo-1"]));
    }

    #[test]
    fn four_suggestions_before_validation() {
        let (def, state) = state_before("Step 4");
        let abs = derive_actions(&def);
        let g = suggest(&abs, &def, &state, &Goal::milestone("validated-smo")).unwrap();
        let shown: Vec<Vec<&str>> = g
            .suggestions
            .iter()
            .map(|s| s.steps.iter().map(|p| p.action.as_str()).collect())
            .collect();
        assert_eq!(
            shown,
            vec![
                vec!["create-req", "assemble-req"],
                vec!["validate-cmo"],
                vec!["choose-req"],
                vec!["create-exp", "assemble-exp"],
            ]
        );
        let then = g.then.unwrap();
        assert_eq!(
            (then.action.as_str(), then.args.clone()),
            ("validate-smo", vec!["smo-1".to_string(), "cmo-1".to_string()])
        );
        assert_eq!(g.plan[5].args, ["new-exp", "val", "new-req"]);
    }

    #[test]
    fn satisfied_goal_and_unknown_goal() {
        let (def, state) = state_before("Step 4");
        let abs = derive_actions(&def);
        assert!(plan(&abs, &def, &state, &Goal::milestone("assembled-smo"))
            .unwrap()
            .is_empty());
        assert_eq!(
            plan(&abs, &def, &state, &Goal::milestone("nonsense"))
                .unwrap_err()
                .code(),
            "unknown_milestone"
        );
    }

    #[test]
    fn exported_problem_round_trips() {
        let (def, state) = state_before("Step 4");
        let abs = derive_actions(&def);
        let (d, p) = export_pddl(&abs, &def, &state, &Goal::milestone("validated-smo")).unwrap();
        assert!(d.contains("(:action validate-smo"));
        assert_eq!(parse_domain(&d).unwrap(), abs.domain);
        assert_eq!(
            parse_problem(&p).unwrap(),
            problem(&def, &state, &Goal::milestone("validated-smo")).unwrap()
        );
    }
}
