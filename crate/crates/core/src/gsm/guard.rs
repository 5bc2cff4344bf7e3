use super::definition::{GuardExpression, WorkflowDefinition};
use super::state::{ArtifactInstance, StudyState};

/// Syntax check for attribute values delegated to the registered toolboxes.
pub trait SpecChecker: Sync {
    fn check(&self, artifact: &ArtifactInstance, attribute: &str) -> Result<(), String>;
}

/// Accepts every present value; used where no toolbox is registered.
#[derive(Debug, Default, Clone, Copy)]
pub struct AcceptAll;

impl SpecChecker for AcceptAll {
    fn check(&self, artifact: &ArtifactInstance, attribute: &str) -> Result<(), String> {
        if artifact.attribute_set(attribute) {
            Ok(())
        } else {
            Err(format!("{attribute} is not set"))
        }
    }
}

/// Evaluation environment for guards and achieve conditions.
pub struct GuardContext<'a> {
    pub def: &'a WorkflowDefinition,
    pub state: &'a StudyState,
    pub checker: &'a dyn SpecChecker,
    /// Whether the stage execution being left created an artifact.
    pub created: bool,
}

impl<'a> GuardContext<'a> {
    pub fn new(def: &'a WorkflowDefinition, state: &'a StudyState, checker: &'a dyn SpecChecker) -> Self {
        GuardContext {
            def,
            state,
            checker,
            created: false,
        }
    }

    pub fn eval(&self, expr: &GuardExpression, subject: &ArtifactInstance) -> bool {
        match expr {
            GuardExpression::True => true,
            GuardExpression::MilestoneAchieved(m) => subject.achieved(m),
            GuardExpression::AttributeSet(a) => subject.attribute_set(a),
            GuardExpression::AttributeEquals { attribute, value } => subject.text(attribute) == Some(value.as_str()),
            GuardExpression::LinkedExists { via, condition } => self
                .state
                .navigate(subject, via)
                .into_iter()
                .any(|a| self.eval(condition, a)),
            GuardExpression::ForAllLinked { via, condition } => self
                .state
                .navigate(subject, via)
                .into_iter()
                .all(|a| self.eval(condition, a)),
            GuardExpression::SyntaxValid(a) => self.checker.check(subject, a).is_ok(),
            GuardExpression::Created => self.created,
            GuardExpression::And(parts) => parts.iter().all(|p| self.eval(p, subject)),
            GuardExpression::Or(parts) => parts.iter().any(|p| self.eval(p, subject)),
            GuardExpression::Not(inner) => !self.eval(inner, subject),
        }
    }

    /// Smallest failing part of `expr`, or `None` when it holds.
    pub fn unmet(&self, expr: &GuardExpression, subject: &ArtifactInstance) -> Option<GuardExpression> {
        if self.eval(expr, subject) {
            return None;
        }
        match expr {
            GuardExpression::And(parts) => {
                let mut failing: Vec<GuardExpression> = parts.iter().filter_map(|p| self.unmet(p, subject)).collect();
                if failing.len() == 1 {
                    failing.pop()
                } else {
                    Some(GuardExpression::And(failing))
                }
            }
            _ => Some(expr.clone()),
        }
    }

    /// Explanations for failing syntax checks inside `expr`.
    pub fn syntax_errors(&self, expr: &GuardExpression, subject: &ArtifactInstance) -> Vec<String> {
        let mut errors = Vec::new();
        expr.walk(&mut |e| {
            if let GuardExpression::SyntaxValid(a) = e {
                if let Err(msg) = self.checker.check(subject, a) {
                    errors.push(format!("{a}: {msg}"));
                }
            }
        });
        errors
    }
}

/// Evaluate a guard with no toolbox syntax checks.
pub fn evaluate_guard(
    def: &WorkflowDefinition,
    state: &StudyState,
    expr: &GuardExpression,
    subject: &str,
) -> Result<bool, super::EngineError> {
    let artifact = state
        .artifact(subject)
        .ok_or_else(|| super::EngineError::UnknownArtifact(subject.to_string()))?;
    Ok(GuardContext::new(def, state, &AcceptAll).eval(expr, artifact))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsm::definition::Nav;

    fn state_with(cm: ArtifactInstance, others: Vec<ArtifactInstance>) -> StudyState {
        let mut s = StudyState::empty("t", "1");
        s.artifacts.push(cm);
        s.artifacts.extend(others);
        s
    }

    fn empty_def() -> WorkflowDefinition {
        WorkflowDefinition {
            name: "t".into(),
            version: "1".into(),
            artifact_types: vec![],
        }
    }

    #[test]
    fn quantifiers_over_empty_link_sets() {
        let s = state_with(ArtifactInstance::new("cmo", "ConceptualModel", 0), vec![]);
        let def = empty_def();
        let ctx = GuardContext::new(&def, &s, &AcceptAll);
        let cm = s.artifact("cmo").unwrap();
        let inner = GuardExpression::milestone("assembled-inp");
        assert!(ctx.eval(
            &GuardExpression::for_all_linked(Nav::Forward("input-data".into()), inner.clone()),
            cm
        ));
        assert!(!ctx.eval(
            &GuardExpression::linked_exists(Nav::Forward("input-data".into()), inner),
            cm
        ));
    }

    #[test]
    fn unmet_reports_only_failing_conjuncts() {
        let mut cm = ArtifactInstance::new("cmo", "ConceptualModel", 0);
        cm.attributes
            .insert("objective".into(), crate::gsm::AttrValue::text("x"));
        let s = state_with(cm, vec![]);
        let def = empty_def();
        let ctx = GuardContext::new(&def, &s, &AcceptAll);
        let expr = GuardExpression::and([
            GuardExpression::attr("objective"),
            GuardExpression::milestone("a"),
            GuardExpression::milestone("b"),
        ]);
        let unmet = ctx.unmet(&expr, s.artifact("cmo").unwrap()).unwrap();
        assert_eq!(
            unmet,
            GuardExpression::and([GuardExpression::milestone("a"), GuardExpression::milestone("b")])
        );
    }

    #[test]
    fn backward_navigation_finds_owner() {
        let mut cm = ArtifactInstance::new("cmo", "ConceptualModel", 0);
        cm.links.insert("simulation-models".into(), vec!["smo".into()]);
        cm.milestones.insert(
            "validated-cmo".into(),
            crate::gsm::MilestoneState {
                status: crate::gsm::MilestoneStatus::Achieved,
                achieved_at: Some(3),
                invalidated_at: None,
                times_achieved: 1,
            },
        );
        let smo = ArtifactInstance::new("smo", "SimulationModel", 1);
        let s = state_with(cm, vec![smo]);
        let def = empty_def();
        let ctx = GuardContext::new(&def, &s, &AcceptAll);
        let expr = GuardExpression::linked_exists(
            Nav::Backward("simulation-models".into()),
            GuardExpression::milestone("validated-cmo"),
        );
        assert!(ctx.eval(&expr, s.artifact("smo").unwrap()));
    }
}
