use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::definition::{ArtifactTypeDef, GuardExpression, Nav, SentryTrigger, WorkflowDefinition};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DefinitionError {
    Duplicate { what: String, name: String },
    UnresolvedReference { context: String, reference: String },
    MalformedTree { artifact_type: String, stages: Vec<String> },
    NoMilestone { artifact_type: String, stage: String },
    TooFewOutcomes { artifact_type: String, stage: String },
    InvalidGuard { context: String, reason: String },
}

impl fmt::Display for DefinitionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DefinitionError::Duplicate { what, name } => write!(f, "duplicate {what} {name}"),
            DefinitionError::UnresolvedReference { context, reference } => {
                write!(f, "{context}: unresolved reference {reference}")
            }
            DefinitionError::MalformedTree { artifact_type, stages } => {
                write!(f, "{artifact_type}: stage nesting cycle {}", stages.join(" -> "))
            }
            DefinitionError::NoMilestone { artifact_type, stage } => {
                write!(f, "{artifact_type}/{stage}: stage declares no milestone")
            }
            DefinitionError::TooFewOutcomes { artifact_type, stage } => write!(
                f,
                "{artifact_type}/{stage}: outcome stage needs at least two outcome milestones"
            ),
            DefinitionError::InvalidGuard { context, reason } => write!(f, "{context}: {reason}"),
        }
    }
}

/// Check that every reference resolves and every stage tree is well formed.
pub fn validate_definition(def: &WorkflowDefinition) -> Vec<DefinitionError> {
    let mut errors = Vec::new();
    let dup = |what: &str, names: Vec<&str>, errors: &mut Vec<DefinitionError>| {
        let mut seen = HashSet::new();
        for n in names {
            if !seen.insert(n) {
                errors.push(DefinitionError::Duplicate {
                    what: what.to_string(),
                    name: n.to_string(),
                });
            }
        }
    };
    dup(
        "artifact type",
        def.artifact_types.iter().map(|t| t.name.as_str()).collect(),
        &mut errors,
    );
    dup(
        "abbreviation",
        def.artifact_types.iter().map(|t| t.abbreviation.as_str()).collect(),
        &mut errors,
    );
    dup(
        "action",
        def.stages().map(|(_, s)| s.action.as_str()).collect(),
        &mut errors,
    );
    dup(
        "milestone",
        def.stages()
            .flat_map(|(_, s)| s.milestones.iter().map(|m| m.name.as_str()))
            .collect(),
        &mut errors,
    );

    for ty in &def.artifact_types {
        dup(
            &format!("{} stage", ty.name),
            ty.stages.iter().map(|s| s.name.as_str()).collect(),
            &mut errors,
        );
        dup(
            &format!("{} attribute", ty.name),
            ty.attributes.iter().map(|a| a.name.as_str()).collect(),
            &mut errors,
        );
        check_tree(ty, &mut errors);
        for attr in &ty.attributes {
            for r in &attr.requires {
                if ty.attribute(r).is_none() {
                    errors.push(unresolved(format!("{}.{}", ty.name, attr.name), r));
                }
            }
        }
        for link in &ty.links {
            let ctx = format!("{}.{}", ty.name, link.name);
            if def.artifact_type(&link.target).is_none() {
                errors.push(unresolved(ctx.clone(), &link.target));
            }
            if let Some(cond) = &link.forbidden_when {
                if ty.attribute(&cond.attribute).is_none() {
                    errors.push(unresolved(ctx.clone(), &cond.attribute));
                }
            }
            let mut at = ty.name.clone();
            for nav in &link.scope {
                match def.nav_target(&at, nav) {
                    Some(t) => at = t.name.clone(),
                    None => {
                        errors.push(unresolved(ctx.clone(), &nav.to_string()));
                        break;
                    }
                }
            }
            if !link.scope.is_empty() && at != link.target {
                errors.push(DefinitionError::InvalidGuard {
                    context: ctx,
                    reason: format!("scope ends at {at}, not {}", link.target),
                });
            }
        }
        for stage in &ty.stages {
            let ctx = format!("{}/{}", ty.name, stage.name);
            if let Some(p) = &stage.parent {
                if ty.stage(p).is_none() {
                    errors.push(unresolved(ctx.clone(), p));
                }
            }
            if stage.milestones.is_empty() {
                errors.push(DefinitionError::NoMilestone {
                    artifact_type: ty.name.clone(),
                    stage: stage.name.clone(),
                });
            }
            if stage.is_outcome_stage() {
                let labels: BTreeSet<_> = stage.milestones.iter().filter_map(|m| m.outcome.as_deref()).collect();
                if labels.len() < 2 || labels.len() != stage.milestones.len() {
                    errors.push(DefinitionError::TooFewOutcomes {
                        artifact_type: ty.name.clone(),
                        stage: stage.name.clone(),
                    });
                }
                if let Some(key) = stage.outcome.as_ref().and_then(|o| o.result_key.as_ref()) {
                    if key.is_empty() {
                        errors.push(unresolved(ctx.clone(), key));
                    }
                }
            }
            for w in &stage.writes {
                if ty.attribute(w).is_none() && ty.link(w).is_none() {
                    errors.push(unresolved(ctx.clone(), w));
                }
            }
            if let Some(c) = &stage.creates {
                match ty.link(&c.link) {
                    Some(l) if l.target == c.artifact_type => {}
                    _ => errors.push(unresolved(ctx.clone(), &format!("{} -> {}", c.link, c.artifact_type))),
                }
            }
            check_expr(def, ty, &stage.guard, &ctx, true, &mut errors);
            for m in &stage.milestones {
                let mctx = format!("{ctx}/{}", m.name);
                check_expr(def, ty, &m.achieve, &mctx, false, &mut errors);
                for s in &m.sentries {
                    let target = match &s.via {
                        None => Some(ty),
                        Some(nav) => def.nav_target(&ty.name, nav),
                    };
                    let Some(target) = target else {
                        errors.push(unresolved(
                            mctx.clone(),
                            &s.via.as_ref().map(Nav::to_string).unwrap_or_default(),
                        ));
                        continue;
                    };
                    let ok = match &s.on {
                        SentryTrigger::AttributeChanged { attribute } => {
                            attribute.as_ref().is_none_or(|a| target.attribute(a).is_some())
                        }
                        SentryTrigger::LinkAdded { link } => link.as_ref().is_none_or(|l| target.link(l).is_some()),
                        SentryTrigger::StageEntered { stage } => target.stage(stage).is_some(),
                        SentryTrigger::MilestoneAchieved { milestone }
                        | SentryTrigger::MilestoneInvalidated { milestone } => target.milestone(milestone).is_some(),
                    };
                    if !ok {
                        errors.push(unresolved(mctx.clone(), &format!("{:?}", s.on)));
                    }
                }
            }
        }
    }
    errors
}

fn unresolved(context: String, reference: &str) -> DefinitionError {
    DefinitionError::UnresolvedReference {
        context,
        reference: reference.to_string(),
    }
}

fn check_tree(ty: &ArtifactTypeDef, errors: &mut Vec<DefinitionError>) {
    let mut reported: HashSet<String> = HashSet::new();
    for start in &ty.stages {
        let mut chain: Vec<String> = Vec::new();
        let mut current = Some(start);
        while let Some(s) = current {
            if let Some(pos) = chain.iter().position(|n| *n == s.name) {
                let cycle: Vec<String> = chain[pos..].to_vec();
                let mut key = cycle.clone();
                key.sort();
                if reported.insert(key.join("\u{1}")) {
                    errors.push(DefinitionError::MalformedTree {
                        artifact_type: ty.name.clone(),
                        stages: cycle,
                    });
                }
                break;
            }
            chain.push(s.name.clone());
            current = s.parent.as_deref().and_then(|p| ty.stage(p));
        }
    }
}

fn check_expr(
    def: &WorkflowDefinition,
    ty: &ArtifactTypeDef,
    expr: &GuardExpression,
    ctx: &str,
    is_guard: bool,
    errors: &mut Vec<DefinitionError>,
) {
    match expr {
        GuardExpression::True => {}
        GuardExpression::MilestoneAchieved(m) => {
            if ty.milestone(m).is_none() {
                errors.push(unresolved(ctx.to_string(), m));
            }
        }
        GuardExpression::AttributeSet(a) | GuardExpression::AttributeEquals { attribute: a, .. } => {
            if ty.attribute(a).is_none() {
                errors.push(unresolved(ctx.to_string(), a));
            }
        }
        GuardExpression::SyntaxValid(a) => {
            if is_guard {
                errors.push(DefinitionError::InvalidGuard {
                    context: ctx.to_string(),
                    reason: "syntax checks are only allowed in achieve conditions".into(),
                });
            }
            if ty.attribute(a).is_none() {
                errors.push(unresolved(ctx.to_string(), a));
            }
        }
        GuardExpression::Created => {
            if is_guard {
                errors.push(DefinitionError::InvalidGuard {
                    context: ctx.to_string(),
                    reason: "creation checks are only allowed in achieve conditions".into(),
                });
            }
        }
        GuardExpression::LinkedExists { via, condition } | GuardExpression::ForAllLinked { via, condition } => {
            match def.nav_target(&ty.name, via) {
                Some(target) => check_expr(def, target, condition, ctx, is_guard, errors),
                None => errors.push(unresolved(ctx.to_string(), &via.to_string())),
            }
        }
        GuardExpression::And(parts) | GuardExpression::Or(parts) => {
            for p in parts {
                check_expr(def, ty, p, ctx, is_guard, errors);
            }
        }
        GuardExpression::Not(inner) => check_expr(def, ty, inner, ctx, is_guard, errors),
    }
}
