use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::formula::{Atom, Formula, Term, TypedVar};
use super::pddl::{Domain, PlanningAction, PredicateDecl};
use crate::gsm::{ArtifactTypeDef, AttrKind, GuardExpression, Nav, StageDefinition, WorkflowDefinition};

pub const LINK: &str = "link";

pub const REQUIREMENTS: [&str; 7] = [
    ":strips",
    ":typing",
    ":negative-preconditions",
    ":disjunctive-preconditions",
    ":existential-preconditions",
    ":universal-preconditions",
    ":equality",
];

pub fn exists_predicate(abbreviation: &str) -> String {
    format!("exists-{abbreviation}")
}

/// Type of the constants a predicate attribute ranges over: `role` gives `Role`.
pub fn value_type(attribute: &str) -> String {
    let mut chars = attribute.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).filter(|c| c.is_alphanumeric()).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{artifact_type}/{stage}: {fragment} cannot be expressed as planning facts")]
pub struct UnabstractableGuard {
    pub artifact_type: String,
    pub stage: String,
    pub fragment: String,
}

/// What a planning action stands for in the workflow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionInfo {
    pub artifact_type: String,
    pub stage: String,
    /// Type created by the stage; its object is the last parameter.
    pub creates: Option<String>,
    /// Attributes the stage must write that the abstraction does not track.
    pub sub_items: Vec<String>,
    /// Milestone added for the subject.
    pub milestone: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abstraction {
    pub domain: Domain,
    /// Parallel to `domain.actions`.
    pub info: Vec<ActionInfo>,
    pub omitted: Vec<UnabstractableGuard>,
}

impl Abstraction {
    pub fn action(&self, name: &str) -> Option<(&PlanningAction, &ActionInfo)> {
        let i = self.domain.actions.iter().position(|a| a.name == name)?;
        Some((&self.domain.actions[i], &self.info[i]))
    }
}

struct Compiler<'a> {
    def: &'a WorkflowDefinition,
    ty: &'a ArtifactTypeDef,
    stage: &'a StageDefinition,
    subject: String,
    params: Vec<TypedVar>,
    effects: Vec<Atom>,
    link_params: BTreeMap<String, String>,
    attr_params: BTreeMap<String, String>,
    sub_items: Vec<String>,
    used_names: Vec<String>,
}

fn fail<T>(c: &Compiler<'_>, fragment: &GuardExpression) -> Result<T, UnabstractableGuard> {
    Err(UnabstractableGuard {
        artifact_type: c.ty.name.clone(),
        stage: c.stage.name.clone(),
        fragment: fragment.to_string(),
    })
}

fn v(name: &str) -> Term {
    Term::Var(name.to_string())
}

impl<'a> Compiler<'a> {
    fn fresh(&mut self, base: &str) -> String {
        let mut name = base.to_string();
        let mut n = 2;
        while self.used_names.contains(&name) {
            name = format!("{base}{n}");
            n += 1;
        }
        self.used_names.push(name.clone());
        name
    }

    fn param(&mut self, base: &str, ty: &str) -> String {
        let name = self.fresh(base);
        self.params.push(TypedVar::new(&name, ty));
        name
    }

    fn target(
        &self,
        from: &str,
        nav: &Nav,
        fragment: &GuardExpression,
    ) -> Result<&'a ArtifactTypeDef, UnabstractableGuard> {
        match self.def.nav_target(from, nav) {
            Some(t) => Ok(t),
            None => fail(self, fragment),
        }
    }

    fn link_atom(nav: &Nav, from: &str, to: &str) -> Formula {
        match nav {
            Nav::Forward(_) => Formula::atom(LINK, vec![v(from), v(to)]),
            Nav::Backward(_) => Formula::atom(LINK, vec![v(to), v(from)]),
        }
    }

    /// `var` must be reachable from `from` along `path`; intermediate hops are existential.
    fn path_formula(
        &mut self,
        from: (&str, &str),
        path: &[Nav],
        to: &str,
        fragment: &GuardExpression,
    ) -> Result<Formula, UnabstractableGuard> {
        let Some((last, init)) = path.split_last() else {
            return Ok(Formula::truth());
        };
        let mut vars = Vec::new();
        let mut links = Vec::new();
        let (mut cur_var, mut cur_ty) = (from.0.to_string(), from.1.to_string());
        for nav in init {
            let t = self.target(&cur_ty, nav, fragment)?;
            let name = self.fresh(&t.abbreviation);
            vars.push(TypedVar::new(&name, &t.planning_type));
            links.push(Self::link_atom(nav, &cur_var, &name));
            cur_var = name;
            cur_ty = t.name.clone();
        }
        links.push(Self::link_atom(last, &cur_var, to));
        let body = Formula::and(links);
        Ok(if vars.is_empty() {
            body
        } else {
            Formula::Exists(vars, Box::new(body))
        })
    }

    fn predicate_attr(&self, ty: &ArtifactTypeDef, attribute: &str) -> bool {
        ty.attribute(attribute).is_some_and(|a| a.predicate)
    }

    /// Compile `g` evaluated on artifact `var` of type `ty`. `own` marks the stage subject,
    /// `top` a position reached through conjunctions only.
    fn compile(
        &mut self,
        g: &GuardExpression,
        var: &str,
        ty: &'a ArtifactTypeDef,
        own: bool,
        top: bool,
        stage: &StageDefinition,
    ) -> Result<Formula, UnabstractableGuard> {
        use GuardExpression as G;
        let action_stage: &'a StageDefinition = self.stage;
        let writes = |a: &str| own && action_stage.writes(a);
        Ok(match g {
            G::True => Formula::truth(),
            G::MilestoneAchieved(m) => Formula::atom(m, vec![v(var)]),
            G::AttributeSet(a) | G::SyntaxValid(a) => {
                if writes(a) {
                    if !self.sub_items.contains(a) {
                        self.sub_items.push(a.clone());
                    }
                    Formula::truth()
                } else if self.predicate_attr(ty, a) {
                    let value = self.fresh("value");
                    Formula::Exists(
                        vec![TypedVar::new(&value, &value_type(a))],
                        Box::new(Formula::atom(a, vec![v(var), v(&value)])),
                    )
                } else {
                    return fail(self, g);
                }
            }
            G::AttributeEquals { attribute, value } => {
                if !self.predicate_attr(ty, attribute) {
                    return fail(self, g);
                }
                if writes(attribute) {
                    let p = match self.attr_params.get(attribute) {
                        Some(p) => p.clone(),
                        None => {
                            let p = self.param(attribute, &value_type(attribute));
                            self.effects.push(Atom::new(attribute, vec![v(var), v(&p)]));
                            self.attr_params.insert(attribute.clone(), p.clone());
                            p
                        }
                    };
                    Formula::Eq(v(&p), Term::Const(value.clone()))
                } else {
                    Formula::atom(attribute, vec![v(var), Term::Const(value.clone())])
                }
            }
            G::LinkedExists { via, condition } => {
                let t = self.target(&ty.name, via, g)?;
                if matches!(via, Nav::Forward(_)) && writes(via.link()) {
                    let p = match self.link_params.get(via.link()) {
                        Some(p) => p.clone(),
                        None => {
                            let p = self.param(&t.abbreviation, &t.planning_type);
                            self.effects.push(Atom::new(LINK, vec![v(var), v(&p)]));
                            self.link_params.insert(via.link().to_string(), p.clone());
                            p
                        }
                    };
                    // Existence and scope belong to the branch that needs the link, so a
                    // disjunct without it leaves the parameter unconstrained.
                    let scope = ty.link(via.link()).map(|l| l.scope.clone()).unwrap_or_default();
                    let reach = self.path_formula((var, &ty.name), &scope, &p, g)?;
                    let inner = self.compile(condition, &p, t, false, false, stage)?;
                    Formula::and([
                        Formula::atom(&exists_predicate(&t.abbreviation), vec![v(&p)]),
                        reach,
                        inner,
                    ])
                } else if top && matches!(via, Nav::Backward(_)) {
                    // The owner along a backward link is unique, so it becomes a parameter.
                    let p = self.param(&t.abbreviation, &t.planning_type);
                    let inner = self.compile(condition, &p, t, false, true, stage)?;
                    Formula::and([Self::link_atom(via, var, &p), inner])
                } else {
                    let q = self.fresh(&t.abbreviation);
                    let inner = self.compile(condition, &q, t, false, false, stage)?;
                    Formula::Exists(
                        vec![TypedVar::new(&q, &t.planning_type)],
                        Box::new(Formula::and([Self::link_atom(via, var, &q), inner])),
                    )
                }
            }
            G::ForAllLinked { via, condition } => {
                let t = self.target(&ty.name, via, g)?;
                let q = self.fresh(&t.abbreviation);
                let inner = self.compile(condition, &q, t, false, false, stage)?;
                Formula::ForAll(
                    vec![TypedVar::new(&q, &t.planning_type)],
                    Box::new(Formula::or([
                        Formula::Not(Box::new(Self::link_atom(via, var, &q))),
                        inner,
                    ])),
                )
            }
            G::Created => return fail(self, g),
            G::And(parts) => {
                let mut out = Vec::new();
                for p in parts {
                    out.push(self.compile(p, var, ty, own, top, stage)?);
                }
                Formula::and(out)
            }
            G::Or(parts) => {
                let mut out = Vec::new();
                for p in parts {
                    out.push(self.compile(p, var, ty, own, false, stage)?);
                }
                Formula::or(out)
            }
            G::Not(inner) => {
                if let G::MilestoneAchieved(m) = inner.as_ref() {
                    if own && stage.milestone(m).is_some() {
                        // Re-entry protection; meaningless without deletes.
                        return Ok(Formula::truth());
                    }
                }
                Formula::Not(Box::new(self.compile(inner, var, ty, own, false, stage)?))
            }
        })
    }
}

fn derive_action(
    def: &WorkflowDefinition,
    ty: &ArtifactTypeDef,
    stage: &StageDefinition,
) -> Result<(PlanningAction, ActionInfo), UnabstractableGuard> {
    let mut c = Compiler {
        def,
        ty,
        stage,
        subject: ty.abbreviation.clone(),
        params: Vec::new(),
        effects: Vec::new(),
        link_params: BTreeMap::new(),
        attr_params: BTreeMap::new(),
        sub_items: Vec::new(),
        used_names: Vec::new(),
    };
    let subject = c.subject.clone();
    let subject = c.param(&subject, &ty.planning_type);
    let mut pre = vec![Formula::atom(&exists_predicate(&ty.abbreviation), vec![v(&subject)])];

    let path = ty.stage_path(&stage.name);
    for name in &path {
        let s = ty.stage(name).expect("path stages exist");
        pre.push(c.compile(&s.guard, &subject, ty, true, true, s)?);
    }

    // Outcome stages are planned towards their first (positive) milestone only.
    let targets: Vec<_> = if stage.is_outcome_stage() {
        stage.milestones.iter().take(1).collect()
    } else {
        stage.milestones.iter().collect()
    };
    for m in &targets {
        if !matches!(m.achieve, GuardExpression::Created) {
            pre.push(c.compile(&m.achieve, &subject, ty, true, true, stage)?);
        }
    }
    let mut effects: Vec<Atom> = targets.iter().map(|m| Atom::new(&m.name, vec![v(&subject)])).collect();
    effects.append(&mut c.effects);

    let mut creates = None;
    if let Some(spec) = &stage.creates {
        let Some(t) = def.artifact_type(&spec.artifact_type) else {
            return fail(&c, &GuardExpression::Created);
        };
        let n = c.param(&t.abbreviation, &t.planning_type);
        let ex = exists_predicate(&t.abbreviation);
        pre.push(Formula::Not(Box::new(Formula::atom(&ex, vec![v(&n)]))));
        effects.push(Atom::new(&ex, vec![v(&n)]));
        effects.push(Atom::new(LINK, vec![v(&subject), v(&n)]));
        creates = Some(t.name.clone());
    }

    // Attributes the stage writes that its milestones test but the facts cannot see.
    let mut sub_items = c.sub_items;
    for a in &stage.writes {
        if ty.attribute(a).is_some_and(|d| d.predicate) && !sub_items.contains(a) {
            sub_items.push(a.clone());
        }
    }

    Ok((
        PlanningAction {
            name: stage.action.clone(),
            params: c.params,
            precondition: Formula::and(pre),
            effect: effects,
        },
        ActionInfo {
            artifact_type: ty.name.clone(),
            stage: stage.name.clone(),
            creates,
            sub_items,
            milestone: targets.first().map(|m| m.name.clone()).unwrap_or_default(),
        },
    ))
}

fn predicates(def: &WorkflowDefinition) -> Vec<PredicateDecl> {
    let mut out = Vec::new();
    let unary = |name: &str, ty: &str| PredicateDecl {
        name: name.to_string(),
        params: vec![TypedVar::new("x", ty)],
    };
    for t in &def.artifact_types {
        out.push(unary(&exists_predicate(&t.abbreviation), &t.planning_type));
    }
    for t in &def.artifact_types {
        for s in &t.stages {
            for m in &s.milestones {
                out.push(unary(&m.name, &t.planning_type));
            }
        }
    }
    out.push(PredicateDecl {
        name: LINK.into(),
        params: vec![TypedVar::new("a", "object"), TypedVar::new("b", "object")],
    });
    for (t, a) in predicate_attributes(def) {
        out.push(PredicateDecl {
            name: a.clone(),
            params: vec![
                TypedVar::new("x", &t.planning_type),
                TypedVar::new("v", &value_type(&a)),
            ],
        });
    }
    out
}

fn predicate_attributes(def: &WorkflowDefinition) -> Vec<(&ArtifactTypeDef, String)> {
    def.artifact_types
        .iter()
        .flat_map(|t| {
            t.attributes
                .iter()
                .filter(|a| a.predicate)
                .map(move |a| (t, a.name.clone()))
        })
        .collect()
}

/// Constants of every predicate attribute's value type, in declaration order.
pub fn value_constants(def: &WorkflowDefinition) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for t in &def.artifact_types {
        for a in t.attributes.iter().filter(|a| a.predicate) {
            if let AttrKind::Enum(values) = &a.kind {
                for val in values {
                    out.push((val.clone(), value_type(&a.name)));
                }
            }
        }
    }
    out
}

/// Planning domain of a workflow: one action per stage whose conditions fit the fact
/// vocabulary, in definition order.
pub fn derive_actions(def: &WorkflowDefinition) -> Abstraction {
    let mut actions = Vec::new();
    let mut info = Vec::new();
    let mut omitted = Vec::new();
    for (ty, stage) in def.stages() {
        match derive_action(def, ty, stage) {
            Ok((a, i)) => {
                actions.push(a);
                info.push(i);
            }
            Err(e) => omitted.push(e),
        }
    }
    let mut types: Vec<String> = def.artifact_types.iter().map(|t| t.planning_type.clone()).collect();
    for (_, a) in predicate_attributes(def) {
        let vt = value_type(&a);
        if !types.contains(&vt) {
            types.push(vt);
        }
    }
    Abstraction {
        domain: Domain {
            name: def.name.clone(),
            requirements: REQUIREMENTS.iter().map(|s| s.to_string()).collect(),
            types,
            constants: value_constants(def),
            predicates: predicates(def),
            actions,
        },
        info,
        omitted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::build_fea_workflow;

    fn abstraction() -> Abstraction {
        derive_actions(&build_fea_workflow())
    }

    #[test]
    fn validate_smo_has_the_expected_shape() {
        let abs = abstraction();
        let (a, info) = abs.action("validate-smo").unwrap();
        assert_eq!(info.milestone, "validated-smo");
        assert_eq!(
            a.params,
            vec![TypedVar::new("smo", "SModel"), TypedVar::new("cmo", "CModel")]
        );
        assert_eq!(a.effect, vec![Atom::new("validated-smo", vec![v("smo")])]);
        let text = a.to_pddl();
        assert!(text.starts_with("(:action validate-smo"), "{text}");
        for needle in [
            "(validated-cmo ?cmo)",
            "(link ?cmo ?smo)",
            "(assembled-smo ?smo)",
            "(exists (?exp - Exp)",
            "(link ?smo ?exp)",
            "(role ?exp val)",
        ] {
            assert!(text.contains(needle), "{needle} missing from\n{text}");
        }
    }

    #[test]
    fn first_stage_needs_only_its_subject() {
        let abs = abstraction();
        let (a, info) = abs.action("specify-objective").unwrap();
        assert_eq!(a.precondition, Formula::atom("exists-cmo", vec![v("cmo")]));
        assert_eq!(a.effect, vec![Atom::new("objective-specified", vec![v("cmo")])]);
        assert_eq!(info.sub_items, ["objective"]);
    }

    #[test]
    fn payload_guard_is_reported_not_planned() {
        let abs = abstraction();
        assert!(abs.action("reproduce-sd").is_none());
        assert_eq!(abs.omitted.len(), 1);
        assert_eq!(abs.omitted[0].stage, "Reproducing simulation data");
    }

    #[test]
    fn written_links_and_roles_become_parameters() {
        let abs = abstraction();
        let (a, info) = abs.action("assemble-exp").unwrap();
        let names: Vec<_> = a.params.iter().map(|p| p.ty.as_str()).collect();
        assert_eq!(names, ["Exp", "Role", "Req"]);
        assert!(a.effect.contains(&Atom::new("role", vec![v("exp"), v("role")])));
        assert!(a.effect.contains(&Atom::new(LINK, vec![v("exp"), v("req")])));
        assert_eq!(info.sub_items, ["approach", "role", "specification"]);

        let (choose, _) = abs.action("choose-req").unwrap();
        let text = choose.to_pddl();
        assert!(
            text.contains("(link ?cmo ?smo)") && text.contains("(link ?cmo ?req)"),
            "{text}"
        );
    }

    #[test]
    fn creating_stages_add_the_new_object() {
        let abs = abstraction();
        let (a, info) = abs.action("create-req").unwrap();
        assert_eq!(info.creates.as_deref(), Some("Requirement"));
        assert_eq!(a.params.last().unwrap(), &TypedVar::new("req", "Req"));
        assert!(a.effect.contains(&Atom::new("exists-req", vec![v("req")])));
        // Nested under assembling, which requires the objective.
        assert!(a.to_pddl().contains("(objective-specified ?cmo)"));
    }

    #[test]
    fn universal_guards_compile_to_forall() {
        let abs = abstraction();
        let (a, _) = abs.action("validate-cmo").unwrap();
        assert!(a.to_pddl().contains("(forall (?req - Req)"));
    }

    #[test]
    fn domain_round_trips_through_the_reader() {
        let d = abstraction().domain;
        assert_eq!(super::super::pddl::parse_domain(&d.to_pddl()).unwrap(), d);
    }
}
