//! Stage executions as engine event sequences, and a breadth-first search over the states
//! they reach. Nothing here consults the planner.

use std::collections::{HashSet, VecDeque};

use feaflow_core::gsm::{
    ArtifactTypeDef, AttrKind, AttrValue, BlobRef, Engine, EventKind, GuardExpression, Nav, StageDefinition,
    StudyState, WorkflowDefinition,
};

/// One stage execution with the free choices made explicit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Move {
    pub artifact: String,
    pub stage: String,
    /// Value for a written predicate attribute (the experiment role).
    pub choice: Option<String>,
    /// Target for the written link the milestone tests.
    pub target: Option<String>,
}

/// How new artifacts are named.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Naming {
    /// `new-<abbr>`: at most one new artifact per type.
    Hypothetical,
    /// `<abbr>-<n>`, first unused.
    Fresh,
}

pub struct Executor<'a> {
    pub engine: Engine<'a>,
    pub def: &'a WorkflowDefinition,
    pub naming: Naming,
    /// Largest number of artifacts a state may hold.
    pub cap: usize,
}

fn placeholder_blob() -> BlobRef {
    BlobRef {
        digest: "0".repeat(64),
        name: "placeholder".into(),
        media_type: "text/plain".into(),
        size: 0,
    }
}

pub fn filler(kind: &AttrKind) -> AttrValue {
    match kind {
        AttrKind::Enum(values) => AttrValue::text(values[0].clone()),
        AttrKind::Number => AttrValue::Number(1.0),
        AttrKind::Quantity => AttrValue::quantity(1.0, "m"),
        AttrKind::Blob => AttrValue::Blob(placeholder_blob()),
        AttrKind::Text | AttrKind::TextOrBlob | AttrKind::Any => AttrValue::text("x"),
    }
}

/// Attributes and forward links tested on the subject itself (outside any navigation).
fn subject_refs(g: &GuardExpression, attrs: &mut Vec<String>, links: &mut Vec<String>) {
    match g {
        GuardExpression::AttributeSet(a) | GuardExpression::SyntaxValid(a) => {
            if !attrs.contains(a) {
                attrs.push(a.clone());
            }
        }
        GuardExpression::AttributeEquals { attribute, .. } => {
            if !attrs.contains(attribute) {
                attrs.push(attribute.clone());
            }
        }
        GuardExpression::LinkedExists {
            via: Nav::Forward(l), ..
        } => {
            if !links.contains(l) {
                links.push(l.clone());
            }
        }
        GuardExpression::And(p) | GuardExpression::Or(p) => p.iter().for_each(|x| subject_refs(x, attrs, links)),
        _ => {}
    }
}

fn positive(stage: &StageDefinition) -> &[feaflow_core::gsm::MilestoneDefinition] {
    if stage.is_outcome_stage() {
        &stage.milestones[..1]
    } else {
        &stage.milestones
    }
}

impl<'a> Executor<'a> {
    fn apply(&self, state: &StudyState, kind: EventKind) -> Option<StudyState> {
        let ev = kind.at(state.next_seq);
        self.engine.apply(state, &ev).ok().map(|(s, _)| s)
    }

    fn new_id(&self, state: &StudyState, ty: &ArtifactTypeDef) -> Option<String> {
        match self.naming {
            Naming::Hypothetical => {
                let id = format!("new-{}", ty.abbreviation);
                state.artifact(&id).is_none().then_some(id)
            }
            Naming::Fresh => (1..)
                .map(|n| format!("{}-{n}", ty.abbreviation))
                .find(|id| state.artifact(id).is_none()),
        }
    }

    /// Attributes to fill, dependencies first, and the link the stage must establish.
    fn requirements(&self, ty: &ArtifactTypeDef, stage: &StageDefinition) -> (Vec<String>, Vec<String>) {
        let mut attrs = Vec::new();
        let mut links = Vec::new();
        for m in positive(stage) {
            subject_refs(&m.achieve, &mut attrs, &mut links);
        }
        attrs.retain(|a| stage.writes(a));
        links.retain(|l| stage.writes(l));
        let mut ordered: Vec<String> = Vec::new();
        while ordered.len() < attrs.len() {
            let before = ordered.len();
            for a in &attrs {
                let ready = ty
                    .attribute(a)
                    .is_some_and(|d| d.requires.iter().all(|r| ordered.contains(r) || !attrs.contains(r)));
                if ready && !ordered.contains(a) {
                    ordered.push(a.clone());
                }
            }
            if ordered.len() == before {
                break;
            }
        }
        (ordered, links)
    }

    /// Every move worth trying from `state`, in artifact then stage order.
    pub fn moves(&self, state: &StudyState) -> Vec<Move> {
        let mut out = Vec::new();
        for a in &state.artifacts {
            if a.pending {
                continue;
            }
            let Some(ty) = self.def.artifact_type(&a.artifact_type) else {
                continue;
            };
            for stage in &ty.stages {
                let (attrs, links) = self.requirements(ty, stage);
                let choices: Vec<Option<String>> = attrs
                    .iter()
                    .find_map(|name| {
                        let d = ty.attribute(name)?;
                        match (&d.kind, d.predicate) {
                            (AttrKind::Enum(values), true) => Some(values.iter().cloned().map(Some).collect()),
                            _ => None,
                        }
                    })
                    .unwrap_or_else(|| vec![None]);
                let mut targets: Vec<Option<String>> = vec![None];
                for l in &links {
                    if let Some(t) = ty.link(l) {
                        targets.extend(
                            state
                                .of_type(&t.target)
                                .filter(|x| !x.pending)
                                .map(|x| Some(x.id.clone())),
                        );
                    }
                }
                for c in &choices {
                    for t in &targets {
                        out.push(Move {
                            artifact: a.id.clone(),
                            stage: stage.name.clone(),
                            choice: c.clone(),
                            target: t.clone(),
                        });
                    }
                }
            }
        }
        out
    }

    /// Execute `mv` as engine events; `None` when the engine refuses any of them.
    ///
    /// Missing ancestor stages are entered first. An ancestor whose milestone held before
    /// is left again afterwards; otherwise it stays open until its own move closes it.
    pub fn run(&self, state: &StudyState, mv: &Move) -> Option<StudyState> {
        let inst = state.artifact(&mv.artifact)?;
        if inst.pending {
            return None;
        }
        let ty = self.def.artifact_type(&inst.artifact_type)?;
        let stage = ty.stage(&mv.stage)?;
        let path = ty.stage_path(&stage.name);
        let open: Vec<&str> = inst.open.iter().map(|o| o.stage.as_str()).collect();
        let leave_kind = |st: &StageDefinition| {
            let outcome = st
                .is_outcome_stage()
                .then(|| st.milestones[0].outcome.clone())
                .flatten();
            EventKind::leave(&mv.artifact, &st.name, outcome.as_deref())
        };

        if open.len() == path.len() && open.iter().zip(&path).all(|(a, b)| a == b) {
            // Closing a stage an earlier move left open.
            if mv.choice.is_some() || mv.target.is_some() || stage.creates.is_some() {
                return None;
            }
            return self.apply(state, leave_kind(stage));
        }
        let ancestors = &path[..path.len() - 1];
        if open.len() > ancestors.len() || open.iter().zip(ancestors).any(|(a, b)| a != b) {
            return None;
        }

        let mut s = state.clone();
        let mut restore = Vec::new();
        for name in &ancestors[open.len()..] {
            let anc = ty.stage(name)?;
            let held = anc.milestones.iter().any(|m| inst.achieved(&m.name));
            s = self.apply(&s, EventKind::enter(&mv.artifact, name))?;
            restore.push((anc, held));
        }
        s = self.apply(&s, EventKind::enter(&mv.artifact, &stage.name))?;

        let (attrs, links) = self.requirements(ty, stage);
        for name in &attrs {
            let d = ty.attribute(name)?;
            let value = match (&mv.choice, d.predicate) {
                (Some(c), true) => AttrValue::text(c.clone()),
                _ => filler(&d.kind),
            };
            s = self.apply(&s, EventKind::set(&mv.artifact, name, value))?;
        }
        if mv.choice.is_some() && !attrs.iter().any(|a| ty.attribute(a).is_some_and(|d| d.predicate)) {
            return None;
        }
        if let Some(t) = &mv.target {
            let l = links.first()?;
            s = self.apply(&s, EventKind::link(&mv.artifact, l, t))?;
        }
        if let Some(spec) = &stage.creates {
            let cty = self.def.artifact_type(&spec.artifact_type)?;
            if s.artifacts.len() >= self.cap {
                return None;
            }
            let id = self.new_id(&s, cty)?;
            s = self.apply(&s, EventKind::create(&cty.name, &id, Some(&mv.artifact)))?;
        }
        s = self.apply(&s, leave_kind(stage))?;
        for (anc, held) in restore.into_iter().rev() {
            if !held {
                break;
            }
            s = self.apply(&s, EventKind::leave(&mv.artifact, &anc.name, None))?;
        }
        Some(s)
    }

    /// Perform every move, each at the earliest point the engine accepts it. Plans are
    /// partial orders in disguise: a nested move may leave its container open, which blocks
    /// sibling stages until a later move closes it. When no remaining move runs, an open
    /// container that can be left is closed.
    pub fn realize(&self, state: &StudyState, moves: &[Move]) -> Result<StudyState, Move> {
        let mut s = state.clone();
        let mut rest: Vec<Move> = moves.to_vec();
        'outer: while !rest.is_empty() {
            for i in 0..rest.len() {
                if let Some(next) = self.run(&s, &rest[i]) {
                    s = next;
                    rest.remove(i);
                    continue 'outer;
                }
            }
            for a in &s.artifacts {
                if let Some(open) = a.open.last() {
                    if let Some(next) = self.apply(&s, EventKind::leave(&a.id, &open.stage, None)) {
                        s = next;
                        continue 'outer;
                    }
                }
            }
            return Err(rest.remove(0));
        }
        Ok(s)
    }

    /// Shortest number of moves until `goal` holds, exploring at most `limit` states.
    pub fn shortest(&self, init: &StudyState, goal: &dyn Fn(&StudyState) -> bool, limit: usize) -> Search {
        if goal(init) {
            return Search::Found(Vec::new());
        }
        let mut nodes: Vec<(StudyState, usize, Option<Move>)> = vec![(init.clone(), usize::MAX, None)];
        let mut seen = HashSet::from([key(init)]);
        let mut queue = VecDeque::from([0usize]);
        while let Some(n) = queue.pop_front() {
            let state = nodes[n].0.clone();
            for mv in self.moves(&state) {
                let Some(next) = self.run(&state, &mv) else { continue };
                if !seen.insert(key(&next)) {
                    continue;
                }
                let done = goal(&next);
                nodes.push((next, n, Some(mv)));
                let id = nodes.len() - 1;
                if done {
                    let mut path = Vec::new();
                    let mut at = id;
                    while let Some(m) = &nodes[at].2 {
                        path.push(m.clone());
                        at = nodes[at].1;
                    }
                    path.reverse();
                    return Search::Found(path);
                }
                if nodes.len() >= limit {
                    return Search::Limit;
                }
                queue.push_back(id);
            }
        }
        Search::Exhausted
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Search {
    Found(Vec<Move>),
    /// Every reachable state was explored without meeting the goal.
    Exhausted,
    Limit,
}

/// State identity for the search: everything guards can observe, without sequence numbers.
pub fn key(state: &StudyState) -> String {
    let parts: Vec<_> = state
        .artifacts
        .iter()
        .map(|a| {
            let achieved: Vec<&String> = a.milestones.keys().filter(|m| a.achieved(m)).collect();
            let open: Vec<&String> = a.open.iter().map(|o| &o.stage).collect();
            serde_json::json!([a.id, a.pending, a.attributes, a.links, achieved, open])
        })
        .collect();
    serde_json::to_string(&parts).expect("state key serializes")
}

/// Whether `milestone` holds on `artifact`, or on any artifact when none is given.
pub fn milestone_holds(state: &StudyState, milestone: &str, artifact: Option<&str>) -> bool {
    state
        .artifacts
        .iter()
        .filter(|a| artifact.is_none_or(|id| a.id == id))
        .any(|a| a.achieved(milestone))
}
