use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::definition::{ArtifactTypeDef, GuardExpression, Nav, SentryTrigger, StageDefinition, WorkflowDefinition};
use super::error::EngineError;
use super::event::{CompletedExecution, EffectLog, EventKind, GuardChange, MilestoneRef, StudyEvent};
use super::guard::{GuardContext, SpecChecker};
use super::state::{ArtifactInstance, MilestoneStatus, OpenStage, StudyState};
use super::value::AttrValue;

/// Something that happened during one event application and may trip sentries.
#[derive(Debug, Clone, PartialEq)]
enum Occurrence {
    AttributeChanged { artifact: String, attribute: String },
    LinkAdded { artifact: String, link: String },
    StageEntered { artifact: String, stage: String },
    MilestoneAchieved { artifact: String, milestone: String },
    MilestoneInvalidated { artifact: String, milestone: String },
}

impl Occurrence {
    fn artifact(&self) -> &str {
        match self {
            Occurrence::AttributeChanged { artifact, .. }
            | Occurrence::LinkAdded { artifact, .. }
            | Occurrence::StageEntered { artifact, .. }
            | Occurrence::MilestoneAchieved { artifact, .. }
            | Occurrence::MilestoneInvalidated { artifact, .. } => artifact,
        }
    }

    fn matches(&self, trigger: &SentryTrigger) -> bool {
        fn any_or(want: &Option<String>, got: &str) -> bool {
            want.as_deref().is_none_or(|w| w == got)
        }
        match (trigger, self) {
            (SentryTrigger::AttributeChanged { attribute }, Occurrence::AttributeChanged { attribute: a, .. }) => {
                any_or(attribute, a)
            }
            (SentryTrigger::LinkAdded { link }, Occurrence::LinkAdded { link: l, .. }) => any_or(link, l),
            (SentryTrigger::StageEntered { stage }, Occurrence::StageEntered { stage: s, .. }) => stage == s,
            (SentryTrigger::MilestoneAchieved { milestone }, Occurrence::MilestoneAchieved { milestone: m, .. }) => {
                milestone == m
            }
            (
                SentryTrigger::MilestoneInvalidated { milestone },
                Occurrence::MilestoneInvalidated { milestone: m, .. },
            ) => milestone == m,
            _ => false,
        }
    }
}

/// Stage that can be entered right now.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveStage {
    pub artifact: String,
    pub artifact_type: String,
    pub stage: String,
    /// Stage names from the outermost ancestor down to this stage.
    pub path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum StageStatus {
    Enterable,
    Open,
    /// Not reachable from the current open stage path.
    Blocked {
        reason: String,
    },
    /// Guard evaluates to false.
    Inactive {
        unmet: GuardExpression,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageView {
    pub artifact: String,
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(flatten)]
    pub status: StageStatus,
    pub milestones: Vec<(String, MilestoneStatus)>,
}

/// Pure state transformer over a workflow definition.
pub struct Engine<'a> {
    def: &'a WorkflowDefinition,
    checker: &'a dyn SpecChecker,
}

impl<'a> Engine<'a> {
    pub fn new(def: &'a WorkflowDefinition, checker: &'a dyn SpecChecker) -> Self {
        Engine { def, checker }
    }

    pub fn definition(&self) -> &'a WorkflowDefinition {
        self.def
    }

    pub fn checker(&self) -> &'a dyn SpecChecker {
        self.checker
    }

    pub fn empty_state(&self) -> StudyState {
        StudyState::empty(&self.def.name, &self.def.version)
    }

    pub fn context<'s>(&'s self, state: &'s StudyState) -> GuardContext<'s> {
        GuardContext::new(self.def, state, self.checker)
    }

    /// Fold a sequence of events over the empty state.
    pub fn replay<'e>(
        &self,
        events: impl IntoIterator<Item = &'e StudyEvent>,
    ) -> Result<StudyState, (u64, EngineError)> {
        let mut state = self.empty_state();
        for ev in events {
            state = self.apply(&state, ev).map_err(|e| (ev.seq, e))?.0;
        }
        Ok(state)
    }

    pub fn apply(&self, state: &StudyState, event: &StudyEvent) -> Result<(StudyState, EffectLog), EngineError> {
        if event.seq != state.next_seq {
            return Err(EngineError::SequenceMismatch {
                expected: state.next_seq,
                got: event.seq,
            });
        }
        let seq = event.seq;
        let before = self.guard_table(state);
        let mut next = state.clone();
        let mut effects = EffectLog {
            seq,
            ..EffectLog::default()
        };
        let mut queue = VecDeque::new();

        match &event.kind {
            EventKind::CreateArtifact {
                artifact_type,
                id,
                owner,
            } => self.create(&mut next, seq, artifact_type, id, owner.as_deref(), &mut queue)?,
            EventKind::EnterStage { artifact, stage } => {
                self.enter(&mut next, seq, artifact, stage, &mut effects, &mut queue)?
            }
            EventKind::SetAttribute { artifact, name, value } => {
                self.set_attribute(&mut next, artifact, name, value, &mut queue)?
            }
            EventKind::LinkArtifacts { from, link, to } => self.link(&mut next, from, link, to, &mut queue)?,
            EventKind::LeaveStage {
                artifact,
                stage,
                outcome,
            } => self.leave(
                &mut next,
                seq,
                artifact,
                stage,
                outcome.as_deref(),
                &mut effects,
                &mut queue,
            )?,
            EventKind::RecordResult { artifact, key, value } => {
                self.record_result(&mut next, artifact, key, value, &mut queue)?
            }
        }
        if let EventKind::CreateArtifact { id, .. } = &event.kind {
            effects.created.push(id.clone());
        }

        self.propagate(&mut next, seq, &mut queue, &mut effects);
        next.next_seq = seq + 1;

        let after = self.guard_table(&next);
        effects.guard_changes = diff_guards(&before, &after);
        Ok((next, effects))
    }

    fn type_of(&self, artifact: &ArtifactInstance) -> Result<&'a ArtifactTypeDef, EngineError> {
        self.def
            .artifact_type(&artifact.artifact_type)
            .ok_or_else(|| EngineError::UnknownArtifactType(artifact.artifact_type.clone()))
    }

    fn stage_of(&self, artifact: &ArtifactInstance, stage: &str) -> Result<&'a StageDefinition, EngineError> {
        self.type_of(artifact)?
            .stage(stage)
            .ok_or_else(|| EngineError::UnknownStage {
                artifact_type: artifact.artifact_type.clone(),
                stage: stage.to_string(),
            })
    }

    fn create(
        &self,
        state: &mut StudyState,
        seq: u64,
        artifact_type: &str,
        id: &str,
        owner: Option<&str>,
        queue: &mut VecDeque<Occurrence>,
    ) -> Result<(), EngineError> {
        if state.artifact(id).is_some() {
            return Err(EngineError::DuplicateArtifact(id.to_string()));
        }
        if self.def.artifact_type(artifact_type).is_none() {
            return Err(EngineError::UnknownArtifactType(artifact_type.to_string()));
        }
        let creator = self.def.creating_stage_for(artifact_type);
        let Some(owner) = owner else {
            if let Some((_, stage)) = creator {
                return Err(EngineError::CreationNotAllowed {
                    artifact_type: artifact_type.to_string(),
                    reason: format!("only created by {}", stage.name),
                });
            }
            state.artifacts.push(ArtifactInstance::new(id, artifact_type, seq));
            return Ok(());
        };
        let owner_inst = state
            .artifact(owner)
            .ok_or_else(|| EngineError::UnknownArtifact(owner.to_string()))?;
        let open = owner_inst
            .deepest_open()
            .ok_or_else(|| EngineError::CreationNotAllowed {
                artifact_type: artifact_type.to_string(),
                reason: format!("{owner} has no open stage"),
            })?;
        let stage = self.stage_of(owner_inst, &open.stage)?;
        let spec = stage
            .creates
            .as_ref()
            .filter(|c| c.artifact_type == artifact_type)
            .ok_or_else(|| EngineError::CreationNotAllowed {
                artifact_type: artifact_type.to_string(),
                reason: format!("open stage {} does not create it", stage.name),
            })?;
        let mut inst = ArtifactInstance::new(id, artifact_type, seq);
        inst.owner = Some(owner.to_string());
        inst.pending = true;
        state.artifacts.push(inst);
        self.check_link(state, owner, &spec.link, id)?;
        let owner_inst = state.artifact_mut(owner).expect("owner exists");
        owner_inst
            .links
            .entry(spec.link.clone())
            .or_default()
            .push(id.to_string());
        owner_inst
            .open
            .last_mut()
            .expect("open stage")
            .created
            .push(id.to_string());
        queue.push_back(Occurrence::LinkAdded {
            artifact: owner.to_string(),
            link: spec.link.clone(),
        });
        Ok(())
    }

    fn enter(
        &self,
        state: &mut StudyState,
        seq: u64,
        artifact: &str,
        stage_name: &str,
        effects: &mut EffectLog,
        queue: &mut VecDeque<Occurrence>,
    ) -> Result<(), EngineError> {
        let inst = state
            .artifact(artifact)
            .ok_or_else(|| EngineError::UnknownArtifact(artifact.to_string()))?;
        if inst.pending {
            return Err(EngineError::ArtifactPending(artifact.to_string()));
        }
        let stage = self.stage_of(inst, stage_name)?;
        if let Some(reason) = placement_block(inst, stage) {
            return Err(EngineError::StageBlocked {
                artifact: artifact.to_string(),
                stage: stage_name.to_string(),
                reason,
            });
        }
        let ctx = self.context(state);
        if let Some(unmet) = ctx.unmet(&stage.guard, inst) {
            return Err(EngineError::GuardNotSatisfied {
                artifact: artifact.to_string(),
                stage: stage_name.to_string(),
                unmet,
            });
        }
        let inst = state.artifact_mut(artifact).expect("checked");
        inst.open.push(OpenStage {
            stage: stage_name.to_string(),
            entered_at: seq,
            created: Vec::new(),
            results: Default::default(),
        });
        queue.push_back(Occurrence::StageEntered {
            artifact: artifact.to_string(),
            stage: stage_name.to_string(),
        });
        // Re-entry reopens the stage's own milestones.
        for m in &stage.milestones {
            retract(inst, &m.name, seq, effects, queue);
        }
        Ok(())
    }

    fn set_attribute(
        &self,
        state: &mut StudyState,
        artifact: &str,
        name: &str,
        value: &AttrValue,
        queue: &mut VecDeque<Occurrence>,
    ) -> Result<(), EngineError> {
        let inst = state
            .artifact(artifact)
            .ok_or_else(|| EngineError::UnknownArtifact(artifact.to_string()))?;
        let ty = self.type_of(inst)?;
        let attr = ty.attribute(name).ok_or_else(|| EngineError::UnknownAttribute {
            artifact_type: ty.name.clone(),
            attribute: name.to_string(),
        })?;
        if !self.open_path_writes(inst, name) {
            return Err(EngineError::NotWritable {
                artifact: artifact.to_string(),
                name: name.to_string(),
            });
        }
        if !attr.kind.accepts(value) {
            return Err(EngineError::TypeMismatch {
                attribute: name.to_string(),
                expected: format!("{:?}", attr.kind).to_lowercase(),
                got: value.kind_name().to_string(),
            });
        }
        if let Some(missing) = attr.requires.iter().find(|r| !inst.attribute_set(r)) {
            return Err(EngineError::AttributeOrder {
                artifact: artifact.to_string(),
                attribute: name.to_string(),
                requires: missing.clone(),
            });
        }
        for link in &ty.links {
            if let Some(cond) = &link.forbidden_when {
                if cond.attribute == name
                    && value.as_text() == Some(cond.value.as_str())
                    && !inst.linked(&link.name).is_empty()
                {
                    return Err(EngineError::LinkRuleViolation {
                        from: artifact.to_string(),
                        link: link.name.clone(),
                        to: inst.linked(&link.name).join(","),
                        rule: format!(
                            "{} may not be linked when {} = {}",
                            link.name, cond.attribute, cond.value
                        ),
                    });
                }
            }
        }
        let changed = inst.attributes.get(name) != Some(value);
        let inst = state.artifact_mut(artifact).expect("checked");
        inst.attributes.insert(name.to_string(), value.clone());
        if changed {
            queue.push_back(Occurrence::AttributeChanged {
                artifact: artifact.to_string(),
                attribute: name.to_string(),
            });
        }
        Ok(())
    }

    fn open_path_writes(&self, inst: &ArtifactInstance, name: &str) -> bool {
        let Some(ty) = self.def.artifact_type(&inst.artifact_type) else {
            return false;
        };
        inst.open
            .iter()
            .filter_map(|o| ty.stage(&o.stage))
            .any(|s| s.writes(name))
    }

    fn link(
        &self,
        state: &mut StudyState,
        from: &str,
        link: &str,
        to: &str,
        queue: &mut VecDeque<Occurrence>,
    ) -> Result<(), EngineError> {
        let inst = state
            .artifact(from)
            .ok_or_else(|| EngineError::UnknownArtifact(from.to_string()))?;
        if state.artifact(to).is_some_and(|t| t.pending) {
            return Err(EngineError::ArtifactPending(to.to_string()));
        }
        if !self.open_path_writes(inst, link) {
            return Err(EngineError::NotWritable {
                artifact: from.to_string(),
                name: link.to_string(),
            });
        }
        self.check_link(state, from, link, to)?;
        state
            .artifact_mut(from)
            .expect("checked")
            .links
            .entry(link.to_string())
            .or_default()
            .push(to.to_string());
        queue.push_back(Occurrence::LinkAdded {
            artifact: from.to_string(),
            link: link.to_string(),
        });
        Ok(())
    }

    /// Enforce link topology, cardinality, role and scope rules.
    pub fn check_link(&self, state: &StudyState, from: &str, link: &str, to: &str) -> Result<(), EngineError> {
        let violation = |rule: String| EngineError::LinkRuleViolation {
            from: from.to_string(),
            link: link.to_string(),
            to: to.to_string(),
            rule,
        };
        let src = state
            .artifact(from)
            .ok_or_else(|| EngineError::UnknownArtifact(from.to_string()))?;
        let dst = state
            .artifact(to)
            .ok_or_else(|| EngineError::UnknownArtifact(to.to_string()))?;
        let ty = self.type_of(src)?;
        let def = ty
            .link(link)
            .ok_or_else(|| violation(format!("{} declares no link {link}", ty.name)))?;
        if dst.artifact_type != def.target {
            return Err(violation(format!(
                "{link} must target {}, not {}",
                def.target, dst.artifact_type
            )));
        }
        let existing = src.linked(link);
        if existing.iter().any(|t| t == to) {
            return Err(violation(format!("{to} is already linked")));
        }
        if let Some(max) = def.max {
            if existing.len() >= max {
                return Err(violation(format!("at most {max} {link} link(s) allowed")));
            }
        }
        if let Some(cond) = &def.forbidden_when {
            if src.text(&cond.attribute) == Some(cond.value.as_str()) {
                return Err(violation(format!(
                    "{link} is forbidden when {} = {}",
                    cond.attribute, cond.value
                )));
            }
        }
        if !def.scope.is_empty() && !state.reachable(src, &def.scope, to) {
            let path: Vec<String> = def.scope.iter().map(Nav::to_string).collect();
            return Err(violation(format!("{to} is not reachable via {}", path.join("/"))));
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn leave(
        &self,
        state: &mut StudyState,
        seq: u64,
        artifact: &str,
        stage_name: &str,
        outcome: Option<&str>,
        effects: &mut EffectLog,
        queue: &mut VecDeque<Occurrence>,
    ) -> Result<(), EngineError> {
        let inst = state
            .artifact(artifact)
            .ok_or_else(|| EngineError::UnknownArtifact(artifact.to_string()))?;
        let stage = self.stage_of(inst, stage_name)?;
        let Some(pos) = inst.open.iter().position(|o| o.stage == stage_name) else {
            return Err(EngineError::StageNotOpen {
                artifact: artifact.to_string(),
                stage: stage_name.to_string(),
            });
        };
        if pos + 1 != inst.open.len() {
            return Err(EngineError::ChildStageOpen {
                artifact: artifact.to_string(),
                stage: stage_name.to_string(),
                child: inst.open[pos + 1].stage.clone(),
            });
        }
        let open = &inst.open[pos];
        let mut ctx = self.context(state);
        ctx.created = !open.created.is_empty();

        let mut achieved: Vec<String> = Vec::new();
        let mut label = None;
        if let Some(spec) = &stage.outcome {
            let recorded = spec
                .result_key
                .as_ref()
                .filter(|k| open.results.contains(*k))
                .and_then(|k| inst.results.get(k))
                .map(|v| v.to_string());
            let chosen = match (outcome, recorded) {
                (Some(given), Some(rec)) if given != rec => {
                    return Err(EngineError::OutcomeMismatch {
                        stage: stage_name.to_string(),
                        given: given.to_string(),
                        recorded: rec,
                    })
                }
                (Some(given), _) => given.to_string(),
                (None, Some(rec)) => rec,
                (None, None) => {
                    return Err(EngineError::MissingOutcome {
                        stage: stage_name.to_string(),
                    })
                }
            };
            let m = stage
                .milestones
                .iter()
                .find(|m| m.outcome.as_deref() == Some(chosen.as_str()))
                .ok_or_else(|| EngineError::UnknownOutcome {
                    stage: stage_name.to_string(),
                    outcome: chosen.clone(),
                })?;
            if let Some(unmet) = ctx.unmet(&m.achieve, inst) {
                return Err(EngineError::AchieveConditionUnmet {
                    artifact: artifact.to_string(),
                    stage: stage_name.to_string(),
                    details: ctx.syntax_errors(&m.achieve, inst),
                    unmet,
                });
            }
            achieved.push(m.name.clone());
            label = Some(chosen);
        } else {
            if outcome.is_some() {
                return Err(EngineError::OutcomeNotAllowed {
                    stage: stage_name.to_string(),
                });
            }
            achieved.extend(
                stage
                    .milestones
                    .iter()
                    .filter(|m| ctx.eval(&m.achieve, inst))
                    .map(|m| m.name.clone()),
            );
            if achieved.is_empty() {
                let first = &stage.milestones[0];
                return Err(EngineError::AchieveConditionUnmet {
                    artifact: artifact.to_string(),
                    stage: stage_name.to_string(),
                    unmet: ctx.unmet(&first.achieve, inst).unwrap_or(GuardExpression::True),
                    details: ctx.syntax_errors(&first.achieve, inst),
                });
            }
        }

        let inst = state.artifact_mut(artifact).expect("checked");
        let open = inst.open.pop().expect("checked");
        if stage.is_outcome_stage() {
            for m in &stage.milestones {
                if !achieved.contains(&m.name) {
                    retract(inst, &m.name, seq, effects, queue);
                }
            }
        }
        for m in &achieved {
            let ms = inst.milestones.entry(m.clone()).or_default();
            ms.status = MilestoneStatus::Achieved;
            ms.achieved_at = Some(seq);
            ms.times_achieved += 1;
            effects.achieved.push(MilestoneRef {
                artifact: artifact.to_string(),
                milestone: m.clone(),
            });
            queue.push_back(Occurrence::MilestoneAchieved {
                artifact: artifact.to_string(),
                milestone: m.clone(),
            });
        }
        for id in &open.created {
            if let Some(c) = state.artifact_mut(id) {
                c.pending = false;
            }
        }
        effects.completed = Some(CompletedExecution {
            artifact: artifact.to_string(),
            stage: stage_name.to_string(),
            started_at: open.entered_at,
            ended_at: seq,
            milestones: achieved,
            outcome: label,
            created: open.created,
        });
        Ok(())
    }

    fn record_result(
        &self,
        state: &mut StudyState,
        artifact: &str,
        key: &str,
        value: &AttrValue,
        queue: &mut VecDeque<Occurrence>,
    ) -> Result<(), EngineError> {
        let inst = state
            .artifact(artifact)
            .ok_or_else(|| EngineError::UnknownArtifact(artifact.to_string()))?;
        if !inst.open.is_empty() {
            let inst = state.artifact_mut(artifact).expect("checked");
            inst.results.insert(key.to_string(), value.clone());
            inst.open.last_mut().expect("open").results.insert(key.to_string());
            return Ok(());
        }
        // Machine-produced data of an artifact created by a still-open execution.
        let created_by_open = inst.pending
            && inst.owner.as_deref().and_then(|o| state.artifact(o)).is_some_and(|o| {
                o.deepest_open()
                    .is_some_and(|s| s.created.iter().any(|c| c == artifact))
            });
        if !created_by_open {
            return Err(EngineError::ResultNotAllowed {
                artifact: artifact.to_string(),
            });
        }
        let ty = self.type_of(inst)?;
        let is_attribute = ty.attribute(key).is_some();
        if let Some(attr) = ty.attribute(key) {
            if !attr.kind.accepts(value) {
                return Err(EngineError::TypeMismatch {
                    attribute: key.to_string(),
                    expected: format!("{:?}", attr.kind).to_lowercase(),
                    got: value.kind_name().to_string(),
                });
            }
        }
        let inst = state.artifact_mut(artifact).expect("checked");
        if is_attribute {
            inst.attributes.insert(key.to_string(), value.clone());
            queue.push_back(Occurrence::AttributeChanged {
                artifact: artifact.to_string(),
                attribute: key.to_string(),
            });
        } else {
            inst.results.insert(key.to_string(), value.clone());
        }
        Ok(())
    }

    /// Run invalidation sentries until no further milestone is retracted.
    fn propagate(&self, state: &mut StudyState, seq: u64, queue: &mut VecDeque<Occurrence>, effects: &mut EffectLog) {
        while let Some(occ) = queue.pop_front() {
            let Some(origin) = state.position(occ.artifact()) else {
                continue;
            };
            for idx in 0..state.artifacts.len() {
                let Some(ty) = self.def.artifact_type(&state.artifacts[idx].artifact_type) else {
                    continue;
                };
                for stage in &ty.stages {
                    for m in &stage.milestones {
                        if !state.artifacts[idx].achieved(&m.name) {
                            continue;
                        }
                        let fires = m
                            .sentries
                            .iter()
                            .any(|s| occ.matches(&s.on) && related(state, idx, origin, s.via.as_ref()));
                        if fires {
                            retract(&mut state.artifacts[idx], &m.name, seq, effects, queue);
                        }
                    }
                }
            }
        }
    }

    /// Guard truth value for every (artifact, stage) pair in creation then definition order.
    pub fn guard_table(&self, state: &StudyState) -> Vec<GuardChange> {
        let ctx = self.context(state);
        let mut out = Vec::new();
        for a in &state.artifacts {
            if let Some(ty) = self.def.artifact_type(&a.artifact_type) {
                for s in &ty.stages {
                    out.push(GuardChange {
                        artifact: a.id.clone(),
                        stage: s.name.clone(),
                        enabled: ctx.eval(&s.guard, a),
                    });
                }
            }
        }
        out
    }

    /// Stages enterable now: guard true and reachable from the artifact's open path.
    pub fn active_stages(&self, state: &StudyState) -> Vec<ActiveStage> {
        let ctx = self.context(state);
        let mut out = Vec::new();
        for a in &state.artifacts {
            if a.pending {
                continue;
            }
            let Some(ty) = self.def.artifact_type(&a.artifact_type) else {
                continue;
            };
            let parent = a.deepest_open().map(|o| o.stage.as_str());
            for s in ty.children(parent) {
                if ctx.eval(&s.guard, a) {
                    out.push(ActiveStage {
                        artifact: a.id.clone(),
                        artifact_type: a.artifact_type.clone(),
                        stage: s.name.clone(),
                        path: ty.stage_path(&s.name),
                    });
                }
            }
        }
        out
    }

    /// Status of every stage of every artifact, for lifecycle boards.
    pub fn board(&self, state: &StudyState) -> Vec<StageView> {
        let ctx = self.context(state);
        let mut out = Vec::new();
        for a in &state.artifacts {
            let Some(ty) = self.def.artifact_type(&a.artifact_type) else {
                continue;
            };
            for s in &ty.stages {
                let status = if a.is_open(&s.name) {
                    StageStatus::Open
                } else if a.pending {
                    StageStatus::Blocked {
                        reason: format!("{} is still being created", a.id),
                    }
                } else if let Some(reason) = placement_block(a, s) {
                    StageStatus::Blocked { reason }
                } else if let Some(unmet) = ctx.unmet(&s.guard, a) {
                    StageStatus::Inactive { unmet }
                } else {
                    StageStatus::Enterable
                };
                out.push(StageView {
                    artifact: a.id.clone(),
                    stage: s.name.clone(),
                    parent: s.parent.clone(),
                    status,
                    milestones: s
                        .milestones
                        .iter()
                        .map(|m| (m.name.clone(), a.milestone_status(&m.name)))
                        .collect(),
                });
            }
        }
        out
    }
}

/// Why `stage` cannot be entered given the artifact's open path, if it cannot.
fn placement_block(inst: &ArtifactInstance, stage: &StageDefinition) -> Option<String> {
    if inst.is_open(&stage.name) {
        return Some(format!("{} is already open", stage.name));
    }
    match (inst.deepest_open(), stage.parent.as_deref()) {
        (None, None) => None,
        (None, Some(parent)) => Some(format!("parent stage {parent} is not open")),
        (Some(open), None) => Some(format!("{} is open", open.stage)),
        (Some(open), Some(parent)) if open.stage == parent => None,
        (Some(open), Some(parent)) => Some(format!("{} is open; {} is nested in {parent}", open.stage, stage.name)),
    }
}

fn retract(
    inst: &mut ArtifactInstance,
    milestone: &str,
    seq: u64,
    effects: &mut EffectLog,
    queue: &mut VecDeque<Occurrence>,
) {
    let Some(ms) = inst.milestones.get_mut(milestone) else {
        return;
    };
    if ms.status != MilestoneStatus::Achieved {
        return;
    }
    ms.status = MilestoneStatus::Invalidated;
    ms.invalidated_at = Some(seq);
    effects.invalidated.push(MilestoneRef {
        artifact: inst.id.clone(),
        milestone: milestone.to_string(),
    });
    queue.push_back(Occurrence::MilestoneInvalidated {
        artifact: inst.id.clone(),
        milestone: milestone.to_string(),
    });
}

/// Whether an occurrence on `origin` is visible to a sentry of `holder` along `via`.
fn related(state: &StudyState, holder: usize, origin: usize, via: Option<&Nav>) -> bool {
    let h = &state.artifacts[holder];
    let o = &state.artifacts[origin];
    match via {
        None => holder == origin,
        Some(Nav::Forward(link)) => h.linked(link).contains(&o.id),
        Some(Nav::Backward(link)) => o.linked(link).contains(&h.id),
    }
}

/// Artifacts are only appended, so `before` is a prefix of `after` in table order.
/// Stages of new artifacts count as changed when enabled.
fn diff_guards(before: &[GuardChange], after: &[GuardChange]) -> Vec<GuardChange> {
    after
        .iter()
        .enumerate()
        .filter(|(i, now)| match before.get(*i) {
            Some(was) => was.enabled != now.enabled,
            None => now.enabled,
        })
        .map(|(_, c)| c.clone())
        .collect()
}
