use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::definition::*;
use crate::experiment::{
    convergence_schema, fill_schema, generate_convergence, ConvergencePlan, ExperimentError, FilledSchema,
};
use crate::gsm::{
    AttrValue, BlobRef, EffectLog, Engine, EngineError, EventKind, StudyEvent, StudyState, WorkflowDefinition,
};
use crate::provenance::{record, ProvError, ProvenanceGraph};
use crate::toolbox::{ExecutionReport, Toolbox, ToolboxError};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Toolbox(#[from] ToolboxError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Provenance(#[from] ProvError),
    #[error("{0}")]
    Usage(String),
}

/// Which experiment attribute an execution runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunSource {
    #[default]
    Specification,
    Script,
}

/// Values for the manual slots of the convergence schema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManualInputs {
    pub iterations: usize,
    pub max_size: f64,
    pub min_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub report: ExecutionReport,
    /// SimulationData artifact holding the payload.
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedExperiment {
    pub filled: FilledSchema,
    pub plan: ConvergencePlan,
    pub script: String,
    pub blob: BlobRef,
}

/// Staged events of an all-or-nothing operation.
pub struct Tx<'a> {
    engine: Engine<'a>,
    state: StudyState,
    applied: Vec<(StudyState, StudyEvent, EffectLog)>,
}

impl Tx<'_> {
    pub fn state(&self) -> &StudyState {
        &self.state
    }

    pub fn submit(&mut self, kind: EventKind) -> Result<&EffectLog, EngineError> {
        let event = kind.at(self.state.next_seq);
        let (next, effects) = self.engine.apply(&self.state, &event)?;
        let before = std::mem::replace(&mut self.state, next);
        self.applied.push((before, event, effects));
        Ok(&self.applied.last().expect("just pushed").2)
    }
}

/// A study in memory: its event log, folded state and provenance, bound to a toolbox.
#[derive(Clone)]
pub struct Session {
    def: Arc<WorkflowDefinition>,
    toolbox: Toolbox,
    events: Vec<StudyEvent>,
    effects: Vec<EffectLog>,
    state: StudyState,
    provenance: ProvenanceGraph,
}

impl Session {
    pub fn new(def: Arc<WorkflowDefinition>, toolbox: Toolbox) -> Self {
        let state = StudyState::empty(&def.name, &def.version);
        Session {
            def,
            toolbox,
            events: Vec::new(),
            effects: Vec::new(),
            state,
            provenance: ProvenanceGraph::default(),
        }
    }

    /// A fresh study whose conceptual model already exists.
    pub fn create(def: Arc<WorkflowDefinition>, toolbox: Toolbox) -> Result<Self, SessionError> {
        let mut s = Session::new(def, toolbox);
        s.submit(EventKind::create(CONCEPTUAL_MODEL, "cmo-1", None))?;
        Ok(s)
    }

    pub fn replay(def: Arc<WorkflowDefinition>, toolbox: Toolbox, events: &[StudyEvent]) -> Result<Self, SessionError> {
        let mut s = Session::new(def, toolbox);
        for ev in events {
            s.submit_event(ev.clone())?;
        }
        Ok(s)
    }

    pub fn engine(&self) -> Engine<'_> {
        Engine::new(&self.def, &self.toolbox)
    }

    pub fn definition(&self) -> &Arc<WorkflowDefinition> {
        &self.def
    }

    pub fn toolbox(&self) -> &Toolbox {
        &self.toolbox
    }

    pub fn state(&self) -> &StudyState {
        &self.state
    }

    pub fn events(&self) -> &[StudyEvent] {
        &self.events
    }

    /// Effects of each event, parallel to [`Session::events`].
    pub fn effects(&self) -> &[EffectLog] {
        &self.effects
    }

    pub fn provenance(&self) -> &ProvenanceGraph {
        &self.provenance
    }

    /// Apply one event carrying an explicit sequence number.
    pub fn submit_event(&mut self, event: StudyEvent) -> Result<EffectLog, SessionError> {
        let (next, effects) = self.engine().apply(&self.state, &event)?;
        self.commit(vec![(self.state.clone(), event, effects.clone())], next)?;
        Ok(effects)
    }

    pub fn submit(&mut self, kind: EventKind) -> Result<EffectLog, SessionError> {
        let seq = self.state.next_seq;
        self.submit_event(kind.at(seq))
    }

    /// Run `f` against a staged copy of the state; commit every event or none.
    pub fn transaction<T>(
        &mut self,
        f: impl FnOnce(&mut Tx<'_>, &Toolbox) -> Result<T, SessionError>,
    ) -> Result<(T, Vec<(StudyEvent, EffectLog)>), SessionError> {
        let mut tx = Tx {
            engine: Engine::new(&self.def, &self.toolbox),
            state: self.state.clone(),
            applied: Vec::new(),
        };
        let value = f(&mut tx, &self.toolbox)?;
        let Tx { state, applied, .. } = tx;
        let log: Vec<_> = applied.iter().map(|(_, e, fx)| (e.clone(), fx.clone())).collect();
        self.commit(applied, state)?;
        Ok((value, log))
    }

    fn commit(
        &mut self,
        applied: Vec<(StudyState, StudyEvent, EffectLog)>,
        end: StudyState,
    ) -> Result<(), SessionError> {
        let mut graph = self.provenance.clone();
        let mut after_states: Vec<&StudyState> = applied.iter().skip(1).map(|(b, _, _)| b).collect();
        after_states.push(&end);
        for ((before, event, effects), after) in applied.iter().zip(after_states) {
            record(&mut graph, &self.def, before, event, after, effects)?;
        }
        self.provenance = graph;
        for (_, e, fx) in applied {
            self.events.push(e);
            self.effects.push(fx);
        }
        self.state = end;
        Ok(())
    }

    /// Next unused id of the form `<abbreviation>-<n>`.
    pub fn fresh_id(&self, artifact_type: &str) -> String {
        fresh_id(&self.def, &self.state, artifact_type)
    }

    /// Execute an experiment through its Executing stage: the toolbox runs first, and only
    /// a successful run is recorded as a stage execution producing SimulationData.
    pub fn run_experiment(&mut self, exp: &str, source: RunSource) -> Result<ExperimentRun, SessionError> {
        let def = self.def.clone();
        let (run, _) = self.transaction(|tx, toolbox| run_in(tx, toolbox, &def, exp, source))?;
        Ok(run)
    }

    /// Open the model's Validating (role val) or Calibrating (role cal) stage, run the experiment
    /// and leave the stage with the toolbox verdict.
    pub fn assess_model(&mut self, exp: &str) -> Result<(ExperimentRun, String), SessionError> {
        let def = self.def.clone();
        let (out, _) = self.transaction(|tx, toolbox| {
            let e = tx
                .state()
                .artifact(exp)
                .ok_or_else(|| EngineError::UnknownArtifact(exp.to_string()))?;
            let (stage, key) = match e.text("role").and_then(RoleTag::from_code) {
                Some(RoleTag::Validation) => ("Validating simulation model", "validation-outcome"),
                Some(RoleTag::Calibration) => ("Calibrating simulation model", "calibration-outcome"),
                _ => {
                    return Err(SessionError::Usage(format!(
                        "{exp} is neither a validation nor a calibration experiment"
                    )))
                }
            };
            let smo = owning_model(tx.state(), exp)?;
            tx.submit(EventKind::enter(&smo, stage))?;
            let run = run_in(tx, toolbox, &def, exp, RunSource::Specification)?;
            let outcome = run
                .report
                .outcome
                .clone()
                .ok_or_else(|| SessionError::Usage(format!("{exp} produced no verdict")))?;
            tx.submit(EventKind::result(&smo, key, AttrValue::text(outcome.clone())))?;
            tx.submit(EventKind::leave(&smo, stage, None))?;
            Ok((run, outcome))
        })?;
        Ok(out)
    }

    pub fn fill(&self, exp: &str) -> Result<FilledSchema, SessionError> {
        Ok(fill_schema(&self.def, &convergence_schema(), &self.state, exp)?)
    }

    /// Fill the convergence schema, optionally supplying the manual slots first, and attach
    /// the rendered script to the experiment.
    pub fn generate(&mut self, exp: &str, manual: Option<ManualInputs>) -> Result<GeneratedExperiment, SessionError> {
        let def = self.def.clone();
        let (out, _) = self.transaction(|tx, toolbox| {
            const ASSEMBLING: &str = "Assembling simulation experiment";
            let open = tx
                .state()
                .artifact(exp)
                .ok_or_else(|| EngineError::UnknownArtifact(exp.to_string()))?
                .is_open(ASSEMBLING);
            if !open {
                tx.submit(EventKind::enter(exp, ASSEMBLING))?;
            }
            if let Some(m) = manual {
                tx.submit(EventKind::set(
                    exp,
                    "max-iterations",
                    AttrValue::Number(m.iterations as f64),
                ))?;
                tx.submit(EventKind::set(
                    exp,
                    "initial-max-size",
                    AttrValue::quantity(m.max_size, "m"),
                ))?;
                tx.submit(EventKind::set(
                    exp,
                    "initial-min-size",
                    AttrValue::quantity(m.min_size, "m"),
                ))?;
            }
            let filled = fill_schema(&def, &convergence_schema(), tx.state(), exp)?;
            let plan = generate_convergence(&filled)?;
            let script = plan.render_script();
            let blob = toolbox
                .blobs()
                .put(&format!("{exp}-convergence.py"), "text/x-python", script.as_bytes())
                .map_err(ToolboxError::from)?;
            tx.submit(EventKind::set(exp, "script", AttrValue::Blob(blob.clone())))?;
            if !open {
                tx.submit(EventKind::leave(exp, ASSEMBLING, None))?;
            }
            Ok(GeneratedExperiment {
                filled,
                plan,
                script,
                blob,
            })
        })?;
        Ok(out)
    }
}

fn owning_model(state: &StudyState, exp: &str) -> Result<String, SessionError> {
    state
        .of_type(SIMULATION_MODEL)
        .find(|s| s.linked("experiments").iter().any(|e| e == exp))
        .map(|s| s.id.clone())
        .ok_or_else(|| SessionError::Usage(format!("{exp} belongs to no simulation model")))
}

pub fn fresh_id(def: &WorkflowDefinition, state: &StudyState, artifact_type: &str) -> String {
    let abbr = def
        .artifact_type(artifact_type)
        .map_or("art", |t| t.abbreviation.as_str());
    (1..)
        .map(|n| format!("{abbr}-{n}"))
        .find(|id| state.artifact(id).is_none())
        .expect("unbounded range")
}

fn run_in(
    tx: &mut Tx<'_>,
    toolbox: &Toolbox,
    def: &WorkflowDefinition,
    exp: &str,
    source: RunSource,
) -> Result<ExperimentRun, SessionError> {
    const EXECUTING: &str = "Executing experiment";
    // Reject early so a blocked stage costs no solve.
    tx.engine
        .apply(tx.state(), &EventKind::enter(exp, EXECUTING).at(tx.state().next_seq))?;
    let report = match source {
        RunSource::Specification => toolbox.execute(tx.state(), exp)?,
        RunSource::Script => toolbox.execute_script(tx.state(), exp)?,
    };
    let data = fresh_id(def, tx.state(), SIMULATION_DATA);
    tx.submit(EventKind::enter(exp, EXECUTING))?;
    tx.submit(EventKind::create(SIMULATION_DATA, &data, Some(exp)))?;
    tx.submit(EventKind::result(
        &data,
        "payload",
        AttrValue::Blob(report.payload.clone()),
    ))?;
    tx.submit(EventKind::result(&data, "metric-value", report.metric.clone()))?;
    tx.submit(EventKind::result(&data, "producing-experiment", AttrValue::text(exp)))?;
    tx.submit(EventKind::leave(exp, EXECUTING, None))?;
    Ok(ExperimentRun { report, data })
}
