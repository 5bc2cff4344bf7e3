use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::session::{Session, SessionError};
use crate::gsm::{ActiveStage, EngineError, EventKind, MilestoneStatus, StudyEvent, StudyState};
use crate::toolbox::{digest_of, BlobError};

/// Blob content carried inline so a script is self-contained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobLine {
    pub digest: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MilestoneExpectation {
    pub artifact: String,
    pub milestone: String,
    pub status: MilestoneStatus,
}

/// State checks that hold once every event up to and including `after` has been applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expectation {
    pub after: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub milestones: Vec<MilestoneExpectation>,
    /// `artifact/stage` pairs, in engine order, when the full active set is pinned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<Vec<String>>,
}

/// An attempt that must be refused at this point with the given error code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub code: String,
    pub attempt: EventKind,
}

impl Expectation {
    /// Mismatches between the expectation and a state with its enterable stages.
    pub fn check(&self, state: &StudyState, active: &[ActiveStage]) -> Vec<String> {
        let mut failures = Vec::new();
        if state.next_seq != self.after + 1 {
            failures.push(format!(
                "expectation after {} checked at next sequence {}",
                self.after, state.next_seq
            ));
        }
        for m in &self.milestones {
            let got = state.artifact(&m.artifact).map(|a| a.milestone_status(&m.milestone));
            if got != Some(m.status) {
                failures.push(format!(
                    "after {}: {}/{} is {:?}, expected {:?}",
                    self.after, m.artifact, m.milestone, got, m.status
                ));
            }
        }
        if let Some(want) = &self.active {
            let got: Vec<String> = active.iter().map(|a| format!("{}/{}", a.artifact, a.stage)).collect();
            if &got != want {
                failures.push(format!(
                    "after {}: active stages {got:?}, expected {want:?}",
                    self.after
                ));
            }
        }
        failures
    }
}

impl Rejection {
    /// `outcome` is `Ok` when the attempt was accepted, else the refusal code.
    pub fn check(&self, outcome: Result<(), &str>) -> Option<String> {
        match outcome {
            Ok(()) => Some(format!("{:?} was accepted", self.attempt)),
            Err(code) if code != self.code => Some(format!(
                "{:?} refused with {code}, expected {}",
                self.attempt, self.code
            )),
            Err(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptLine {
    Step { step: String },
    Blob { blob: BlobLine },
    Expect { expect: Expectation },
    Reject { reject: Rejection },
    Event(StudyEvent),
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("event sequence is not contiguous: expected {expected}, found {found}")]
    Gap { expected: u64, found: u64 },
    #[error("blob {digest}: {reason}")]
    Blob { digest: String, reason: String },
    #[error("event {seq} rejected: {source}")]
    Rejected { seq: u64, source: SessionError },
    #[error(transparent)]
    Store(#[from] BlobError),
    #[error("persisting event failed: {0}")]
    Persist(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub events: usize,
    pub checks: usize,
    pub failures: Vec<String>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Events in the JSON-lines log format interleaved with blobs, step markers and checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayScript {
    pub lines: Vec<ScriptLine>,
}

impl ReplayScript {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line = serde_json::from_str(raw).map_err(|e| ScriptError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
            lines.push(line);
        }
        let script = ReplayScript { lines };
        script.check_contiguous()?;
        Ok(script)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(&serde_json::to_string(l).expect("script lines serialize"));
            out.push('\n');
        }
        out
    }

    pub fn check_contiguous(&self) -> Result<(), ScriptError> {
        for (expected, ev) in self.events().enumerate() {
            if ev.seq != expected as u64 {
                return Err(ScriptError::Gap {
                    expected: expected as u64,
                    found: ev.seq,
                });
            }
        }
        Ok(())
    }

    pub fn events(&self) -> impl Iterator<Item = &StudyEvent> {
        self.lines.iter().filter_map(|l| match l {
            ScriptLine::Event(e) => Some(e),
            _ => None,
        })
    }

    pub fn event_count(&self) -> usize {
        self.events().count()
    }

    /// Events before the first line of the step whose label starts with `label`.
    pub fn prefix_before_step(&self, label: &str) -> Option<Vec<StudyEvent>> {
        let pos = self
            .lines
            .iter()
            .position(|l| matches!(l, ScriptLine::Step { step } if step.starts_with(label)))?;
        Some(
            self.lines[..pos]
                .iter()
                .filter_map(|l| match l {
                    ScriptLine::Event(e) => Some(e.clone()),
                    _ => None,
                })
                .collect(),
        )
    }

    pub fn steps(&self) -> Vec<&str> {
        self.lines
            .iter()
            .filter_map(|l| match l {
                ScriptLine::Step { step } => Some(step.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Store every blob line in the session's blob store, verifying digests.
    pub fn load_blobs(&self, session: &Session) -> Result<usize, ScriptError> {
        let mut n = 0;
        for l in &self.lines {
            if let ScriptLine::Blob { blob } = l {
                if digest_of(blob.text.as_bytes()) != blob.digest {
                    return Err(ScriptError::Blob {
                        digest: blob.digest.clone(),
                        reason: "content does not match digest".into(),
                    });
                }
                session.toolbox().blobs().put_bytes(blob.text.as_bytes())?;
                n += 1;
            }
        }
        Ok(n)
    }

    /// Apply the script to a session, stopping at the first refused event. Failed checks
    /// are collected, not fatal.
    pub fn replay_into(&self, session: &mut Session) -> Result<ReplayReport, ScriptError> {
        self.replay_with(session, |_| Ok(()))
    }

    /// [`ReplayScript::replay_into`] calling `accepted` after every committed event, e.g. to
    /// persist it before the next one is tried.
    pub fn replay_with(
        &self,
        session: &mut Session,
        mut accepted: impl FnMut(&Session) -> Result<(), ScriptError>,
    ) -> Result<ReplayReport, ScriptError> {
        self.load_blobs(session)?;
        let mut report = ReplayReport::default();
        for l in &self.lines {
            match l {
                ScriptLine::Event(ev) => {
                    session
                        .submit_event(ev.clone())
                        .map_err(|source| ScriptError::Rejected { seq: ev.seq, source })?;
                    report.events += 1;
                    accepted(session)?;
                }
                ScriptLine::Expect { expect } => {
                    report.checks += 1;
                    let active = session.engine().active_stages(session.state());
                    report.failures.extend(expect.check(session.state(), &active));
                }
                ScriptLine::Reject { reject } => {
                    report.checks += 1;
                    let attempt = reject.attempt.clone().at(session.state().next_seq);
                    let outcome = session.engine().apply(session.state(), &attempt).map(drop);
                    report
                        .failures
                        .extend(reject.check(outcome.as_ref().map_err(EngineError::code).copied()));
                }
                ScriptLine::Step { .. } | ScriptLine::Blob { .. } => {}
            }
        }
        Ok(report)
    }
}

/// Attempt `kind` against the session without committing; returns the refusal, if any.
pub fn probe(session: &Session, kind: &EventKind) -> Option<EngineError> {
    let ev = kind.clone().at(session.state().next_seq);
    session.engine().apply(session.state(), &ev).err()
}
