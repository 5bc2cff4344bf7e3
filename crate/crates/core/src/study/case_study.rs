use std::collections::BTreeSet;
use std::sync::Arc;

use super::definition::*;
use super::script::{BlobLine, Expectation, MilestoneExpectation, Rejection, ReplayScript, ScriptLine};
use super::session::{Session, SessionError};
use crate::fem::{ContactSpec, Layer, RectCad, Side};
use crate::gsm::{AttrValue, BlobRef, EventKind, MilestoneStatus};
use crate::toolbox::{
    BlobStore, MemoryBlobs, Toolbox, CAD_MEDIA_TYPE, EXPERIMENT_APPROACH, GEOMETRY_APPROACH, MESH_MEDIA_TYPE,
    PHYSICS_APPROACH,
};

pub const CASE_STUDY_OBJECTIVE: &str = "Compute the electric field distribution in an electrical stimulation chamber";

/// Element sizes (max, min) of the first mesh and of the refined mesh.
pub const INITIAL_MESH: (f64, f64) = (2.4e-2, 1e-3);
pub const REFINED_MESH: (f64, f64) = (6e-3, 2.5e-4);

pub const PHYSICAL_MODEL_YAML: &str = "# Using the electrical stimulation template
physics: ES

# Specifying the materials
materials:
  - Medium
  - Air

conductivity:
  Medium : 1.0
  Air : 1e-14

# Boundary conditions
boundaries:
  Dirichlet:
    Contact1: 1.0
    Contact2: 0.0
";

pub const BOUNDARY_CONDITIONS_YAML: &str = "Dirichlet:\n  Contact1: 1.0\n  Contact2: 0.0\n";

/// Parallel-plate comparison: the field between the electrodes must be within 5% of V/d, and
/// the boundary current of Contact1 must change by less than the threshold under refinement.
pub const REQUIREMENT_YAML: &str = "analytical: plate-field
voltage: 1.0
distance: 0.022
probe: [0.011, 0.0016]
tolerance: 0.05
";

const PUBLICATIONS: &str = "Published chamber description";
const DISH_PUBLICATIONS: &str = "Dish manufacturer data sheet";

/// 2D analog of the stimulation chamber: a 22 mm gap between two vertical electrodes, medium
/// filling the bottom of the well under air.
pub fn chamber_cad() -> RectCad {
    RectCad {
        width: 0.022,
        height: 0.023,
        layers: vec![
            Layer {
                material: "Medium".into(),
                top: 0.00315,
            },
            Layer {
                material: "Air".into(),
                top: 0.023,
            },
        ],
        contacts: vec![
            ContactSpec {
                tag: "Contact1".into(),
                side: Side::Left,
                from: 0.001,
                to: 0.023,
            },
            ContactSpec {
                tag: "Contact2".into(),
                side: Side::Right,
                from: 0.001,
                to: 0.023,
            },
        ],
    }
}

fn input_data() -> Vec<(&'static str, &'static str, AttrValue, &'static str)> {
    vec![
        (
            "Electrode - Shape",
            "Text",
            AttrValue::text("bent, L-shaped"),
            PUBLICATIONS,
        ),
        (
            "Electrode - Material",
            "Text",
            AttrValue::text("platinum"),
            PUBLICATIONS,
        ),
        (
            "Electrode - Vertical length",
            "Data",
            AttrValue::quantity(22.0, "mm"),
            PUBLICATIONS,
        ),
        (
            "Electrode - Horizontal length",
            "Data",
            AttrValue::quantity(28.0, "mm"),
            PUBLICATIONS,
        ),
        ("Dish - Material", "Text", AttrValue::text("plastic"), DISH_PUBLICATIONS),
        ("Dish - Size", "Text", AttrValue::text("6-well"), DISH_PUBLICATIONS),
        (
            "Medium - Volume",
            "Data",
            AttrValue::quantity(3.0, "ml"),
            DISH_PUBLICATIONS,
        ),
        (
            "Medium - Electrical conductivity",
            "Data",
            AttrValue::quantity(1.0, "S/m"),
            "Laboratory measurement",
        ),
        (
            "Air - Electrical conductivity",
            "Data",
            AttrValue::quantity(1e-14, "S/m"),
            "ITIS database",
        ),
    ]
}

struct Recorder {
    session: Session,
    blobs: Arc<MemoryBlobs>,
    lines: Vec<ScriptLine>,
    synced_events: usize,
    synced_blobs: BTreeSet<String>,
}

impl Recorder {
    fn sync(&mut self) {
        for (digest, bytes) in self.blobs.entries() {
            if self.synced_blobs.insert(digest.clone()) {
                let text = String::from_utf8(bytes).expect("case-study blobs are text");
                self.lines.push(ScriptLine::Blob {
                    blob: BlobLine { digest, text },
                });
            }
        }
        for ev in &self.session.events()[self.synced_events..] {
            self.lines.push(ScriptLine::Event(ev.clone()));
        }
        self.synced_events = self.session.events().len();
    }

    fn step(&mut self, label: &str) {
        self.sync();
        self.lines.push(ScriptLine::Step { step: label.into() });
    }

    fn ev(&mut self, kind: EventKind) -> Result<(), SessionError> {
        self.session.submit(kind)?;
        self.sync();
        Ok(())
    }

    fn enter(&mut self, artifact: &str, stage: &str) -> Result<(), SessionError> {
        self.ev(EventKind::enter(artifact, stage))
    }

    fn leave(&mut self, artifact: &str, stage: &str) -> Result<(), SessionError> {
        self.ev(EventKind::leave(artifact, stage, None))
    }

    fn set(&mut self, artifact: &str, name: &str, value: AttrValue) -> Result<(), SessionError> {
        self.ev(EventKind::set(artifact, name, value))
    }

    fn text(&mut self, artifact: &str, name: &str, value: &str) -> Result<(), SessionError> {
        self.set(artifact, name, AttrValue::text(value))
    }

    fn link(&mut self, from: &str, link: &str, to: &str) -> Result<(), SessionError> {
        self.ev(EventKind::link(from, link, to))
    }

    /// Enter a creating stage, create the artifact and leave again.
    fn create(&mut self, owner: &str, stage: &str, artifact_type: &str) -> Result<String, SessionError> {
        let id = self.session.fresh_id(artifact_type);
        self.enter(owner, stage)?;
        self.ev(EventKind::create(artifact_type, &id, Some(owner)))?;
        self.leave(owner, stage)?;
        Ok(id)
    }

    fn put(&mut self, name: &str, media_type: &str, text: &str) -> BlobRef {
        let r = self.blobs.put(name, media_type, text.as_bytes()).expect("memory store");
        self.sync();
        r
    }

    fn reject(&mut self, attempt: EventKind, code: &str) -> Result<(), SessionError> {
        match super::script::probe(&self.session, &attempt) {
            Some(e) if e.code() == code => {
                self.lines.push(ScriptLine::Reject {
                    reject: Rejection {
                        code: code.into(),
                        attempt,
                    },
                });
                Ok(())
            }
            other => Err(SessionError::Usage(format!(
                "case study expected {attempt:?} to be refused with {code}, got {other:?}"
            ))),
        }
    }

    fn expect(&mut self, milestones: &[(&str, &str, MilestoneStatus)]) -> Result<(), SessionError> {
        let expectation = Expectation {
            after: self.session.state().next_seq - 1,
            milestones: milestones
                .iter()
                .map(|(a, m, s)| MilestoneExpectation {
                    artifact: a.to_string(),
                    milestone: m.to_string(),
                    status: *s,
                })
                .collect(),
            active: None,
        };
        for m in &expectation.milestones {
            let got = self
                .session
                .state()
                .artifact(&m.artifact)
                .map(|a| a.milestone_status(&m.milestone));
            if got != Some(m.status) {
                return Err(SessionError::Usage(format!(
                    "case study: {}/{} is {got:?}, expected {:?}",
                    m.artifact, m.milestone, m.status
                )));
            }
        }
        self.lines.push(ScriptLine::Expect { expect: expectation });
        Ok(())
    }

    fn mesh_blob(&mut self, cad: &RectCad, (hmax, hmin): (f64, f64), name: &str) -> Result<BlobRef, SessionError> {
        let mesh = cad
            .mesh(hmax, hmin)
            .map_err(|e| SessionError::Usage(format!("case-study mesh: {e}")))?;
        let json = serde_json::to_string(&mesh).expect("mesh serializes");
        Ok(self.put(name, MESH_MEDIA_TYPE, &json))
    }
}

use MilestoneStatus::{Achieved, Invalidated};

/// Run the four case-study steps against a live session and record them as a replay script.
/// Validation verdicts are computed by the toolbox, not hard-coded.
pub fn case_study_script() -> Result<ReplayScript, SessionError> {
    let blobs = Arc::new(MemoryBlobs::new());
    let toolbox = Toolbox::new(blobs.clone());
    let session = Session::create(Arc::new(build_fea_workflow()), toolbox)?;
    let mut r = Recorder {
        session,
        blobs,
        lines: Vec::new(),
        synced_events: 0,
        synced_blobs: BTreeSet::new(),
    };
    let cmo = "cmo-1";

    r.step("Step 1: assembling the conceptual model");
    r.reject(
        EventKind::enter(cmo, "Assembling conceptual model"),
        "guard_not_satisfied",
    )?;
    r.enter(cmo, "Specifying objective")?;
    r.text(cmo, "objective", CASE_STUDY_OBJECTIVE)?;
    r.leave(cmo, "Specifying objective")?;
    r.expect(&[(cmo, "objective-specified", Achieved)])?;
    r.reject(EventKind::enter(cmo, "Specifying objective"), "guard_not_satisfied")?;
    r.enter(cmo, "Assembling conceptual model")?;
    let mut inputs = Vec::new();
    for (name, ty, spec, source) in input_data() {
        let inp = r.create(cmo, "Creating input data", INPUT_DATA)?;
        r.enter(&inp, "Assembling input data")?;
        r.text(&inp, "name", name)?;
        if inputs.is_empty() {
            r.reject(EventKind::set(&inp, "specification", spec.clone()), "attribute_order")?;
        }
        r.text(&inp, "type", ty)?;
        r.set(&inp, "specification", spec)?;
        if inputs.is_empty() {
            r.reject(
                EventKind::leave(&inp, "Assembling input data", None),
                "achieve_condition_unmet",
            )?;
        }
        r.text(&inp, "source", source)?;
        r.leave(&inp, "Assembling input data")?;
        inputs.push(inp);
    }
    r.leave(cmo, "Assembling conceptual model")?;
    r.expect(&[(cmo, "assembled-cmo", Achieved), ("inp-9", "assembled-inp", Achieved)])?;

    r.step("Step 2: assembling the geometrical model");
    let smo = r.create(cmo, "Creating simulation model", SIMULATION_MODEL)?;
    r.enter(&smo, "Assembling simulation model")?;
    let gmo = r.create(&smo, "Creating geometrical model", GEOMETRICAL_MODEL)?;
    r.reject(
        EventKind::enter(&smo, "Specifying boundary conditions"),
        "guard_not_satisfied",
    )?;
    r.enter(&gmo, "Assembling geometrical model")?;
    r.reject(EventKind::enter(&gmo, "CAD definition"), "guard_not_satisfied")?;
    r.enter(&gmo, "Specifying approach")?;
    r.text(&gmo, "approach", GEOMETRY_APPROACH)?;
    r.leave(&gmo, "Specifying approach")?;
    r.reject(EventKind::enter(&gmo, "Specifying approach"), "guard_not_satisfied")?;
    r.enter(&gmo, "Choosing input data")?;
    for inp in &inputs[..7] {
        r.link(&gmo, "inputs", inp)?;
    }
    r.leave(&gmo, "Choosing input data")?;
    let cad = chamber_cad();
    r.enter(&gmo, "CAD definition")?;
    let cad_blob = r.put(
        "chamber_cad.json",
        CAD_MEDIA_TYPE,
        &serde_json::to_string(&cad).expect("cad serializes"),
    );
    r.set(&gmo, "cad", AttrValue::Blob(cad_blob))?;
    r.leave(&gmo, "CAD definition")?;
    r.enter(&gmo, "Specifying geometrical model")?;
    let mesh = r.mesh_blob(&cad, INITIAL_MESH, "chamber_mesh.json")?;
    r.set(&gmo, "specification", AttrValue::Blob(mesh))?;
    r.leave(&gmo, "Specifying geometrical model")?;
    r.leave(&gmo, "Assembling geometrical model")?;
    r.expect(&[(&gmo, "assembled-gmo", Achieved)])?;

    r.step("Step 3: assembling the physical model");
    let pmo = r.create(&smo, "Creating physical model", PHYSICAL_MODEL)?;
    r.enter(&pmo, "Assembling physical model")?;
    r.enter(&pmo, "Choosing input data")?;
    for inp in &inputs[7..] {
        r.link(&pmo, "inputs", inp)?;
    }
    r.leave(&pmo, "Choosing input data")?;
    r.enter(&pmo, "Specifying approach")?;
    r.text(&pmo, "approach", PHYSICS_APPROACH)?;
    r.leave(&pmo, "Specifying approach")?;
    r.enter(&pmo, "Specifying physical model")?;
    r.text(&pmo, "specification", PHYSICAL_MODEL_YAML)?;
    r.leave(&pmo, "Specifying physical model")?;
    r.leave(&pmo, "Assembling physical model")?;
    r.reject(
        EventKind::leave(&smo, "Assembling simulation model", None),
        "achieve_condition_unmet",
    )?;
    r.enter(&smo, "Specifying boundary conditions")?;
    r.text(&smo, "boundary-conditions", BOUNDARY_CONDITIONS_YAML)?;
    r.leave(&smo, "Specifying boundary conditions")?;
    r.leave(&smo, "Assembling simulation model")?;
    r.expect(&[(&pmo, "assembled-pmo", Achieved), (&smo, "assembled-smo", Achieved)])?;
    r.reject(
        EventKind::enter(&smo, "Validating simulation model"),
        "guard_not_satisfied",
    )?;

    r.step("Step 4: validating the simulation model");
    r.enter(cmo, "Assembling conceptual model")?;
    let req = r.create(cmo, "Creating requirement", REQUIREMENT)?;
    r.leave(cmo, "Assembling conceptual model")?;
    r.reject(
        EventKind::enter(cmo, "Validating conceptual model"),
        "guard_not_satisfied",
    )?;
    r.enter(&req, "Assembling requirement")?;
    r.reject(
        EventKind::set(&req, "specification", AttrValue::text(REQUIREMENT_YAML)),
        "attribute_order",
    )?;
    r.text(&req, "type", "data")?;
    r.text(&req, "specification", REQUIREMENT_YAML)?;
    r.text(&req, "region", "Contact1")?;
    r.text(&req, "metric", crate::experiment::SUCCESSIVE_DIFFERENCE)?;
    r.set(&req, "threshold", AttrValue::quantity(2.5e-4, "A/m"))?;
    r.leave(&req, "Assembling requirement")?;
    r.enter(cmo, "Validating conceptual model")?;
    r.ev(EventKind::leave(cmo, "Validating conceptual model", Some("valid")))?;
    r.expect(&[(cmo, "validated-cmo", Achieved)])?;
    r.enter(&smo, "Choosing requirements")?;
    r.link(&smo, "requirements", &req)?;
    r.leave(&smo, "Choosing requirements")?;
    let exp = r.create(&smo, "Creating simulation experiment", SIMULATION_EXPERIMENT)?;
    r.enter(&exp, "Assembling simulation experiment")?;
    r.text(&exp, "approach", EXPERIMENT_APPROACH)?;
    r.text(&exp, "role", RoleTag::Validation.code())?;
    r.text(&exp, "specification", "experiment: validation\n")?;
    r.reject(
        EventKind::leave(&exp, "Assembling simulation experiment", None),
        "achieve_condition_unmet",
    )?;
    r.link(&exp, "requirement", &req)?;
    r.leave(&exp, "Assembling simulation experiment")?;
    r.expect(&[
        (&smo, "requirements-chosen", Achieved),
        (&exp, "assembled-exp", Achieved),
    ])?;

    r.step("Step 4a: first validation run");
    let (_, first) = r.session.assess_model(&exp)?;
    r.sync();
    if first != "fail" {
        return Err(SessionError::Usage(format!(
            "first validation run returned {first}, expected fail"
        )));
    }
    r.expect(&[(&smo, "validation-failed-smo", Achieved)])?;

    r.step("Step 4b: refining the mesh");
    r.enter(&gmo, "Assembling geometrical model")?;
    r.expect(&[(&smo, "validation-failed-smo", Invalidated)])?;
    r.enter(&gmo, "Specifying geometrical model")?;
    let refined = r.mesh_blob(&cad, REFINED_MESH, "chamber_mesh_refined.json")?;
    r.set(&gmo, "specification", AttrValue::Blob(refined))?;
    r.leave(&gmo, "Specifying geometrical model")?;
    r.leave(&gmo, "Assembling geometrical model")?;

    r.step("Step 4c: second validation run");
    let (_, second) = r.session.assess_model(&exp)?;
    r.sync();
    if second != "succeed" {
        return Err(SessionError::Usage(format!(
            "second validation run returned {second}, expected succeed"
        )));
    }
    r.expect(&[
        (&smo, "validated-smo", Achieved),
        (&smo, "validation-failed-smo", Invalidated),
    ])?;
    r.sync();
    Ok(ReplayScript { lines: r.lines })
}

/// The shipped case-study replay script.
pub const CASE_STUDY_JSONL: &str = include_str!("../../resources/case-study.jsonl");

#[cfg(test)]
mod tests {
    use super::*;

    fn fresh_session() -> Session {
        Session::new(
            Arc::new(build_fea_workflow()),
            Toolbox::new(Arc::new(MemoryBlobs::new())),
        )
    }

    #[test]
    fn generated_script_matches_shipped_resource() {
        let script = case_study_script().unwrap();
        let text = script.to_jsonl();
        if std::env::var_os("FEAFLOW_BLESS").is_some() {
            let path = concat!(env!("CARGO_MANIFEST_DIR"), "/resources/case-study.jsonl");
            std::fs::write(path, &text).unwrap();
            return;
        }
        assert!(
            text == CASE_STUDY_JSONL,
            "shipped case study is stale; rerun with FEAFLOW_BLESS=1"
        );
    }

    #[test]
    fn shipped_script_replays_with_all_checks() {
        let script = ReplayScript::parse(CASE_STUDY_JSONL).unwrap();
        let mut s = fresh_session();
        let report = script.replay_into(&mut s).unwrap();
        assert!(report.passed(), "{:#?}", report.failures);
        assert_eq!(report.events, script.event_count());
        assert_eq!(s.events().len(), script.event_count());
        assert!(s.state().artifact("smo-1").unwrap().achieved("validated-smo"));
        assert_eq!(ReplayScript::parse(&script.to_jsonl()).unwrap(), script);
    }
}
