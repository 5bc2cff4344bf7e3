//! Planner plans checked against exhaustive engine search.

use std::collections::BTreeSet;

use feaflow_core::gsm::{AcceptAll, Engine, StudyState, WorkflowDefinition};
use feaflow_core::planner::{plan, Abstraction, Goal, GuidanceError, PlanError, PlanStep, Term, LINK};

use crate::macros::{milestone_holds, Executor, Move, Naming, Search};
use crate::random::random_study;

pub const CAP: usize = 4;
pub const STATE_LIMIT: usize = 400_000;

pub fn executor(def: &WorkflowDefinition, cap: usize) -> Executor<'_> {
    Executor {
        engine: Engine::new(def, &AcceptAll),
        def,
        naming: Naming::Hypothetical,
        cap,
    }
}

pub fn goals(abs: &Abstraction) -> Vec<String> {
    let mut seen = BTreeSet::new();
    abs.info
        .iter()
        .map(|i| i.milestone.clone())
        .filter(|m| seen.insert(m.clone()))
        .collect()
}

/// The engine move that performs a planned step.
/// A link target the plan never creates belongs to an unused disjunct and is dropped.
pub fn to_move(abs: &Abstraction, step: &PlanStep, known: &BTreeSet<String>) -> Move {
    let (action, info) = abs.action(&step.action).expect("planned action exists");
    let subject = &action.params[0].name;
    let created = info.creates.as_ref().map(|_| action.params.len() - 1);
    let mut mv = Move {
        artifact: step.args[0].clone(),
        stage: step.stage.clone(),
        choice: None,
        target: None,
    };
    for (i, p) in action.params.iter().enumerate().skip(1) {
        if p.ty == "Role" {
            mv.choice = Some(step.args[i].clone());
        } else if Some(i) != created
            && action
                .effect
                .iter()
                .any(|e| e.predicate == LINK && e.args == [Term::Var(subject.clone()), Term::Var(p.name.clone())])
            && known.contains(&step.args[i])
        {
            mv.target = Some(step.args[i].clone());
        }
    }
    mv
}

pub fn execute(
    exec: &Executor<'_>,
    abs: &Abstraction,
    state: &StudyState,
    steps: &[PlanStep],
) -> Result<StudyState, String> {
    let mut known: BTreeSet<String> = state.artifacts.iter().map(|a| a.id.clone()).collect();
    let moves: Vec<Move> = steps
        .iter()
        .map(|s| {
            let mv = to_move(abs, s, &known);
            if s.creates.is_some() {
                known.insert(s.args.last().expect("created parameter").clone());
            }
            mv
        })
        .collect();
    exec.realize(state, &moves)
        .map_err(|mv| format!("engine refused {mv:?}"))
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Tally {
    pub compared: usize,
    pub unreachable: usize,
    pub skipped_over_cap: usize,
    pub skipped_limit: usize,
}

/// Plan length against exhaustive engine search on small random studies, until `wanted`
/// studies were compared. Every found plan is also replayed in the engine. The first
/// disagreement is returned as an error.
pub fn compare_with_search(def: &WorkflowDefinition, abs: &Abstraction, wanted: usize) -> Result<Tally, String> {
    let exec = executor(def, CAP);
    let goals = goals(abs);
    let mut tally = Tally::default();
    let mut seed = 0u64;
    while tally.compared < wanted && seed < 5_000 {
        seed += 1;
        let Some(study) = random_study(def, seed, (seed % 17) as usize, CAP) else {
            continue;
        };
        let goal = &goals[(seed as usize * 7 + study.artifacts.len()) % goals.len()];
        let planned = match plan(abs, def, &study, &Goal::milestone(goal)) {
            Ok(p) => Some(p),
            Err(GuidanceError::Plan(PlanError::Unreachable)) => None,
            Err(e) => return Err(format!("seed {seed}: {e}")),
        };
        if let Some(p) = &planned {
            let creates = p.iter().filter(|s| s.creates.is_some()).count();
            if study.artifacts.len() + creates > CAP {
                tally.skipped_over_cap += 1;
                continue;
            }
        }
        let oracle = exec.shortest(&study, &|s| milestone_holds(s, goal, None), STATE_LIMIT);
        match (&planned, &oracle) {
            (_, Search::Limit) => {
                tally.skipped_limit += 1;
                continue;
            }
            (Some(p), Search::Found(moves)) => {
                if p.len() != moves.len() {
                    return Err(format!(
                        "seed {seed}, goal {goal}: planner {:?} vs engine {:?}",
                        p.iter()
                            .map(|s| format!("{} {:?}", s.action, s.args))
                            .collect::<Vec<_>>(),
                        moves
                    ));
                }
                let end = execute(&exec, abs, &study, p).map_err(|e| format!("seed {seed}, goal {goal}: {e}"))?;
                if !milestone_holds(&end, goal, None) {
                    return Err(format!("seed {seed}: plan for {goal} does not achieve it"));
                }
            }
            (None, Search::Exhausted) => tally.unreachable += 1,
            (p, o) => return Err(format!("seed {seed}, goal {goal}: planner {p:?} vs engine {o:?}")),
        }
        tally.compared += 1;
    }
    Ok(tally)
}
