use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::formula::{Atom, Formula, Term, TypedVar};
use super::pddl::{Domain, Problem};

/// Upper bound on expanded fact sets before the search gives up.
pub const DEFAULT_NODE_LIMIT: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum PlanError {
    #[error("no sequence of actions achieves the goal")]
    Unreachable,
    #[error("search stopped after {0} states")]
    SearchLimit(usize),
    #[error("unknown object {0}")]
    UnknownObject(String),
    #[error("unbound variable ?{0}")]
    Unbound(String),
}

/// Action instance with its parameters bound to object names.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundStep {
    pub action: String,
    pub args: Vec<String>,
}

impl std::fmt::Display for GroundStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}", self.action)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Ground {
    Const(bool),
    Fact(usize),
    Not(Box<Ground>),
    And(Vec<Ground>),
    Or(Vec<Ground>),
}

impl Ground {
    fn and(parts: Vec<Ground>) -> Ground {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Ground::Const(true) => {}
                Ground::Const(false) => return Ground::Const(false),
                Ground::And(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Ground::Const(true),
            1 => out.pop().expect("one"),
            _ => Ground::And(out),
        }
    }

    fn or(parts: Vec<Ground>) -> Ground {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Ground::Const(false) => {}
                Ground::Const(true) => return Ground::Const(true),
                Ground::Or(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Ground::Const(false),
            1 => out.pop().expect("one"),
            _ => Ground::Or(out),
        }
    }

    fn not(inner: Ground) -> Ground {
        match inner {
            Ground::Const(b) => Ground::Const(!b),
            Ground::Not(g) => *g,
            other => Ground::Not(Box::new(other)),
        }
    }

    fn holds(&self, s: &Bits) -> bool {
        match self {
            Ground::Const(b) => *b,
            Ground::Fact(i) => s.get(*i),
            Ground::Not(g) => !g.holds(s),
            Ground::And(parts) => parts.iter().all(|p| p.holds(s)),
            Ground::Or(parts) => parts.iter().any(|p| p.holds(s)),
        }
    }

    fn facts(&self, out: &mut Vec<usize>) {
        match self {
            Ground::Const(_) => {}
            Ground::Fact(i) => out.push(*i),
            Ground::Not(g) => g.facts(out),
            Ground::And(parts) | Ground::Or(parts) => parts.iter().for_each(|p| p.facts(out)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64).max(1)])
    }

    fn get(&self, i: usize) -> bool {
        self.0.get(i / 64).is_some_and(|w| w & (1 << (i % 64)) != 0)
    }

    fn set(&mut self, i: usize) {
        if i / 64 >= self.0.len() {
            self.0.resize(i / 64 + 1, 0);
        }
        self.0[i / 64] |= 1 << (i % 64);
    }
}

struct GroundAction {
    step: GroundStep,
    pre: Ground,
    add: Vec<usize>,
}

/// A problem grounded over its objects: facts are interned and quantifiers expanded.
pub struct Grounded {
    facts: Vec<(String, Vec<usize>)>,
    index: HashMap<(String, Vec<usize>), usize>,
    objects: Vec<(String, String)>,
    init: Bits,
    goal: Ground,
    actions: Vec<GroundAction>,
}

impl Grounded {
    fn intern(&mut self, predicate: &str, args: Vec<usize>) -> usize {
        let key = (predicate.to_string(), args);
        if let Some(i) = self.index.get(&key) {
            return *i;
        }
        let i = self.facts.len();
        self.facts.push(key.clone());
        self.index.insert(key, i);
        i
    }

    fn of_type(&self, ty: &str) -> Vec<usize> {
        (0..self.objects.len())
            .filter(|&i| ty == "object" || self.objects[i].1 == ty)
            .collect()
    }

    fn resolve(&self, t: &Term, env: &[(String, usize)]) -> Result<usize, PlanError> {
        match t {
            Term::Var(v) => env
                .iter()
                .rev()
                .find(|(n, _)| n == v)
                .map(|(_, o)| *o)
                .ok_or_else(|| PlanError::Unbound(v.clone())),
            Term::Const(c) => self
                .objects
                .iter()
                .position(|(o, _)| o == c)
                .ok_or_else(|| PlanError::UnknownObject(c.clone())),
        }
    }

    fn ground_atom(&mut self, a: &Atom, env: &[(String, usize)]) -> Result<usize, PlanError> {
        let args = a
            .args
            .iter()
            .map(|t| self.resolve(t, env))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.intern(&a.predicate, args))
    }

    fn ground(&mut self, f: &Formula, env: &mut Vec<(String, usize)>) -> Result<Ground, PlanError> {
        Ok(match f {
            Formula::Atom(a) => Ground::Fact(self.ground_atom(a, env)?),
            Formula::Eq(a, b) => Ground::Const(self.resolve(a, env)? == self.resolve(b, env)?),
            Formula::Not(inner) => Ground::not(self.ground(inner, env)?),
            Formula::And(parts) => {
                let mut out = Vec::new();
                for p in parts {
                    out.push(self.ground(p, env)?);
                }
                Ground::and(out)
            }
            Formula::Or(parts) => {
                let mut out = Vec::new();
                for p in parts {
                    out.push(self.ground(p, env)?);
                }
                Ground::or(out)
            }
            Formula::Exists(vars, body) | Formula::ForAll(vars, body) => {
                let exists = matches!(f, Formula::Exists(..));
                let mut branches = Vec::new();
                for binding in self.bindings(vars) {
                    let n = env.len();
                    env.extend(vars.iter().map(|v| v.name.clone()).zip(binding));
                    let g = self.ground(body, env);
                    env.truncate(n);
                    branches.push(g?);
                }
                if exists {
                    Ground::or(branches)
                } else {
                    Ground::and(branches)
                }
            }
        })
    }

    /// Every assignment of objects to `vars`, first variable slowest.
    fn bindings(&self, vars: &[TypedVar]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for v in vars {
            let objs = self.of_type(&v.ty);
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    objs.iter().map(move |o| {
                        let mut p = prefix.clone();
                        p.push(*o);
                        p
                    })
                })
                .collect();
        }
        out
    }

    pub fn new(domain: &Domain, problem: &Problem) -> Result<Self, PlanError> {
        let mut objects = problem.objects.clone();
        for c in &domain.constants {
            if !objects.iter().any(|(o, _)| o == &c.0) {
                objects.push(c.clone());
            }
        }
        let mut g = Grounded {
            facts: Vec::new(),
            index: HashMap::new(),
            objects,
            init: Bits::new(0),
            goal: Ground::Const(true),
            actions: Vec::new(),
        };
        let mut init = Vec::new();
        for a in &problem.init {
            init.push(g.ground_atom(a, &[])?);
        }
        g.goal = g.ground(&problem.goal, &mut Vec::new())?;
        for action in &domain.actions {
            for binding in g.bindings(&action.params) {
                let mut env: Vec<(String, usize)> = action
                    .params
                    .iter()
                    .map(|p| p.name.clone())
                    .zip(binding.iter().copied())
                    .collect();
                let pre = g.ground(&action.precondition, &mut env)?;
                if pre == Ground::Const(false) {
                    continue;
                }
                let mut add = Vec::new();
                for e in &action.effect {
                    add.push(g.ground_atom(e, &env)?);
                }
                g.actions.push(GroundAction {
                    step: GroundStep {
                        action: action.name.clone(),
                        args: binding.iter().map(|&o| g.objects[o].0.clone()).collect(),
                    },
                    pre,
                    add,
                });
            }
        }
        g.init = Bits::new(g.facts.len());
        for i in init {
            g.init.set(i);
        }
        Ok(g)
    }

    /// Actions whose effects can matter for the goal, found by regression over facts.
    fn relevant(&self) -> Vec<usize> {
        let mut wanted = vec![false; self.facts.len()];
        let mut stack = Vec::new();
        self.goal.facts(&mut stack);
        let mut chosen = vec![false; self.actions.len()];
        let mut by_fact: Vec<Vec<usize>> = vec![Vec::new(); self.facts.len()];
        for (i, a) in self.actions.iter().enumerate() {
            for &f in &a.add {
                by_fact[f].push(i);
            }
        }
        while let Some(f) = stack.pop() {
            if std::mem::replace(&mut wanted[f], true) {
                continue;
            }
            for &ai in &by_fact[f] {
                if !std::mem::replace(&mut chosen[ai], true) {
                    self.actions[ai].pre.facts(&mut stack);
                }
            }
        }
        (0..self.actions.len()).filter(|&i| chosen[i]).collect()
    }

    /// Breadth-first search over fact sets. Children follow action definition order, so the
    /// first plan found is the lexicographically smallest among the shortest.
    pub fn search(&self, node_limit: usize) -> Result<Vec<GroundStep>, PlanError> {
        if self.goal.holds(&self.init) {
            return Ok(Vec::new());
        }
        let actions = self.relevant();
        let mut nodes: Vec<(Bits, usize, usize)> = vec![(self.init.clone(), usize::MAX, usize::MAX)];
        let mut seen: HashSet<Bits> = HashSet::from([self.init.clone()]);
        let mut queue = VecDeque::from([0usize]);
        while let Some(n) = queue.pop_front() {
            let state = nodes[n].0.clone();
            for &ai in &actions {
                let a = &self.actions[ai];
                if a.add.iter().all(|&f| state.get(f)) || !a.pre.holds(&state) {
                    continue;
                }
                let mut next = state.clone();
                for &f in &a.add {
                    next.set(f);
                }
                if !seen.insert(next.clone()) {
                    continue;
                }
                let done = self.goal.holds(&next);
                nodes.push((next, n, ai));
                let id = nodes.len() - 1;
                if done {
                    return Ok(self.unwind(&nodes, id));
                }
                if nodes.len() >= node_limit {
                    return Err(PlanError::SearchLimit(nodes.len()));
                }
                queue.push_back(id);
            }
        }
        Err(PlanError::Unreachable)
    }

    fn unwind(&self, nodes: &[(Bits, usize, usize)], mut id: usize) -> Vec<GroundStep> {
        let mut out = Vec::new();
        while nodes[id].1 != usize::MAX {
            out.push(self.actions[nodes[id].2].step.clone());
            id = nodes[id].1;
        }
        out.reverse();
        out
    }

    /// Apply `steps` to the initial facts, checking each precondition.
    pub fn simulate(&self, steps: &[GroundStep]) -> Result<bool, GroundStep> {
        let mut state = self.init.clone();
        for s in steps {
            let a = self
                .actions
                .iter()
                .find(|a| &a.step == s)
                .filter(|a| a.pre.holds(&state))
                .ok_or_else(|| s.clone())?;
            for &f in &a.add {
                state.set(f);
            }
        }
        Ok(self.goal.holds(&state))
    }

    pub fn ground_action_count(&self) -> usize {
        self.actions.len()
    }
}

pub fn solve(domain: &Domain, problem: &Problem) -> Result<Vec<GroundStep>, PlanError> {
    Grounded::new(domain, problem)?.search(DEFAULT_NODE_LIMIT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::pddl::PlanningAction;

    fn c(s: &str) -> Term {
        Term::Const(s.into())
    }

    fn chain_domain() -> Domain {
        let x = || vec![TypedVar::new("x", "T")];
        let act = |name: &str, pre: Formula, eff: &str| PlanningAction {
            name: name.into(),
            params: x(),
            precondition: pre,
            effect: vec![Atom::new(eff, vec![Term::var("x")])],
        };
        Domain {
            name: "chain".into(),
            requirements: vec![],
            types: vec!["T".into()],
            constants: vec![],
            predicates: vec![],
            actions: vec![
                act("b", Formula::atom("a", vec![Term::var("x")]), "b"),
                act("a", Formula::truth(), "a"),
                act("shortcut", Formula::atom("a", vec![Term::var("x")]), "c"),
                act("c", Formula::atom("b", vec![Term::var("x")]), "c"),
                act("noise", Formula::truth(), "n"),
            ],
        }
    }

    fn problem(goal: Formula) -> Problem {
        Problem {
            name: "p".into(),
            domain: "chain".into(),
            objects: vec![("o1".into(), "T".into()), ("o2".into(), "T".into())],
            init: vec![],
            goal,
        }
    }

    #[test]
    fn shortest_plan_is_found() {
        let d = chain_domain();
        let plan = solve(&d, &problem(Formula::atom("c", vec![c("o2")]))).unwrap();
        let names: Vec<_> = plan.iter().map(|s| s.to_string()).collect();
        assert_eq!(names, ["(a o2)", "(shortcut o2)"]);
    }

    #[test]
    fn satisfied_goal_gives_empty_plan_and_missing_fact_is_unreachable() {
        let d = chain_domain();
        let mut p = problem(Formula::atom("a", vec![c("o1")]));
        p.init = vec![Atom::new("a", vec![c("o1")])];
        assert_eq!(solve(&d, &p).unwrap(), vec![]);
        let p = problem(Formula::atom("never", vec![c("o1")]));
        assert_eq!(solve(&d, &p), Err(PlanError::Unreachable));
    }

    #[test]
    fn ties_follow_object_then_action_order() {
        let d = chain_domain();
        let goal = Formula::Exists(
            vec![TypedVar::new("y", "T")],
            Box::new(Formula::atom("a", vec![Term::var("y")])),
        );
        let plan = solve(&d, &problem(goal)).unwrap();
        assert_eq!(
            plan,
            vec![GroundStep {
                action: "a".into(),
                args: vec!["o1".into()]
            }]
        );
    }

    #[test]
    fn simulate_checks_preconditions() {
        let d = chain_domain();
        let g = Grounded::new(&d, &problem(Formula::atom("b", vec![c("o1")]))).unwrap();
        let step = |a: &str| GroundStep {
            action: a.into(),
            args: vec!["o1".into()],
        };
        assert_eq!(g.simulate(&[step("a"), step("b")]), Ok(true));
        assert_eq!(g.simulate(&[step("b")]), Err(step("b")));
    }
}
