use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::formula::{write_typed, Atom, Formula, Term, TypedVar};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateDecl {
    pub name: String,
    pub params: Vec<TypedVar>,
}

/// A delete-free STRIPS action with typed parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanningAction {
    pub name: String,
    pub params: Vec<TypedVar>,
    pub precondition: Formula,
    /// Add list; milestones are never retracted in the abstraction.
    pub effect: Vec<Atom>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub name: String,
    pub requirements: Vec<String>,
    pub types: Vec<String>,
    /// (constant, type)
    pub constants: Vec<(String, String)>,
    pub predicates: Vec<PredicateDecl>,
    pub actions: Vec<PlanningAction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub name: String,
    pub domain: String,
    /// (object, type)
    pub objects: Vec<(String, String)>,
    pub init: Vec<Atom>,
    pub goal: Formula,
}

impl PlanningAction {
    pub fn to_pddl(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "(:action {}", self.name);
        out.push_str("  :parameters (");
        write_typed(&mut out, &self.params);
        out.push_str(")\n  :precondition ");
        self.precondition.write_pddl(&mut out, 2);
        out.push_str("\n  :effect ");
        match self.effect.as_slice() {
            [single] => {
                let _ = write!(out, "{single}");
            }
            many => {
                out.push_str("(and");
                for a in many {
                    let _ = write!(out, " {a}");
                }
                out.push(')');
            }
        }
        out.push(')');
        out
    }
}

impl Domain {
    pub fn to_pddl(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "(define (domain {})", self.name);
        let _ = writeln!(out, "(:requirements {})", self.requirements.join(" "));
        let _ = writeln!(out, "(:types {} - object)", self.types.join(" "));
        if !self.constants.is_empty() {
            out.push_str("(:constants");
            for (c, t) in &self.constants {
                let _ = write!(out, " {c} - {t}");
            }
            out.push_str(")\n");
        }
        out.push_str("(:predicates");
        for p in &self.predicates {
            out.push_str("\n  (");
            out.push_str(&p.name);
            if !p.params.is_empty() {
                out.push(' ');
                write_typed(&mut out, &p.params);
            }
            out.push(')');
        }
        out.push_str(")\n");
        for a in &self.actions {
            out.push_str(&a.to_pddl());
            out.push('\n');
        }
        out.push_str(")\n");
        out
    }
}

impl Problem {
    pub fn to_pddl(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "(define (problem {})", self.name);
        let _ = writeln!(out, "(:domain {})", self.domain);
        out.push_str("(:objects");
        for (o, t) in &self.objects {
            let _ = write!(out, " {o} - {t}");
        }
        out.push_str(")\n(:init");
        for a in &self.init {
            let _ = write!(out, "\n  {a}");
        }
        out.push_str(")\n(:goal ");
        self.goal.write_pddl(&mut out, 1);
        out.push_str("))\n");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PddlError {
    #[error("unbalanced parentheses")]
    Unbalanced,
    #[error("unexpected {found} where {expected} was expected")]
    Unexpected { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Sym(String),
    List(Vec<Sexp>),
}

fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for line in text.lines() {
        let code = line.split(';').next().unwrap_or("");
        let mut cur = String::new();
        for ch in code.chars() {
            match ch {
                '(' | ')' => {
                    if !cur.is_empty() {
                        tokens.push(std::mem::take(&mut cur));
                    }
                    tokens.push(ch.to_string());
                }
                c if c.is_whitespace() => {
                    if !cur.is_empty() {
                        tokens.push(std::mem::take(&mut cur));
                    }
                }
                c => cur.push(c),
            }
        }
        if !cur.is_empty() {
            tokens.push(cur);
        }
    }
    tokens
}

fn parse_sexp(text: &str) -> Result<Sexp, PddlError> {
    let tokens = tokenize(text);
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    for t in tokens {
        match t.as_str() {
            "(" => stack.push(Vec::new()),
            ")" => {
                let done = stack.pop().ok_or(PddlError::Unbalanced)?;
                stack.last_mut().ok_or(PddlError::Unbalanced)?.push(Sexp::List(done));
            }
            _ => stack.last_mut().ok_or(PddlError::Unbalanced)?.push(Sexp::Sym(t)),
        }
    }
    if stack.len() != 1 {
        return Err(PddlError::Unbalanced);
    }
    let mut top = stack.pop().expect("root");
    if top.len() != 1 {
        return Err(unexpected("one top-level form", &format!("{} forms", top.len())));
    }
    Ok(top.pop().expect("one form"))
}

fn unexpected(expected: &str, found: &str) -> PddlError {
    PddlError::Unexpected {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

impl Sexp {
    fn sym(&self) -> Result<&str, PddlError> {
        match self {
            Sexp::Sym(s) => Ok(s),
            Sexp::List(_) => Err(unexpected("a symbol", "a list")),
        }
    }

    fn list(&self) -> Result<&[Sexp], PddlError> {
        match self {
            Sexp::List(l) => Ok(l),
            Sexp::Sym(s) => Err(unexpected("a list", s)),
        }
    }

    fn head(&self) -> Option<&str> {
        match self {
            Sexp::List(l) => match l.first() {
                Some(Sexp::Sym(s)) => Some(s),
                _ => None,
            },
            _ => None,
        }
    }
}

/// `a b - T c - U` into pairs; untyped trailing names get `object`.
fn typed_list(items: &[Sexp]) -> Result<Vec<(String, String)>, PddlError> {
    let mut out = Vec::new();
    let mut pending: Vec<String> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let s = items[i].sym()?;
        if s == "-" {
            let ty = items
                .get(i + 1)
                .ok_or_else(|| unexpected("a type", "end of list"))?
                .sym()?;
            for p in pending.drain(..) {
                out.push((p, ty.to_string()));
            }
            i += 2;
        } else {
            pending.push(s.to_string());
            i += 1;
        }
    }
    out.extend(pending.into_iter().map(|p| (p, "object".to_string())));
    Ok(out)
}

fn typed_vars(items: &[Sexp]) -> Result<Vec<TypedVar>, PddlError> {
    typed_list(items)?
        .into_iter()
        .map(|(n, t)| {
            let name = n.strip_prefix('?').ok_or_else(|| unexpected("a ?variable", &n))?;
            Ok(TypedVar::new(name, &t))
        })
        .collect()
}

fn term(s: &Sexp) -> Result<Term, PddlError> {
    let s = s.sym()?;
    Ok(match s.strip_prefix('?') {
        Some(v) => Term::Var(v.to_string()),
        None => Term::Const(s.to_string()),
    })
}

fn atom(items: &[Sexp]) -> Result<Atom, PddlError> {
    let (head, rest) = items.split_first().ok_or_else(|| unexpected("an atom", "()"))?;
    Ok(Atom {
        predicate: head.sym()?.to_string(),
        args: rest.iter().map(term).collect::<Result<_, _>>()?,
    })
}

fn formula(s: &Sexp) -> Result<Formula, PddlError> {
    let items = s.list()?;
    let Some(head) = s.head() else {
        return Err(unexpected("a formula", "an empty list"));
    };
    let rest = &items[1..];
    Ok(match head {
        "and" => Formula::And(rest.iter().map(formula).collect::<Result<_, _>>()?),
        "or" => Formula::Or(rest.iter().map(formula).collect::<Result<_, _>>()?),
        "not" => match rest {
            [inner] => Formula::Not(Box::new(formula(inner)?)),
            _ => return Err(unexpected("one operand of not", &format!("{}", rest.len()))),
        },
        "=" => match rest {
            [a, b] => Formula::Eq(term(a)?, term(b)?),
            _ => return Err(unexpected("two operands of =", &format!("{}", rest.len()))),
        },
        "exists" | "forall" => match rest {
            [vars, body] => {
                let vars = typed_vars(vars.list()?)?;
                let body = Box::new(formula(body)?);
                if head == "exists" {
                    Formula::Exists(vars, body)
                } else {
                    Formula::ForAll(vars, body)
                }
            }
            _ => return Err(unexpected("variables and a body", "something else")),
        },
        _ => Formula::Atom(atom(items)?),
    })
}

fn section<'a>(forms: &'a [Sexp], key: &str) -> Option<&'a [Sexp]> {
    forms
        .iter()
        .find(|f| f.head() == Some(key))
        .and_then(|f| f.list().ok())
        .map(|l| &l[1..])
}

fn action(items: &[Sexp]) -> Result<PlanningAction, PddlError> {
    let name = items
        .get(1)
        .ok_or_else(|| unexpected("an action name", "end"))?
        .sym()?
        .to_string();
    let mut params = Vec::new();
    let mut precondition = Formula::truth();
    let mut effect = Vec::new();
    let mut i = 2;
    while i + 1 < items.len() {
        let key = items[i].sym()?;
        let value = &items[i + 1];
        match key {
            ":parameters" => params = typed_vars(value.list()?)?,
            ":precondition" => precondition = formula(value)?,
            ":effect" => {
                effect = if value.head() == Some("and") {
                    value.list()?[1..]
                        .iter()
                        .map(|a| atom(a.list()?))
                        .collect::<Result<_, _>>()?
                } else {
                    vec![atom(value.list()?)?]
                }
            }
            other => return Err(unexpected("an action section", other)),
        }
        i += 2;
    }
    Ok(PlanningAction {
        name,
        params,
        precondition,
        effect,
    })
}

pub fn parse_domain(text: &str) -> Result<Domain, PddlError> {
    let root = parse_sexp(text)?;
    let forms = root.list()?;
    if root.head() != Some("define") {
        return Err(unexpected("define", "another form"));
    }
    let name = section(forms, "domain")
        .and_then(|d| d.first())
        .ok_or_else(|| unexpected("(domain name)", "nothing"))?
        .sym()?
        .to_string();
    let requirements = section(forms, ":requirements")
        .unwrap_or(&[])
        .iter()
        .map(|s| s.sym().map(str::to_string))
        .collect::<Result<_, _>>()?;
    let types = typed_list(section(forms, ":types").unwrap_or(&[]))?
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let constants = typed_list(section(forms, ":constants").unwrap_or(&[]))?;
    let predicates = section(forms, ":predicates")
        .unwrap_or(&[])
        .iter()
        .map(|p| {
            let l = p.list()?;
            let (head, rest) = l.split_first().ok_or_else(|| unexpected("a predicate", "()"))?;
            Ok(PredicateDecl {
                name: head.sym()?.to_string(),
                params: typed_vars(rest)?,
            })
        })
        .collect::<Result<_, PddlError>>()?;
    let actions = forms
        .iter()
        .filter(|f| f.head() == Some(":action"))
        .map(|f| action(f.list()?))
        .collect::<Result<_, _>>()?;
    Ok(Domain {
        name,
        requirements,
        types,
        constants,
        predicates,
        actions,
    })
}

pub fn parse_problem(text: &str) -> Result<Problem, PddlError> {
    let root = parse_sexp(text)?;
    let forms = root.list()?;
    let first = |key: &str| -> Result<String, PddlError> {
        Ok(section(forms, key)
            .and_then(|d| d.first())
            .ok_or_else(|| unexpected(key, "nothing"))?
            .sym()?
            .to_string())
    };
    Ok(Problem {
        name: first("problem")?,
        domain: first(":domain")?,
        objects: typed_list(section(forms, ":objects").unwrap_or(&[]))?,
        init: section(forms, ":init")
            .unwrap_or(&[])
            .iter()
            .map(|a| atom(a.list()?))
            .collect::<Result<_, _>>()?,
        goal: formula(
            section(forms, ":goal")
                .and_then(|g| g.first())
                .ok_or_else(|| unexpected("a goal", "nothing"))?,
        )?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Domain {
        Domain {
            name: "d".into(),
            requirements: vec![":strips".into(), ":typing".into()],
            types: vec!["A".into(), "B".into()],
            constants: vec![("k".into(), "B".into())],
            predicates: vec![PredicateDecl {
                name: "p".into(),
                params: vec![TypedVar::new("x", "A")],
            }],
            actions: vec![PlanningAction {
                name: "act".into(),
                params: vec![TypedVar::new("x", "A")],
                precondition: Formula::and([
                    Formula::atom("p", vec![Term::var("x")]),
                    Formula::Exists(
                        vec![TypedVar::new("y", "B")],
                        Box::new(Formula::Or(vec![
                            Formula::Eq(Term::var("y"), Term::Const("k".into())),
                            Formula::Not(Box::new(Formula::atom("q", vec![]))),
                        ])),
                    ),
                ]),
                effect: vec![Atom::new("q", vec![])],
            }],
        }
    }

    #[test]
    fn domain_round_trips() {
        let d = sample();
        assert_eq!(parse_domain(&d.to_pddl()).unwrap(), d);
        let empty = Domain { actions: vec![], ..d };
        assert_eq!(parse_domain(&empty.to_pddl()).unwrap(), empty);
    }

    #[test]
    fn problem_round_trips_and_comments_are_skipped() {
        let p = Problem {
            name: "p".into(),
            domain: "d".into(),
            objects: vec![("a1".into(), "A".into())],
            init: vec![Atom::new("p", vec![Term::Const("a1".into())])],
            goal: Formula::atom("q", vec![]),
        };
        let text = p.to_pddl().replace("(:init", "; a comment\n(:init ; trailing");
        assert_eq!(parse_problem(&text).unwrap(), p);
    }

    #[test]
    fn malformed_text_is_rejected() {
        assert_eq!(parse_domain("(define (domain d)").unwrap_err(), PddlError::Unbalanced);
        assert!(parse_domain("(define (domain d)))").is_err());
        assert!(parse_problem("(define (problem p) (:domain d) (:goal (not)))").is_err());
    }
}
