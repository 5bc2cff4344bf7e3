use std::fmt::{self, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Var(name.trim_start_matches('?').to_string())
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "?{v}"),
            Term::Const(c) => f.write_str(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: &str, args: Vec<Term>) -> Self {
        Atom {
            predicate: predicate.to_string(),
            args,
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

/// Typed variable declaration `?name - Type`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TypedVar {
    pub name: String,
    pub ty: String,
}

impl TypedVar {
    pub fn new(name: &str, ty: &str) -> Self {
        TypedVar {
            name: name.to_string(),
            ty: ty.to_string(),
        }
    }
}

/// Precondition language: the STRIPS subset plus the quantifiers and connectives the
/// workflow guards need. `And(vec![])` is the canonical truth.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formula {
    Atom(Atom),
    Eq(Term, Term),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Exists(Vec<TypedVar>, Box<Formula>),
    ForAll(Vec<TypedVar>, Box<Formula>),
}

impl Formula {
    pub fn truth() -> Self {
        Formula::And(Vec::new())
    }

    pub fn is_truth(&self) -> bool {
        matches!(self, Formula::And(v) if v.is_empty())
    }

    pub fn atom(predicate: &str, args: Vec<Term>) -> Self {
        Formula::Atom(Atom::new(predicate, args))
    }

    /// Conjunction with nested conjunctions flattened and truths removed.
    pub fn and(parts: impl IntoIterator<Item = Formula>) -> Self {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Formula::And(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        if out.len() == 1 {
            return out.pop().expect("one element");
        }
        Formula::And(out)
    }

    /// Disjunction; any true disjunct makes the whole formula true.
    pub fn or(parts: impl IntoIterator<Item = Formula>) -> Self {
        let mut out = Vec::new();
        for p in parts {
            if p.is_truth() {
                return Formula::truth();
            }
            match p {
                Formula::Or(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        if out.len() == 1 {
            return out.pop().expect("one element");
        }
        Formula::Or(out)
    }

    pub fn write_pddl(&self, out: &mut String, indent: usize) {
        let pad = |out: &mut String, n: usize| out.push_str(&"  ".repeat(n));
        match self {
            Formula::Atom(a) => {
                let _ = write!(out, "{a}");
            }
            Formula::Eq(a, b) => {
                let _ = write!(out, "(= {a} {b})");
            }
            Formula::Not(inner) => {
                out.push_str("(not ");
                inner.write_pddl(out, indent);
                out.push(')');
            }
            Formula::And(parts) | Formula::Or(parts) => {
                let op = if matches!(self, Formula::And(_)) { "and" } else { "or" };
                if parts.is_empty() {
                    let _ = write!(out, "({op})");
                    return;
                }
                let _ = write!(out, "({op}");
                for p in parts {
                    out.push('\n');
                    pad(out, indent + 1);
                    p.write_pddl(out, indent + 1);
                }
                out.push(')');
            }
            Formula::Exists(vars, body) | Formula::ForAll(vars, body) => {
                let op = if matches!(self, Formula::Exists(..)) {
                    "exists"
                } else {
                    "forall"
                };
                let _ = write!(out, "({op} (");
                write_typed(out, vars);
                out.push_str(")\n");
                pad(out, indent + 1);
                body.write_pddl(out, indent + 1);
                out.push(')');
            }
        }
    }

    pub fn to_pddl(&self) -> String {
        let mut s = String::new();
        self.write_pddl(&mut s, 0);
        s
    }
}

pub(crate) fn write_typed(out: &mut String, vars: &[TypedVar]) {
    for (i, v) in vars.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "?{} - {}", v.name, v.ty);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn and_flattens_and_or_absorbs_truth() {
        let a = Formula::atom("p", vec![Term::var("x")]);
        assert_eq!(Formula::and([Formula::truth(), a.clone()]), a);
        assert!(Formula::and([Formula::truth(), Formula::truth()]).is_truth());
        assert!(Formula::or([a.clone(), Formula::truth()]).is_truth());
        assert_eq!(
            Formula::and([Formula::and([a.clone(), a.clone()]), a.clone()]),
            Formula::And(vec![a.clone(), a.clone(), a])
        );
    }
}
