use std::fmt;

use serde::{Deserialize, Serialize};

use super::value::AttrValue;

/// Declarative lifecycles and information models for every artifact type of a workflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowDefinition {
    pub name: String,
    pub version: String,
    pub artifact_types: Vec<ArtifactTypeDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactTypeDef {
    pub name: String,
    /// Short name used for planning variables and predicates, e.g. `smo`.
    pub abbreviation: String,
    /// Type name used in exported planning domains, e.g. `SModel`.
    pub planning_type: String,
    #[serde(default)]
    pub attributes: Vec<AttributeDef>,
    #[serde(default)]
    pub links: Vec<LinkDef>,
    #[serde(default)]
    pub stages: Vec<StageDefinition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub kind: AttrKind,
    /// Attributes that must already be set before this one may be written.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub requires: Vec<String>,
    /// Whether the value is exposed to the planner as a `(name ?a value)` fact.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub predicate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrKind {
    Text,
    Number,
    Quantity,
    Blob,
    /// Text restricted to a closed set of values.
    Enum(Vec<String>),
    /// Either text or a blob reference (mixed "Text/Data" rows).
    TextOrBlob,
    /// Any typed value.
    Any,
}

impl AttrKind {
    pub fn accepts(&self, value: &AttrValue) -> bool {
        match (self, value) {
            (AttrKind::Any, _) => true,
            (AttrKind::Text, AttrValue::Text(_)) => true,
            (AttrKind::Number, AttrValue::Number(_)) => true,
            (AttrKind::Quantity, AttrValue::Quantity { .. } | AttrValue::Number(_)) => true,
            (AttrKind::Blob, AttrValue::Blob(_)) => true,
            (AttrKind::Enum(values), AttrValue::Text(t)) => values.iter().any(|v| v == t),
            (AttrKind::TextOrBlob, AttrValue::Text(_) | AttrValue::Blob(_)) => true,
            _ => false,
        }
    }
}

/// Navigation step from one artifact to related artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nav {
    /// Targets of the named link held by the current artifact.
    Forward(String),
    /// Artifacts holding the named link to the current artifact.
    Backward(String),
}

impl Nav {
    pub fn link(&self) -> &str {
        match self {
            Nav::Forward(l) | Nav::Backward(l) => l,
        }
    }
}

impl fmt::Display for Nav {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nav::Forward(l) => write!(f, "{l}"),
            Nav::Backward(l) => write!(f, "<-{l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDef {
    pub name: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<usize>,
    /// The link may not exist while the source attribute holds this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forbidden_when: Option<AttrCondition>,
    /// When non-empty, the target must be reachable from the source along this path.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scope: Vec<Nav>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrCondition {
    pub attribute: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDefinition {
    pub name: String,
    /// Planning action name, e.g. `validate-smo`.
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub guard: GuardExpression,
    pub milestones: Vec<MilestoneDefinition>,
    /// Leaving requires a modeler action rather than an automatic outcome.
    #[serde(default = "default_true")]
    pub interactive: bool,
    /// Attribute and link names this stage may write while open.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub writes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creates: Option<CreateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeSpec>,
}

fn default_true() -> bool {
    true
}

impl StageDefinition {
    pub fn is_outcome_stage(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn writes(&self, name: &str) -> bool {
        self.writes.iter().any(|w| w == name)
    }

    pub fn milestone(&self, name: &str) -> Option<&MilestoneDefinition> {
        self.milestones.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSpec {
    pub artifact_type: String,
    /// Link from the executing artifact to the created one.
    pub link: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    /// Result attribute that carries a computed outcome, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilestoneDefinition {
    pub name: String,
    /// Outcome label for outcome stages (`succeed`, `fail`, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    pub achieve: GuardExpression,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sentries: Vec<Sentry>,
}

/// Event pattern that retracts an achieved milestone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentry {
    pub on: SentryTrigger,
    /// Where the triggering occurrence happens relative to the milestone's artifact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via: Option<Nav>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentryTrigger {
    AttributeChanged { attribute: Option<String> },
    LinkAdded { link: Option<String> },
    StageEntered { stage: String },
    MilestoneAchieved { milestone: String },
    MilestoneInvalidated { milestone: String },
}

/// Predicate over the study state, evaluated relative to a subject artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardExpression {
    True,
    MilestoneAchieved(String),
    AttributeSet(String),
    AttributeEquals {
        attribute: String,
        value: String,
    },
    LinkedExists {
        via: Nav,
        condition: Box<GuardExpression>,
    },
    ForAllLinked {
        via: Nav,
        condition: Box<GuardExpression>,
    },
    /// The attribute passes the toolbox syntax check (achieve conditions only).
    SyntaxValid(String),
    /// An artifact was created during the current stage execution (achieve conditions only).
    Created,
    And(Vec<GuardExpression>),
    Or(Vec<GuardExpression>),
    Not(Box<GuardExpression>),
}

impl GuardExpression {
    pub fn milestone(name: &str) -> Self {
        GuardExpression::MilestoneAchieved(name.to_string())
    }

    pub fn attr(name: &str) -> Self {
        GuardExpression::AttributeSet(name.to_string())
    }

    pub fn role_equals(role: &str) -> Self {
        GuardExpression::AttributeEquals {
            attribute: "role".to_string(),
            value: role.to_string(),
        }
    }

    pub fn linked_exists(via: Nav, condition: GuardExpression) -> Self {
        GuardExpression::LinkedExists {
            via,
            condition: Box::new(condition),
        }
    }

    pub fn for_all_linked(via: Nav, condition: GuardExpression) -> Self {
        GuardExpression::ForAllLinked {
            via,
            condition: Box::new(condition),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: GuardExpression) -> Self {
        GuardExpression::Not(Box::new(inner))
    }

    pub fn and(parts: impl IntoIterator<Item = GuardExpression>) -> Self {
        GuardExpression::And(parts.into_iter().collect())
    }

    pub fn or(parts: impl IntoIterator<Item = GuardExpression>) -> Self {
        GuardExpression::Or(parts.into_iter().collect())
    }

    /// Visit this expression and every nested sub-expression.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a GuardExpression)) {
        f(self);
        match self {
            GuardExpression::LinkedExists { condition, .. } | GuardExpression::ForAllLinked { condition, .. } => {
                condition.walk(f)
            }
            GuardExpression::And(parts) | GuardExpression::Or(parts) => parts.iter().for_each(|p| p.walk(f)),
            GuardExpression::Not(inner) => inner.walk(f),
            _ => {}
        }
    }
}

impl fmt::Display for GuardExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn join(f: &mut fmt::Formatter<'_>, op: &str, parts: &[GuardExpression]) -> fmt::Result {
            write!(f, "(")?;
            for (i, p) in parts.iter().enumerate() {
                if i > 0 {
                    write!(f, " {op} ")?;
                }
                write!(f, "{p}")?;
            }
            write!(f, ")")
        }
        match self {
            GuardExpression::True => write!(f, "true"),
            GuardExpression::MilestoneAchieved(m) => write!(f, "achieved({m})"),
            GuardExpression::AttributeSet(a) => write!(f, "set({a})"),
            GuardExpression::AttributeEquals { attribute, value } => {
                write!(f, "{attribute} = {value}")
            }
            GuardExpression::LinkedExists { via, condition } => {
                write!(f, "exists {via}: {condition}")
            }
            GuardExpression::ForAllLinked { via, condition } => {
                write!(f, "forall {via}: {condition}")
            }
            GuardExpression::SyntaxValid(a) => write!(f, "valid-syntax({a})"),
            GuardExpression::Created => write!(f, "created"),
            GuardExpression::And(parts) => join(f, "and", parts),
            GuardExpression::Or(parts) => join(f, "or", parts),
            GuardExpression::Not(inner) => write!(f, "not {inner}"),
        }
    }
}

impl WorkflowDefinition {
    pub fn artifact_type(&self, name: &str) -> Option<&ArtifactTypeDef> {
        self.artifact_types.iter().find(|t| t.name == name)
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.artifact_types.iter().position(|t| t.name == name)
    }

    /// Type holding a link named `link` whose target is `target`.
    pub fn link_source(&self, link: &str, target: &str) -> Option<&ArtifactTypeDef> {
        self.artifact_types
            .iter()
            .find(|t| t.links.iter().any(|l| l.name == link && l.target == target))
    }

    /// Resolve the artifact type reached from `from` along `nav`.
    pub fn nav_target(&self, from: &str, nav: &Nav) -> Option<&ArtifactTypeDef> {
        match nav {
            Nav::Forward(link) => {
                let ty = self.artifact_type(from)?;
                let def = ty.link(link)?;
                self.artifact_type(&def.target)
            }
            Nav::Backward(link) => self.link_source(link, from),
        }
    }

    /// Whether an artifact type is created by some stage (and thus never created freely).
    pub fn creating_stage_for(&self, artifact_type: &str) -> Option<(&ArtifactTypeDef, &StageDefinition)> {
        self.artifact_types.iter().find_map(|t| {
            t.stages
                .iter()
                .find(|s| s.creates.as_ref().is_some_and(|c| c.artifact_type == artifact_type))
                .map(|s| (t, s))
        })
    }

    /// Every stage, in definition order, with its owning type.
    pub fn stages(&self) -> impl Iterator<Item = (&ArtifactTypeDef, &StageDefinition)> {
        self.artifact_types
            .iter()
            .flat_map(|t| t.stages.iter().map(move |s| (t, s)))
    }
}

impl ArtifactTypeDef {
    pub fn stage(&self, name: &str) -> Option<&StageDefinition> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn stage_index(&self, name: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.name == name)
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeDef> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn link(&self, name: &str) -> Option<&LinkDef> {
        self.links.iter().find(|l| l.name == name)
    }

    /// Milestone definition and the stage that declares it.
    pub fn milestone(&self, name: &str) -> Option<(&StageDefinition, &MilestoneDefinition)> {
        self.stages.iter().find_map(|s| s.milestone(name).map(|m| (s, m)))
    }

    /// Stage names from the root down to `stage`.
    pub fn stage_path(&self, stage: &str) -> Vec<String> {
        let mut path = Vec::new();
        let mut current = self.stage(stage);
        while let Some(s) = current {
            if path.contains(&s.name) {
                break;
            }
            path.push(s.name.clone());
            current = s.parent.as_deref().and_then(|p| self.stage(p));
        }
        path.reverse();
        path
    }

    pub fn children<'a>(&'a self, parent: Option<&'a str>) -> impl Iterator<Item = &'a StageDefinition> {
        self.stages.iter().filter(move |s| s.parent.as_deref() == parent)
    }
}
