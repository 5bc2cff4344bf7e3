use std::fmt;

use serde::{Deserialize, Serialize};

/// Reference to an immutable blob held by a blob store.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlobRef {
    /// Hex-encoded SHA-256 of the content.
    pub digest: String,
    pub name: String,
    pub media_type: String,
    pub size: u64,
}

/// Typed value stored in an artifact's information model.
///
/// Units are carried as plain strings and never converted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrValue {
    Text(String),
    Number(f64),
    Quantity { value: f64, unit: String },
    Blob(BlobRef),
    References(Vec<String>),
}

impl AttrValue {
    pub fn text(s: impl Into<String>) -> Self {
        AttrValue::Text(s.into())
    }

    pub fn quantity(value: f64, unit: impl Into<String>) -> Self {
        AttrValue::Quantity {
            value,
            unit: unit.into(),
        }
    }

    /// A value counts as set when it carries content; empty text does not.
    pub fn is_present(&self) -> bool {
        match self {
            AttrValue::Text(s) => !s.trim().is_empty(),
            AttrValue::References(r) => !r.is_empty(),
            AttrValue::Number(v) => v.is_finite(),
            AttrValue::Quantity { value, .. } => value.is_finite(),
            AttrValue::Blob(_) => true,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            AttrValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            AttrValue::Number(v) => Some(*v),
            AttrValue::Quantity { value, .. } => Some(*value),
            AttrValue::Text(s) => s.trim().parse().ok(),
            _ => None,
        }
    }

    pub fn as_blob(&self) -> Option<&BlobRef> {
        match self {
            AttrValue::Blob(b) => Some(b),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            AttrValue::Text(_) => "text",
            AttrValue::Number(_) => "number",
            AttrValue::Quantity { .. } => "quantity",
            AttrValue::Blob(_) => "blob",
            AttrValue::References(_) => "references",
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Text(s) => f.write_str(s),
            AttrValue::Number(v) => write!(f, "{v}"),
            AttrValue::Quantity { value, unit } => write!(f, "{value} {unit}"),
            AttrValue::Blob(b) => write!(f, "{} ({})", b.name, &b.digest[..b.digest.len().min(12)]),
            AttrValue::References(r) => write!(f, "{{{}}}", r.join(", ")),
        }
    }
}
