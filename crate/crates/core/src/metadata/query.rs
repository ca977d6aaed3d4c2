use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::tree::{for_each_string, DotPath};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "value", rename_all = "snake_case")]
pub enum Predicate {
    Equals(Value),
    /// Substring for string nodes, element membership for lists.
    Contains(Value),
    Exists,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFilter {
    pub path: DotPath,
    pub predicate: Predicate,
}

impl PathFilter {
    pub fn equals(path: &str, value: impl Into<Value>) -> Result<Self, String> {
        Ok(Self {
            path: DotPath::parse(path).map_err(|e| e.to_string())?,
            predicate: Predicate::Equals(value.into()),
        })
    }

    pub fn contains(path: &str, value: impl Into<Value>) -> Result<Self, String> {
        Ok(Self {
            path: DotPath::parse(path).map_err(|e| e.to_string())?,
            predicate: Predicate::Contains(value.into()),
        })
    }

    pub fn exists(path: &str) -> Result<Self, String> {
        Ok(Self {
            path: DotPath::parse(path).map_err(|e| e.to_string())?,
            predicate: Predicate::Exists,
        })
    }

    pub fn matches(&self, payload: &Value) -> bool {
        let node = self.path.get(payload);
        match (&self.predicate, node) {
            (Predicate::Exists, Some(v)) => !v.is_null(),
            (Predicate::Equals(want), Some(v)) => v == want,
            (Predicate::Contains(Value::String(needle)), Some(Value::String(hay))) => {
                hay.contains(needle.as_str())
            }
            (Predicate::Contains(want), Some(Value::Array(items))) => items.contains(want),
            _ => false,
        }
    }
}

/// Query-string form: `path:exists`, `path:eq:VALUE`, `path:contains:VALUE`.
/// VALUE is read as JSON when it parses, otherwise as a bare string.
impl FromStr for PathFilter {
    type Err = String;

    fn from_str(raw: &str) -> Result<Self, Self::Err> {
        let (path, rest) = raw
            .split_once(':')
            .ok_or_else(|| format!("filter {raw:?} has no predicate"))?;
        let path = DotPath::parse(path).map_err(|e| e.to_string())?;
        let value = |v: &str| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.into()));
        let predicate = match rest.split_once(':') {
            None if rest == "exists" => Predicate::Exists,
            Some(("eq", v)) => Predicate::Equals(value(v)),
            Some(("contains", v)) => Predicate::Contains(value(v)),
            _ => return Err(format!("unknown predicate in filter {raw:?}")),
        };
        Ok(Self { path, predicate })
    }
}

impl fmt::Display for PathFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lit = |v: &Value| match v {
            Value::String(s) if serde_json::from_str::<Value>(s).is_err() => s.clone(),
            other => other.to_string(),
        };
        match &self.predicate {
            Predicate::Exists => write!(f, "{}:exists", self.path),
            Predicate::Equals(v) => write!(f, "{}:eq:{}", self.path, lit(v)),
            Predicate::Contains(v) => write!(f, "{}:contains:{}", self.path, lit(v)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetadataQuery {
    #[serde(default)]
    pub path_filters: Vec<PathFilter>,
    #[serde(default)]
    pub free_text: Option<String>,
    /// Defaults to the store's maximum page size.
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub offset: usize,
}

impl MetadataQuery {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn filter(mut self, filter: PathFilter) -> Self {
        self.path_filters.push(filter);
        self
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.free_text = Some(text.into());
        self
    }

    pub fn page(mut self, limit: usize, offset: usize) -> Self {
        self.limit = Some(limit);
        self.offset = offset;
        self
    }

    pub(crate) fn matches(&self, payload: &Value) -> bool {
        if !self.path_filters.iter().all(|f| f.matches(payload)) {
            return false;
        }
        match self.free_text.as_deref().map(str::trim) {
            None | Some("") => true,
            Some(text) => {
                let needle = text.to_lowercase();
                let mut hit = false;
                for_each_string(payload, &mut |s| {
                    hit = hit || s.to_lowercase().contains(&needle);
                });
                hit
            }
        }
    }
}
