use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::tree::{scalar_string, DotPath, PathError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    ToString,
    DateNormalizeIso8601,
    ListJoinSemicolon,
    Lowercase,
}

/// `target_path` is relative to the source's provenance block. It may be
/// written `block:path`, in which case `block` must be the source's own.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMapping {
    pub source_path: DotPath,
    pub target_path: String,
    #[serde(default = "identity")]
    pub transform: Transform,
}

fn identity() -> Transform {
    Transform::Identity
}

impl FieldMapping {
    pub fn new(source: &str, target: &str, transform: Transform) -> Result<Self, PathError> {
        Ok(Self {
            source_path: DotPath::parse(source)?,
            target_path: target.to_string(),
            transform,
        })
    }

    /// Splits off an explicit block qualifier and parses the path.
    pub fn target(&self) -> Result<(Option<&str>, DotPath), PathError> {
        match self.target_path.split_once(':') {
            Some((block, path)) => Ok((Some(block), DotPath::parse(path)?)),
            None => Ok((None, DotPath::parse(&self.target_path)?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformFailure {
    pub source_path: String,
    pub target_path: String,
    pub message: String,
}

const DATE_FORMATS: &[&str] = &[
    "%Y-%m-%d",
    "%Y/%m/%d",
    "%m/%d/%Y",
    "%b %d, %Y",
    "%B %d, %Y",
    "%d %b %Y",
    "%d %B %Y",
    "%Y%m%d",
];

const DATETIME_FORMATS: &[&str] = &["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"];

/// Parses the date formats sources commonly emit into `YYYY-MM-DD`.
pub fn normalize_date(raw: &str) -> Option<String> {
    let raw = raw.trim();
    let date = DATE_FORMATS
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(raw, f).ok())
        .or_else(|| DateTime::parse_from_rfc3339(raw).ok().map(|d| d.date_naive()))
        .or_else(|| {
            DATETIME_FORMATS
                .iter()
                .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
                .map(|d| d.date())
        })?;
    Some(date.format("%Y-%m-%d").to_string())
}

pub fn apply_transform(t: Transform, value: &Value) -> Result<Value, String> {
    match t {
        Transform::Identity => Ok(value.clone()),
        Transform::ToString => match value {
            Value::Null => Err("null has no string form".into()),
            Value::Array(_) | Value::Object(_) => Err("expected a scalar".into()),
            v => Ok(Value::String(scalar_string(v).unwrap())),
        },
        Transform::DateNormalizeIso8601 => match value {
            Value::String(s) => normalize_date(s)
                .map(Value::String)
                .ok_or_else(|| format!("unparseable date {s:?}")),
            _ => Err("expected a date string".into()),
        },
        Transform::ListJoinSemicolon => match value {
            Value::Array(items) => items
                .iter()
                .map(|v| scalar_string(v).ok_or_else(|| "list items must be scalars".to_string()))
                .collect::<Result<Vec<_>, _>>()
                .map(|parts| Value::String(parts.join("; "))),
            Value::String(_) => Ok(value.clone()),
            _ => Err("expected a list".into()),
        },
        Transform::Lowercase => match value {
            Value::String(s) => Ok(Value::String(s.to_lowercase())),
            _ => Err("expected a string".into()),
        },
    }
}

/// Applies each mapping in order. Missing (or null) source values are
/// skipped silently; transform failures skip the field and are reported.
pub fn harmonize(mapping: &[FieldMapping], record: &Value) -> (Value, Vec<TransformFailure>) {
    let mut out = Value::Object(Map::new());
    let mut failures = Vec::new();
    for m in mapping {
        let Some(v) = m.source_path.get(record).filter(|v| !v.is_null()) else {
            continue;
        };
        let fail = |message: String| TransformFailure {
            source_path: m.source_path.to_string(),
            target_path: m.target_path.clone(),
            message,
        };
        let target = match m.target() {
            Ok((_, p)) => p,
            Err(e) => {
                failures.push(fail(e.to_string()));
                continue;
            }
        };
        match apply_transform(m.transform, v) {
            Ok(v) => {
                if let Err(e) = target.set(&mut out, v) {
                    failures.push(fail(e.to_string()));
                }
            }
            Err(e) => failures.push(fail(e)),
        }
    }
    (out, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rename_and_transforms() {
        let mapping = vec![
            FieldMapping::new("proj_title", "title", Transform::Identity).unwrap(),
            FieldMapping::new("start", "dates.start", Transform::DateNormalizeIso8601).unwrap(),
            FieldMapping::new("terms", "keywords", Transform::ListJoinSemicolon).unwrap(),
            FieldMapping::new("ic", "institute", Transform::Lowercase).unwrap(),
            FieldMapping::new("amount", "amount", Transform::ToString).unwrap(),
            FieldMapping::new("absent", "nowhere", Transform::Identity).unwrap(),
        ];
        let rec = json!({
            "proj_title": "X",
            "start": "Mar 1, 2024",
            "terms": ["pain", "opioid"],
            "ic": "NIDA",
            "amount": 125000
        });
        let (out, failures) = harmonize(&mapping, &rec);
        assert!(failures.is_empty());
        assert_eq!(
            out,
            json!({
                "title": "X",
                "dates": {"start": "2024-03-01"},
                "keywords": "pain; opioid",
                "institute": "nida",
                "amount": "125000"
            })
        );
    }

    #[test]
    fn date_formats() {
        for (raw, want) in [
            ("2024-03-01", "2024-03-01"),
            ("03/01/2024", "2024-03-01"),
            ("March 1, 2024", "2024-03-01"),
            ("1 Mar 2024", "2024-03-01"),
            ("2024-03-01T10:00:00Z", "2024-03-01"),
            ("2024-03-01T10:00:00", "2024-03-01"),
        ] {
            assert_eq!(normalize_date(raw).as_deref(), Some(want), "{raw}");
        }
        assert_eq!(normalize_date("soon"), None);
        assert_eq!(normalize_date("2024-02-30"), None);
    }

    #[test]
    fn bad_date_skips_the_field_only() {
        let mapping = vec![
            FieldMapping::new("d", "d", Transform::DateNormalizeIso8601).unwrap(),
            FieldMapping::new("t", "t", Transform::Identity).unwrap(),
        ];
        let (out, failures) = harmonize(&mapping, &json!({"d": "someday", "t": "ok"}));
        assert_eq!(out, json!({"t": "ok"}));
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].source_path, "d");
    }

    #[test]
    fn qualified_targets_strip_the_block() {
        let m = FieldMapping::new("a", "grant_source:x.y", Transform::Identity).unwrap();
        let (block, path) = m.target().unwrap();
        assert_eq!((block, path.to_string().as_str()), (Some("grant_source"), "x.y"));
        assert_eq!(harmonize(&[m], &json!({"a": 1})).0, json!({"x": {"y": 1}}));
    }
}
