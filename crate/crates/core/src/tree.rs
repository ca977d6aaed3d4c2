//! Dot-path addressing and canonical serialization for metadata trees.
//!
//! Paths use `.` between object keys and `[n]` for list indices, e.g.
//! `slmd.design.arms[0].label`. There are no wildcards.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Segment {
    Key(String),
    Index(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DotPath {
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("invalid dot-path {path:?}: {reason}")]
    Syntax { path: String, reason: &'static str },
    #[error("cannot write through non-container value at {0}")]
    Conflict(String),
}

impl DotPath {
    pub fn parse(raw: &str) -> Result<Self, PathError> {
        let err = |reason| PathError::Syntax {
            path: raw.to_string(),
            reason,
        };
        if raw.is_empty() {
            return Err(err("empty path"));
        }
        let mut segments = Vec::new();
        for part in raw.split('.') {
            if part.is_empty() {
                return Err(err("empty segment"));
            }
            let (key, mut rest) = match part.find('[') {
                Some(i) => (&part[..i], &part[i..]),
                None => (part, ""),
            };
            if key.is_empty() {
                return Err(err("segment must start with a key"));
            }
            if key.contains(']') {
                return Err(err("unbalanced ']'"));
            }
            segments.push(Segment::Key(key.to_string()));
            while !rest.is_empty() {
                if !rest.starts_with('[') {
                    return Err(err("unexpected text after index"));
                }
                let close = rest.find(']').ok_or_else(|| err("unterminated '['"))?;
                let digits = &rest[1..close];
                if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(err("list index must be a non-negative integer"));
                }
                let index = digits.parse().map_err(|_| err("list index out of range"))?;
                segments.push(Segment::Index(index));
                rest = &rest[close + 1..];
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// The leading object key. Every valid path has one.
    pub fn head(&self) -> &str {
        match &self.segments[0] {
            Segment::Key(k) => k,
            Segment::Index(_) => unreachable!("paths always start with a key"),
        }
    }

    pub fn get<'a>(&self, root: &'a Value) -> Option<&'a Value> {
        let mut cur = root;
        for seg in &self.segments {
            cur = match (seg, cur) {
                (Segment::Key(k), Value::Object(map)) => map.get(k)?,
                (Segment::Index(i), Value::Array(items)) => items.get(*i)?,
                _ => return None,
            };
        }
        Some(cur)
    }

    /// Writes `value` at this path, creating intermediate objects and
    /// null-padding lists as needed.
    pub fn set(&self, root: &mut Value, value: Value) -> Result<(), PathError> {
        let mut cur = root;
        for (depth, seg) in self.segments.iter().enumerate() {
            if cur.is_null() {
                *cur = match seg {
                    Segment::Key(_) => Value::Object(Default::default()),
                    Segment::Index(_) => Value::Array(Vec::new()),
                };
            }
            let conflict = || PathError::Conflict(self.prefix(depth));
            cur = match seg {
                Segment::Key(k) => cur
                    .as_object_mut()
                    .ok_or_else(conflict)?
                    .entry(k.clone())
                    .or_insert(Value::Null),
                Segment::Index(i) => {
                    let items = cur.as_array_mut().ok_or_else(conflict)?;
                    if items.len() <= *i {
                        items.resize(*i + 1, Value::Null);
                    }
                    &mut items[*i]
                }
            };
        }
        *cur = value;
        Ok(())
    }

    fn prefix(&self, len: usize) -> String {
        DotPath {
            segments: self.segments[..len.max(1)].to_vec(),
        }
        .to_string()
    }
}

impl fmt::Display for DotPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, seg) in self.segments.iter().enumerate() {
            match seg {
                Segment::Key(k) if i == 0 => write!(f, "{k}")?,
                Segment::Key(k) => write!(f, ".{k}")?,
                Segment::Index(n) => write!(f, "[{n}]")?,
            }
        }
        Ok(())
    }
}

impl FromStr for DotPath {
    type Err = PathError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for DotPath {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DotPath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        DotPath::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Sorted-key, whitespace-free JSON. Two trees are equal iff their canonical
/// forms are byte-identical.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null | Value::Bool(_) | Value::Number(_) | Value::String(_) => {
            out.push_str(&serde_json::to_string(value).expect("scalar serializes"))
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("key serializes"));
                out.push(':');
                write_canonical(&map[key], out);
            }
            out.push('}');
        }
    }
}

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Visits every string leaf of a tree.
pub fn for_each_string<'a>(value: &'a Value, f: &mut impl FnMut(&'a str)) {
    match value {
        Value::String(s) => f(s),
        Value::Array(items) => items.iter().for_each(|v| for_each_string(v, f)),
        Value::Object(map) => map.values().for_each(|v| for_each_string(v, f)),
        _ => {}
    }
}

/// String form of a scalar, used for facet values and transforms.
pub fn scalar_string(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}
