use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AuthError;

/// Declaration order is dominance order: a role implies every role below it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Reader,
    MetadataEditor,
    StudyAdmin,
    HubAdmin,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::Reader,
        Role::MetadataEditor,
        Role::StudyAdmin,
        Role::HubAdmin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Reader => "reader",
            Role::MetadataEditor => "metadata_editor",
            Role::StudyAdmin => "study_admin",
            Role::HubAdmin => "hub_admin",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = AuthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| AuthError::UnknownRole(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessPolicy {
    pub resource_path: String,
    pub role: Role,
    pub principal: String,
}

/// Accepts only absolute paths in normal form: `/` or `/a/b` with no empty,
/// `.` or `..` segments and no trailing slash.
pub fn check_normalized(path: &str) -> Result<(), AuthError> {
    let malformed = || AuthError::MalformedPath(path.to_string());
    if path == "/" {
        return Ok(());
    }
    let rest = path.strip_prefix('/').ok_or_else(malformed)?;
    if rest
        .split('/')
        .any(|seg| seg.is_empty() || seg == "." || seg == "..")
    {
        return Err(malformed());
    }
    Ok(())
}

/// The path itself, then each ancestor up to `/`.
pub fn ancestors(path: &str) -> impl Iterator<Item = &str> {
    let mut next = Some(path);
    std::iter::from_fn(move || {
        let cur = next?;
        next = match cur {
            "/" => None,
            _ => match cur.rfind('/') {
                Some(0) => Some("/"),
                Some(i) => Some(&cur[..i]),
                None => None,
            },
        };
        Some(cur)
    })
}

pub fn study_path(guid: &str) -> String {
    format!("/studies/{guid}")
}
