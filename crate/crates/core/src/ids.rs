//! Identifier grammars shared across services.

/// Persistent identifier: `prefix/uuid-v4` in lowercase hex.
pub fn is_valid_pid(pid: &str) -> bool {
    regex!(r"^[a-z][a-z0-9.-]*/[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}$")
        .is_match(pid)
}

/// Metadata document key: `prefix/local`. The prefix follows the PID
/// prefix grammar; the local part is looser so award-derived keys fit.
/// Every valid PID is also a valid GUID.
pub fn is_valid_guid(guid: &str) -> bool {
    guid.len() <= 256 && regex!(r"^[a-z][a-z0-9.-]*/[A-Za-z0-9][A-Za-z0-9._-]*$").is_match(guid)
}

pub fn is_valid_prefix(prefix: &str) -> bool {
    regex!(r"^[a-z][a-z0-9.-]*$").is_match(prefix)
}

/// Provenance block names (`grant_source`, `slmd`, ...).
pub fn is_valid_block_name(name: &str) -> bool {
    regex!(r"^[a-z][a-z0-9_]*$").is_match(name)
}

pub fn is_valid_nct(nct: &str) -> bool {
    regex!(r"^NCT[0-9]{8}$").is_match(nct)
}
