//! Core services for a federated data-mesh hub: a public metadata store,
//! a persistent-identifier index, token and policy based authorization,
//! metadata harvesting adapters, the repository gateway, study
//! registration, variable-level metadata tooling and faceted search.

macro_rules! regex {
    ($re:literal $(,)?) => {{
        static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
        RE.get_or_init(|| regex::Regex::new($re).unwrap())
    }};
}

pub mod clock;
pub mod ids;
pub mod journal;
pub mod metadata;
pub mod tree;
pub mod gateway;
pub mod pid;
pub mod auth;
pub mod adapters;
pub mod vlmd;
pub mod registration;
pub mod search;
