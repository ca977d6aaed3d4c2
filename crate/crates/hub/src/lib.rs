//! The runnable hub: HTTP API over the core services, HTTP transports to
//! mesh members, in-process mock members and a scenario harness.

pub mod api;
pub mod config;
pub mod connector;
pub mod harness;
pub mod hub;
pub mod mock;
pub mod server;

pub use hub::{Hub, HubError, HubOptions};
