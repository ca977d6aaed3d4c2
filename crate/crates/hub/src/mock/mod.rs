//! In-process stand-ins for mesh members and external metadata sources.

mod content;
mod repo;
mod sources;

pub use content::{object_bytes, sha256_of_object};
pub use repo::{MockObject, MockRepo, SinkLog, TokenCheck};
pub use sources::MockSources;
