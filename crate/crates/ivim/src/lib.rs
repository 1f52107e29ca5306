//! Integration manager service: request pipeline, HTTP API, and the
//! scripted scenario runner used by the CLI and tests.

pub mod api;
pub mod manager;
pub mod scenario;
