//! Network server, live scenario runner and CLI plumbing around
//! `surface-sync-core`.

pub mod config;
pub mod live;
pub mod server;
