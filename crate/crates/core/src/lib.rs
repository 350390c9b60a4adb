//! Shared tabletop map + AR room: coordinate math, query translation, the
//! asset store, the wire protocol, TUIO input, the authoritative session
//! state machine and the client-side simulation/checking tools.

pub mod checker;
pub mod datastore;
pub mod geo;
pub mod protocol;
pub mod query;
pub mod replica;
pub mod scenario;
pub mod session;
pub mod sim;
pub mod tuio;
