//! Wire protocol, network model and connections to the server.

pub mod clock;
pub mod endpoint;
pub mod net;
pub mod wire;
