//! Teleoperation bridge: streams simulator state to browser clients over a
//! WebSocket, applies the driving client's commands at a fixed tick rate and
//! records demonstrations in the demos file format.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{decode_server, encode, parse_client, ClientMsg, ServerMsg, StateMsg, WIRE_VERSION};
pub use server::{run_blocking, serve, BridgeError, ServeConfig, ServerHandle};
pub use session::{GestureModel, SessionConfig, TeleopSession};
