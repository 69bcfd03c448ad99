//! Teleoperation for recording demonstrations: a websocket at `/teleop`
//! streams label frames to a browser UI and takes steering input back,
//! while the simulation records one labelled record per perception tick.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, ServerMessage, SessionState};
pub use server::{ServerConfig, SessionReport, TeleopServer};
pub use session::TeleopSession;
