//! Live session host: a fixed-rate simulation loop fed by a remote driver
//! over a websocket, streaming state-frames back and recording the session
//! in the harness record format.

// Negated comparisons reject NaN as well as out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod host;
pub mod protocol;
pub mod server;

pub use error::{Result, SessionError};
pub use host::{host_session, ClientIo, SessionIo, SessionOptions, SessionOutcome};
pub use protocol::{ClientMessage, ErrorCode, InputRange, ServerMessage, SessionSummary, StateFrame, PROTOCOL_VERSION};
pub use server::{router, serve, ServerState};
