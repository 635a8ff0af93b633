use steerlab_harness::HarnessError;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("protocol version {found} not supported (server speaks {supported})")]
    Version { found: u32, supported: u32 },
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("client disconnected before the session started")]
    Disconnected,
    #[error("no hello within {0} ms")]
    HelloTimeout(u128),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SessionError>;
