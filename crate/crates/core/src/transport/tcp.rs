//! TCP endpoint with the same blocking send/receive contract as the
//! in-process channel.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::wire::{FRAME_OVERHEAD, MAGIC, PROTOCOL_VERSION};
use super::{decode, encode, Endpoint, RoundMessage, TransportError, TransportResult};

/// Upper bound on a single payload; a parameter vector of 10^5 floats is
/// well under this.
const MAX_PAYLOAD: usize = 64 << 20;

#[derive(Debug, Clone)]
pub struct TcpConfig {
    pub recv_timeout: Duration,
    pub send_retries: u32,
    pub connect_retries: u32,
    pub connect_backoff: Duration,
}

impl Default for TcpConfig {
    fn default() -> Self {
        TcpConfig {
            recv_timeout: Duration::from_secs(30),
            send_retries: 3,
            connect_retries: 10,
            connect_backoff: Duration::from_millis(200),
        }
    }
}

pub struct TcpEndpoint {
    stream: TcpStream,
    cfg: TcpConfig,
}

/// Listener side: accepts one endpoint per protocol instance.
pub struct TcpHost {
    listener: TcpListener,
    cfg: TcpConfig,
}

impl TcpHost {
    pub fn bind(addr: impl ToSocketAddrs, cfg: TcpConfig) -> TransportResult<Self> {
        Ok(TcpHost { listener: TcpListener::bind(addr)?, cfg })
    }

    pub fn local_addr(&self) -> TransportResult<std::net::SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn accept(&self) -> TransportResult<TcpEndpoint> {
        let (stream, _) = self.listener.accept()?;
        TcpEndpoint::from_stream(stream, self.cfg.clone())
    }
}

/// Binds `addr` and blocks for a single inbound session.
pub fn tcp_listen(addr: impl ToSocketAddrs, cfg: TcpConfig) -> TransportResult<TcpEndpoint> {
    TcpHost::bind(addr, cfg)?.accept()
}

/// Connects to `addr`, retrying with backoff so the dialer may start before
/// the listener.
pub fn tcp_dial(addr: impl ToSocketAddrs + Clone + std::fmt::Debug, cfg: TcpConfig) -> TransportResult<TcpEndpoint> {
    let attempts = cfg.connect_retries.max(1);
    let mut last = String::new();
    for attempt in 0..attempts {
        match TcpStream::connect(addr.clone()) {
            Ok(stream) => return TcpEndpoint::from_stream(stream, cfg),
            Err(e) => last = e.to_string(),
        }
        if attempt + 1 < attempts {
            std::thread::sleep(cfg.connect_backoff);
        }
    }
    Err(TransportError::ConnectFailed { addr: format!("{addr:?}"), attempts, last })
}

impl TcpEndpoint {
    fn from_stream(stream: TcpStream, cfg: TcpConfig) -> TransportResult<Self> {
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(cfg.recv_timeout))?;
        Ok(TcpEndpoint { stream, cfg })
    }

    fn try_send(&mut self, frame: &[u8]) -> std::io::Result<()> {
        self.stream.write_all(frame)?;
        self.stream.flush()
    }
}

impl Endpoint for TcpEndpoint {
    fn send(&mut self, msg: &RoundMessage) -> TransportResult<()> {
        let frame = encode(msg);
        let attempts = self.cfg.send_retries.max(1);
        let mut last = String::new();
        for _ in 0..attempts {
            match self.try_send(&frame) {
                Ok(()) => return Ok(()),
                Err(e) => last = e.to_string(),
            }
        }
        Err(TransportError::SendRetriesExhausted { attempts, last })
    }

    fn recv(&mut self) -> TransportResult<RoundMessage> {
        let mut header = [0u8; 11];
        self.stream.read_exact(&mut header).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                TransportError::Disconnected
            } else {
                TransportError::Io(e)
            }
        })?;
        if header[..4] != MAGIC {
            return Err(TransportError::BadMagic);
        }
        let version = u16::from_le_bytes(header[4..6].try_into().expect("2 bytes"));
        if version != PROTOCOL_VERSION {
            return Err(TransportError::VersionMismatch {
                expected: PROTOCOL_VERSION,
                actual: version,
            });
        }
        let payload_len =
            u32::from_le_bytes(header[7..11].try_into().expect("4 bytes")) as usize;
        if payload_len > MAX_PAYLOAD {
            return Err(TransportError::MalformedPayload("oversized frame"));
        }
        let mut rest = vec![0u8; payload_len + 4];
        self.stream.read_exact(&mut rest)?;
        let mut frame = Vec::with_capacity(FRAME_OVERHEAD + payload_len);
        frame.extend_from_slice(&header);
        frame.extend_from_slice(&rest);
        decode(&frame)
    }
}
