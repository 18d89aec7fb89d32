use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::message::{RoundMessage, WIRE_VERSION};

/// Largest accepted frame body.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("malformed message: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported wire version {0}")]
    Version(serde_json::Value),
    #[error("peer closed the connection")]
    Closed,
}

/// Reliable, per-pair FIFO message channel.
pub trait Transport: Send {
    fn send(&mut self, msg: &RoundMessage) -> Result<(), TransportError>;
    fn recv(&mut self) -> Result<RoundMessage, TransportError>;
}

/// Frame body: UTF-8 JSON with the wire version in `v`.
pub fn encode_body(msg: &RoundMessage) -> Result<Vec<u8>, TransportError> {
    let body = serde_json::to_vec(msg)?;
    if body.len() > MAX_FRAME {
        return Err(TransportError::FrameTooLarge(body.len()));
    }
    Ok(body)
}

pub fn decode_body(body: &[u8]) -> Result<RoundMessage, TransportError> {
    let value: serde_json::Value = serde_json::from_slice(body)?;
    match value.get("v") {
        Some(v) if v.as_u64() == Some(WIRE_VERSION as u64) => {}
        other => return Err(TransportError::Version(other.cloned().unwrap_or_default())),
    }
    Ok(serde_json::from_value(value)?)
}

/// Writes a 4-byte big-endian length prefix followed by the body.
pub fn write_frame<W: Write>(w: &mut W, msg: &RoundMessage) -> Result<(), TransportError> {
    let body = encode_body(msg)?;
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<RoundMessage, TransportError> {
    let mut len = [0u8; 4];
    if let Err(e) = r.read_exact(&mut len) {
        return Err(match e.kind() {
            io::ErrorKind::UnexpectedEof => TransportError::Closed,
            _ => e.into(),
        });
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(TransportError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    decode_body(&body)
}

pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> Result<TcpTransport, TransportError> {
        stream.set_nodelay(true)?;
        Ok(TcpTransport {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    /// Connects, retrying until `patience` runs out.
    pub fn connect(
        addr: impl ToSocketAddrs + Copy,
        patience: Duration,
    ) -> Result<TcpTransport, TransportError> {
        let deadline = Instant::now() + patience;
        loop {
            match TcpStream::connect(addr) {
                Ok(s) => return TcpTransport::new(s),
                Err(e) if Instant::now() >= deadline => return Err(e.into()),
                Err(_) => std::thread::sleep(Duration::from_millis(50)),
            }
        }
    }

    /// Accepts `n` connections in arrival order.
    pub fn accept(listener: &TcpListener, n: usize) -> Result<Vec<TcpTransport>, TransportError> {
        (0..n)
            .map(|_| TcpTransport::new(listener.accept()?.0))
            .collect()
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, msg: &RoundMessage) -> Result<(), TransportError> {
        write_frame(&mut self.writer, msg)?;
        // every exchange ends with a control message
        if msg.is_control() {
            self.writer.flush()?;
        }
        Ok(())
    }

    fn recv(&mut self) -> Result<RoundMessage, TransportError> {
        read_frame(&mut self.reader)
    }
}

/// In-process transport over channels.
pub struct ChannelTransport {
    tx: mpsc::Sender<RoundMessage>,
    rx: mpsc::Receiver<RoundMessage>,
}

impl ChannelTransport {
    pub fn pair() -> (ChannelTransport, ChannelTransport) {
        let (a_tx, b_rx) = mpsc::channel();
        let (b_tx, a_rx) = mpsc::channel();
        (
            ChannelTransport { tx: a_tx, rx: a_rx },
            ChannelTransport { tx: b_tx, rx: b_rx },
        )
    }
}

impl Transport for ChannelTransport {
    fn send(&mut self, msg: &RoundMessage) -> Result<(), TransportError> {
        self.tx
            .send(msg.clone())
            .map_err(|_| TransportError::Closed)
    }

    fn recv(&mut self) -> Result<RoundMessage, TransportError> {
        self.rx.recv().map_err(|_| TransportError::Closed)
    }
}
