//! Framed duplex connections.
//!
//! A frame is a 32-bit little-endian payload length followed by the
//! payload, capped at 64 MiB. The same framing runs over an in-process pipe
//! pair and over TCP, so both kinds behave identically above this layer.
//! A client opens the connection with the 5-byte preamble `"PRDA" 0x01`.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::protocol::Message;
use crate::transport::ledger::{Category, CostLedger, Direction};
use crate::transport::wire;

pub const FRAME_CAP: usize = 64 * 1024 * 1024;
pub const FRAME_HEADER_LEN: usize = 4;
pub const PREAMBLE: [u8; 5] = [b'P', b'R', b'D', b'A', 0x01];

/// Which end of the connection this handle is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Client,
    Server,
}

impl Side {
    fn outgoing(self) -> Direction {
        match self {
            Side::Client => Direction::ClientToServer,
            Side::Server => Direction::ServerToClient,
        }
    }

    fn incoming(self) -> Direction {
        match self {
            Side::Client => Direction::ServerToClient,
            Side::Server => Direction::ClientToServer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    InProcess,
    Socket,
}

/// One end of a framed connection plus its cost ledger.
pub struct Connection {
    reader: Box<dyn Read + Send>,
    writer: Box<dyn Write + Send>,
    side: Side,
    kind: ChannelKind,
    ledger: CostLedger,
    send_delay: Option<Duration>,
    vocab_size: Option<usize>,
}

impl std::fmt::Debug for Connection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Connection")
            .field("side", &self.side)
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

impl Connection {
    fn new(
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
        side: Side,
        kind: ChannelKind,
    ) -> Self {
        Self {
            reader,
            writer,
            side,
            kind,
            ledger: CostLedger::new(),
            send_delay: None,
            vocab_size: None,
        }
    }

    pub fn tcp(stream: TcpStream, side: Side) -> Result<Self> {
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Ok(Self::new(
            Box::new(io::BufReader::new(reader)),
            Box::new(stream),
            side,
            ChannelKind::Socket,
        ))
    }

    pub fn connect(addr: &str) -> Result<Self> {
        Self::tcp(TcpStream::connect(addr)?, Side::Client)
    }

    /// Sleeps for `delay` before every outgoing frame; emulates link latency.
    pub fn with_send_delay(mut self, delay: Duration) -> Self {
        self.send_delay = Some(delay);
        self
    }

    /// Pins the vocabulary size once the handshake has agreed on it, so
    /// incoming draft batches of any other width are rejected as malformed.
    pub fn set_vocab_size(&mut self, size: usize) {
        self.vocab_size = Some(size);
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut CostLedger {
        &mut self.ledger
    }

    pub fn write_preamble(&mut self) -> Result<()> {
        self.writer.write_all(&PREAMBLE)?;
        self.writer.flush()?;
        self.ledger
            .record_bytes(Category::Control, self.side.outgoing(), PREAMBLE.len());
        Ok(())
    }

    pub fn read_preamble(&mut self) -> Result<()> {
        let mut buf = [0u8; 5];
        read_exact_or_closed(&mut self.reader, &mut buf)?;
        self.ledger
            .record_bytes(Category::Control, self.side.incoming(), PREAMBLE.len());
        if buf != PREAMBLE {
            return Err(Error::malformed(0, "bad connection preamble"));
        }
        Ok(())
    }

    pub fn send_frame(&mut self, payload: &[u8]) -> Result<usize> {
        if payload.len() > FRAME_CAP {
            return Err(Error::FrameTooLarge {
                len: payload.len(),
                cap: FRAME_CAP,
            });
        }
        if let Some(d) = self.send_delay {
            std::thread::sleep(d);
        }
        let mut frame = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
        frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        frame.extend_from_slice(payload);
        self.writer.write_all(&frame).map_err(closed_on_pipe)?;
        self.writer.flush().map_err(closed_on_pipe)?;
        Ok(frame.len())
    }

    pub fn recv_frame(&mut self) -> Result<Vec<u8>> {
        let mut header = [0u8; FRAME_HEADER_LEN];
        read_exact_or_closed(&mut self.reader, &mut header)?;
        let len = u32::from_le_bytes(header) as usize;
        if len > FRAME_CAP {
            return Err(Error::FrameTooLarge {
                len,
                cap: FRAME_CAP,
            });
        }
        let mut payload = vec![0u8; len];
        read_exact_or_closed(&mut self.reader, &mut payload)?;
        Ok(payload)
    }

    pub fn send(&mut self, msg: &Message) -> Result<()> {
        let payload = wire::encode(msg)?;
        let n = self.send_frame(&payload)?;
        self.ledger.record(msg, self.side.outgoing(), n);
        Ok(())
    }

    /// Receives and decodes one message. A frame that arrives intact but
    /// fails to decode is charged to `control` and reported as malformed;
    /// the stream stays aligned.
    pub fn recv(&mut self) -> Result<Message> {
        let payload = self.recv_frame()?;
        let n = FRAME_HEADER_LEN + payload.len();
        match wire::decode_with_vocab(&payload, self.vocab_size) {
            Ok(msg) => {
                self.ledger.record(&msg, self.side.incoming(), n);
                Ok(msg)
            }
            Err(e) => {
                self.ledger
                    .record_bytes(Category::Control, self.side.incoming(), n);
                Err(e)
            }
        }
    }
}

fn closed_on_pipe(e: io::Error) -> Error {
    match e.kind() {
        io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset => Error::ConnectionClosed,
        _ => Error::Io(e),
    }
}

fn read_exact_or_closed(r: &mut dyn Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof
        | io::ErrorKind::ConnectionReset
        | io::ErrorKind::ConnectionAborted
        | io::ErrorKind::BrokenPipe => Error::ConnectionClosed,
        _ => Error::Io(e),
    })
}

struct PipeWriter(Sender<Vec<u8>>);

impl Write for PipeWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0
            .send(buf.to_vec())
            .map_err(|_| io::Error::from(io::ErrorKind::BrokenPipe))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

struct PipeReader {
    rx: Receiver<Vec<u8>>,
    buf: Vec<u8>,
    pos: usize,
}

impl Read for PipeReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos == self.buf.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.buf = chunk;
                    self.pos = 0;
                }
                // all senders dropped: clean EOF
                Err(_) => return Ok(0),
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

fn pipe() -> (PipeWriter, PipeReader) {
    let (tx, rx) = channel();
    (
        PipeWriter(tx),
        PipeReader {
            rx,
            buf: Vec::new(),
            pos: 0,
        },
    )
}

/// Connected in-process `(client, server)` pair.
pub fn in_process_pair() -> (Connection, Connection) {
    let (c2s_w, c2s_r) = pipe();
    let (s2c_w, s2c_r) = pipe();
    (
        Connection::new(Box::new(s2c_r), Box::new(c2s_w), Side::Client, ChannelKind::InProcess),
        Connection::new(Box::new(c2s_r), Box::new(s2c_w), Side::Server, ChannelKind::InProcess),
    )
}
