//! Socket side of the recorder: newline-delimited JSON over TCP, or the same
//! messages as WebSocket text frames on the same port (for browsers). Only
//! one client holds a session at a time; others get a `busy` reply.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use anyhow::{bail, Context};
use tungstenite::Message;

use crate::protocol::{ClientMessage, ServerMessage};
use crate::recorder::{Connection, RecorderConfig};

pub const ADDR_ENV: &str = "HCR_RECORDER_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:7878";

/// How long the server waits for a WebSocket handshake before treating a
/// silent client as a line-protocol client.
const SNIFF_TIMEOUT: Duration = Duration::from_millis(200);

enum Wire {
    Lines { reader: BufReader<TcpStream>, writer: TcpStream },
    Socket(tungstenite::WebSocket<TcpStream>),
}

impl Wire {
    fn open(stream: TcpStream) -> anyhow::Result<Self> {
        // One small message per input; do not let Nagle batch the replies.
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(SNIFF_TIMEOUT))?;
        let mut head = [0u8; 4];
        let is_http = matches!(stream.peek(&mut head), Ok(4) if &head == b"GET ");
        stream.set_read_timeout(None)?;
        if is_http {
            let ws = tungstenite::accept(stream).map_err(|e| anyhow::anyhow!("websocket handshake: {e}"))?;
            Ok(Wire::Socket(ws))
        } else {
            let writer = stream.try_clone()?;
            Ok(Wire::Lines { reader: BufReader::new(stream), writer })
        }
    }

    fn send(&mut self, msg: &ServerMessage) -> anyhow::Result<()> {
        match self {
            Wire::Lines { writer, .. } => {
                writer.write_all(msg.to_line().as_bytes())?;
                writer.write_all(b"\n")?;
                writer.flush()?;
            }
            Wire::Socket(ws) => ws.send(Message::Text(msg.to_line()))?,
        }
        Ok(())
    }

    /// Next message text, or `None` when the client has gone.
    fn recv(&mut self) -> Option<String> {
        match self {
            Wire::Lines { reader, .. } => {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) | Err(_) => None,
                    Ok(_) => Some(line),
                }
            }
            Wire::Socket(ws) => loop {
                match ws.read() {
                    Ok(Message::Text(t)) => return Some(t),
                    Ok(Message::Binary(b)) => return Some(String::from_utf8_lossy(&b).into_owned()),
                    Ok(Message::Close(_)) | Err(_) => return None,
                    Ok(_) => continue,
                }
            },
        }
    }

    fn close(&mut self) {
        if let Wire::Socket(ws) = self {
            let _ = ws.close(None);
            let _ = ws.flush();
        }
    }
}

/// Runs one client to completion. Returns after disconnect, having flushed
/// any active session.
fn serve_client(stream: TcpStream, config: &RecorderConfig) -> anyhow::Result<()> {
    let mut wire = Wire::open(stream)?;
    wire.send(&config.hello()?)?;
    let mut conn = Connection::new(config);
    while let Some(text) = wire.recv() {
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let reply = conn.handle_line(line);
            if wire.send(&reply).is_err() {
                conn.disconnect();
                return Ok(());
            }
        }
    }
    conn.disconnect();
    wire.close();
    Ok(())
}

fn refuse(stream: TcpStream) {
    if let Ok(mut wire) = Wire::open(stream) {
        let _ = wire.send(&ServerMessage::Busy { message: "another recording session is active".into() });
        wire.close();
    }
}

/// A bound recorder service.
pub struct RecorderServer {
    listener: TcpListener,
    config: Arc<RecorderConfig>,
}

/// Handle to a server running on a background thread.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl RecorderServer {
    pub fn bind(addr: &str, config: RecorderConfig) -> anyhow::Result<Self> {
        let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
        config.hello()?;
        Ok(Self { listener, config: Arc::new(config) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Accepts connections until `stop` is raised.
    fn accept_loop(self, stop: Arc<AtomicBool>) {
        let busy = Arc::new(AtomicBool::new(false));
        for stream in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            if busy.swap(true, Ordering::SeqCst) {
                thread::spawn(move || refuse(stream));
                continue;
            }
            let (config, busy) = (Arc::clone(&self.config), Arc::clone(&busy));
            thread::spawn(move || {
                if let Err(e) = serve_client(stream, &config) {
                    eprintln!("recorder: client error: {e:#}");
                }
                busy.store(false, Ordering::SeqCst);
            });
        }
    }

    /// Serves forever on the calling thread.
    pub fn run(self) {
        self.accept_loop(Arc::new(AtomicBool::new(false)));
    }

    pub fn spawn(self) -> ServerHandle {
        let addr = self.local_addr();
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = thread::spawn(move || self.accept_loop(flag));
        ServerHandle { addr, stop, thread: Some(thread) }
    }
}

impl ServerHandle {
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.shutdown();
        }
    }
}

/// Line-protocol client, as used by the scripted demonstrator and tests.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    pub hello: ServerMessage,
}

impl Client {
    /// Connects and reads the greeting. A `busy` greeting is an error.
    pub fn connect(addr: &str) -> anyhow::Result<Self> {
        let stream = TcpStream::connect(addr).with_context(|| format!("connecting to {addr}"))?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        let mut client = Self { reader: BufReader::new(stream), writer, hello: ServerMessage::Error { message: String::new() } };
        let first = client.recv()?;
        if let ServerMessage::Busy { message } = &first {
            bail!("recorder busy: {message}");
        }
        client.hello = first;
        Ok(client)
    }

    pub fn send_raw(&mut self, line: &str) -> anyhow::Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn recv(&mut self) -> anyhow::Result<ServerMessage> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            bail!("recorder closed the connection");
        }
        Ok(serde_json::from_str(&line)?)
    }

    /// Sends one message and returns its single reply.
    pub fn request(&mut self, msg: &ClientMessage) -> anyhow::Result<ServerMessage> {
        self.send_raw(&msg.to_line())?;
        self.recv()
    }
}
