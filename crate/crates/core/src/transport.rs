//! Moving frames between nodes: an in-process network for tests and
//! simulation, and a TCP client/server pair.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, PoisonError};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::dataframe::Repository;
use crate::error::{Error, Result};
use crate::wire::{parse_address, read_frame, write_frame};

/// One request/response round trip.
pub trait Transport {
    fn exchange(&mut self, address: &str, frame: &[u8]) -> Result<Vec<u8>>;
}

/// Delivers frames straight to repositories registered under an address.
#[derive(Default, Clone)]
pub struct InProcessNetwork {
    nodes: BTreeMap<String, Arc<Mutex<Repository>>>,
}

impl InProcessNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers (or replaces) the repository answering at `address`.
    pub fn register(&mut self, address: impl Into<String>, repo: Arc<Mutex<Repository>>) {
        self.nodes.insert(address.into(), repo);
    }

    pub fn unregister(&mut self, address: &str) {
        self.nodes.remove(address);
    }
}

impl Transport for InProcessNetwork {
    fn exchange(&mut self, address: &str, frame: &[u8]) -> Result<Vec<u8>> {
        let repo = self
            .nodes
            .get(address)
            .ok_or_else(|| Error::Transport(format!("no node at {address}")))?;
        let mut repo = repo.lock().unwrap_or_else(PoisonError::into_inner);
        repo.handle_frame(frame)
    }
}

/// Opens one connection per exchange to `got://host:port` addresses.
#[derive(Debug, Clone)]
pub struct TcpTransport {
    timeout: Option<Duration>,
}

impl Default for TcpTransport {
    fn default() -> Self {
        TcpTransport {
            timeout: Some(Duration::from_secs(30)),
        }
    }
}

impl TcpTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_timeout(timeout: Option<Duration>) -> Self {
        TcpTransport { timeout }
    }
}

impl Transport for TcpTransport {
    fn exchange(&mut self, address: &str, frame: &[u8]) -> Result<Vec<u8>> {
        let (host, port) = parse_address(address)?;
        let stream = TcpStream::connect((host.as_str(), port))?;
        stream.set_read_timeout(self.timeout)?;
        stream.set_write_timeout(self.timeout)?;
        stream.set_nodelay(true)?;
        let mut writer = BufWriter::new(&stream);
        writer.write_all(frame)?;
        writer.flush()?;
        drop(writer);
        let mut reader = BufReader::new(&stream);
        let reply = read_frame(&mut reader)?;
        let _ = stream.shutdown(Shutdown::Both);
        Ok(reply)
    }
}

/// A running server. Dropping it stops accepting new connections.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// The `got://` address clients should use.
    pub fn address(&self) -> String {
        format!("got://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_now();
        }
    }
}

/// Serves `repo` on `bind` (e.g. `127.0.0.1:0`). Each connection gets a
/// thread and may carry any number of request frames; a malformed frame
/// closes it.
pub fn serve(repo: Arc<Mutex<Repository>>, bind: &str) -> Result<ServerHandle> {
    let listener = TcpListener::bind(bind)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = stop.clone();
    let thread = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let repo = repo.clone();
            std::thread::spawn(move || {
                if let Err(e) = serve_connection(&repo, stream) {
                    log::debug!("connection closed: {e}");
                }
            });
        }
    });
    Ok(ServerHandle {
        addr,
        stop,
        thread: Some(thread),
    })
}

fn serve_connection(repo: &Mutex<Repository>, stream: TcpStream) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(&stream);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(f) => f,
            Err(Error::Transport(_)) => return Ok(()),
            Err(e) => return Err(e),
        };
        let reply = {
            let mut repo = repo.lock().unwrap_or_else(PoisonError::into_inner);
            repo.handle_frame(&frame)
        };
        match reply {
            Ok(bytes) => write_frame(&mut &stream, &bytes)?,
            Err(e) => {
                let _ = stream.shutdown(Shutdown::Both);
                return Err(e);
            }
        }
    }
}
