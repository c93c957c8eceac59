//! TCP front-end: one thread per connection, requests answered in order.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::Mutex;

use crate::dispatch::Dispatcher;
use crate::protocol::{WireResponse, BAD_REQUEST};
use crate::ServiceError;

/// Longest accepted request line, in bytes.
pub const MAX_LINE_BYTES: usize = 64 << 20;

struct Shared {
    dispatcher: Dispatcher,
    shutting_down: AtomicBool,
    next_conn: AtomicU64,
    conns: Mutex<HashMap<u64, TcpStream>>,
}

/// A running server. Dropping the handle does not stop it; call
/// [`ServerHandle::shutdown`].
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: JoinHandle<()>,
}

pub fn bind(addr: SocketAddr) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr).map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => ServiceError::AddressInUse(addr),
        _ => ServiceError::Io(e),
    })
}

/// Binds `addr` and starts accepting connections.
pub fn start(dispatcher: Dispatcher, addr: SocketAddr) -> Result<ServerHandle, ServiceError> {
    let listener = bind(addr)?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared {
        dispatcher,
        shutting_down: AtomicBool::new(false),
        next_conn: AtomicU64::new(0),
        conns: Mutex::new(HashMap::new()),
    });
    let acceptor = {
        let shared = Arc::clone(&shared);
        std::thread::Builder::new()
            .name("memdb-accept".into())
            .spawn(move || accept_loop(listener, shared))?
    };
    tracing::info!(%addr, "listening");
    Ok(ServerHandle { addr, shared, acceptor })
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    for stream in listener.incoming() {
        if shared.shutting_down.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!(error = %e, "accept failed");
                continue;
            }
        };
        let id = shared.next_conn.fetch_add(1, Ordering::Relaxed);
        match stream.try_clone() {
            Ok(clone) => {
                shared.conns.lock().insert(id, clone);
            }
            Err(e) => {
                tracing::warn!(error = %e, "cannot track connection");
                continue;
            }
        }
        let conn_shared = Arc::clone(&shared);
        workers.retain(|w| !w.is_finished());
        let spawned = std::thread::Builder::new()
            .name(format!("memdb-conn-{id}"))
            .spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = serve_connection(stream, &conn_shared.dispatcher) {
                    tracing::debug!(?peer, error = %e, "connection closed with error");
                }
                conn_shared.conns.lock().remove(&id);
            });
        match spawned {
            Ok(w) => workers.push(w),
            Err(e) => {
                tracing::warn!(error = %e, "cannot spawn connection thread");
                shared.conns.lock().remove(&id);
            }
        }
    }
    for (_, conn) in shared.conns.lock().drain() {
        let _ = conn.shutdown(Shutdown::Both);
    }
    for w in workers {
        let _ = w.join();
    }
}

/// Answers requests on one connection until the peer closes it.
pub fn serve_connection(stream: TcpStream, dispatcher: &Dispatcher) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = (&mut reader)
            .take(MAX_LINE_BYTES as u64 + 1)
            .read_until(b'\n', &mut line)?;
        if n == 0 {
            return Ok(());
        }
        if line.len() > MAX_LINE_BYTES {
            let resp = WireResponse::error("", BAD_REQUEST, "request line too long");
            writeln!(writer, "{}", resp.to_line())?;
            return Ok(());
        }
        if let Some(resp) = dispatcher.handle_line(&line) {
            let mut out = resp.to_line();
            out.push('\n');
            writer.write_all(out.as_bytes())?;
        }
    }
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn dispatcher(&self) -> &Dispatcher {
        &self.shared.dispatcher
    }

    /// Stops accepting, closes open connections, waits for in-flight
    /// requests and flushes the engine.
    pub fn shutdown(self) -> Result<(), ServiceError> {
        self.shared.shutting_down.store(true, Ordering::SeqCst);
        let mut wake = self.addr;
        if wake.ip().is_unspecified() {
            wake.set_ip(match wake {
                SocketAddr::V4(_) => [127, 0, 0, 1].into(),
                SocketAddr::V6(_) => std::net::Ipv6Addr::LOCALHOST.into(),
            });
        }
        // Unblocks the acceptor; it sees the flag and exits.
        let _ = TcpStream::connect(wake);
        let _ = self.acceptor.join();
        self.shared.dispatcher.engine().flush()?;
        tracing::info!(addr = %self.addr, "stopped");
        Ok(())
    }
}
