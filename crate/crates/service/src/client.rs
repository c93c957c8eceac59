//! Minimal blocking client for the wire protocol.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};

use crate::protocol::{WireRequest, WireResponse};
use crate::ServiceError;

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> Result<Self, ServiceError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Client {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
            next_id: 0,
        })
    }

    /// Sends a raw line and reads one response line.
    pub fn send_line(&mut self, line: &str) -> Result<String, ServiceError> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        let mut out = String::new();
        if self.reader.read_line(&mut out)? == 0 {
            return Err(ServiceError::Io(std::io::ErrorKind::UnexpectedEof.into()));
        }
        if out.ends_with('\n') {
            out.pop();
        }
        Ok(out)
    }

    /// Sends `req`, filling in a request id when it is empty.
    pub fn call(&mut self, mut req: WireRequest) -> Result<WireResponse, ServiceError> {
        if req.request_id.is_empty() {
            self.next_id += 1;
            req.request_id = self.next_id.to_string();
        }
        let line = serde_json::to_string(&req).expect("requests always serialize");
        let resp = self.send_line(&line)?;
        serde_json::from_str(&resp).map_err(|e| ServiceError::Protocol(e.to_string()))
    }
}
