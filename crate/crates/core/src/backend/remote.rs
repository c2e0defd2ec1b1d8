use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::wire::{read_frame, send_json, Request, Response, Status, WireTensor};
use super::{Capabilities, VelocityBackend, VelocityQuery};
use crate::error::{Error, Result};
use crate::field::Grid;

/// Reconnect-and-resend policy for transport failures.
///
/// Server-reported errors (`"status": "error"`) are never retried.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 100,
            timeout_ms: 120_000,
        }
    }
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

/// Client side of the wire protocol.
pub struct RemoteBackend {
    address: String,
    retry: RetryPolicy,
    conn: Option<Connection>,
    next_id: u64,
    caps: Capabilities,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("address", &self.address)
            .field("caps", &self.caps)
            .finish_non_exhaustive()
    }
}

impl RemoteBackend {
    /// Connects and performs the `hello` handshake.
    pub fn connect(address: impl Into<String>, retry: RetryPolicy) -> Result<Self> {
        let mut backend = Self {
            address: address.into(),
            retry,
            conn: None,
            next_id: 1,
            caps: Capabilities {
                latent_channels: 0,
                downsample_factor: 0,
                model_id: String::new(),
            },
        };
        let id = backend.fresh_id();
        let resp = backend.call(&Request::Hello { id })?;
        backend.caps = Capabilities {
            latent_channels: resp.latent_channels.ok_or_else(|| missing("latent_channels"))?,
            downsample_factor: resp.downsample_factor.ok_or_else(|| missing("downsample_factor"))?,
            model_id: resp.model_id.unwrap_or_default(),
        };
        debug!("connected to {} ({:?})", backend.address, backend.caps);
        Ok(backend)
    }

    /// Asks the server to stop; the connection is dropped afterwards.
    pub fn shutdown(mut self) -> Result<()> {
        let id = self.fresh_id();
        self.call(&Request::Shutdown { id })?;
        Ok(())
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn open(&self) -> std::io::Result<Connection> {
        let timeout = Duration::from_millis(self.retry.timeout_ms.max(1));
        let addr = self
            .address
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, "address did not resolve"))?;
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Connection {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    fn exchange(&mut self, req: &Request) -> std::io::Result<Response> {
        if self.conn.is_none() {
            self.conn = Some(self.open()?);
        }
        let conn = self.conn.as_mut().expect("connection opened above");
        send_json(&mut conn.writer, req)?;
        let frame = read_frame(&mut conn.reader)?
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "server closed connection"))?;
        serde_json::from_slice(&frame).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    fn call(&mut self, req: &Request) -> Result<Response> {
        let attempts = self.retry.max_attempts.max(1);
        let mut backoff = self.retry.initial_backoff_ms;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.exchange(req) {
                Ok(resp) => return check(req.id(), resp),
                Err(e) => {
                    self.conn = None;
                    last = e.to_string();
                    if attempt < attempts {
                        warn!("remote {} attempt {attempt}/{attempts} failed: {e}", self.address);
                        thread::sleep(Duration::from_millis(backoff));
                        backoff = backoff.saturating_mul(2);
                    }
                }
            }
        }
        Err(Error::Transport {
            message: format!("{}: {last}", self.address),
            attempts,
        })
    }

    fn tensor_call(&mut self, req: Request, pick: fn(Response) -> Option<WireTensor>, field: &str) -> Result<Grid> {
        let resp = self.call(&req)?;
        pick(resp).ok_or_else(|| missing(field))?.to_grid()
    }
}

fn missing(field: &str) -> Error {
    Error::Remote(format!("response lacks {field:?}"))
}

fn check(id: u64, resp: Response) -> Result<Response> {
    if resp.id != Some(id) {
        return Err(Error::Remote(format!(
            "response id {:?} does not echo request id {id}",
            resp.id
        )));
    }
    match resp.status {
        Some(Status::Ok) => Ok(resp),
        Some(Status::Error) => Err(Error::Remote(
            resp.message.unwrap_or_else(|| "unspecified error".into()),
        )),
        None => Err(missing("status")),
    }
}

impl VelocityBackend for RemoteBackend {
    fn capabilities(&self) -> Capabilities {
        self.caps.clone()
    }

    fn velocity(&mut self, q: &VelocityQuery<'_>) -> Result<Grid> {
        let req = Request::Velocity {
            id: self.fresh_id(),
            latent: WireTensor::from_grid(q.latent),
            t: q.t,
            prompt: q.prompt.to_owned(),
        };
        let v = self.tensor_call(req, |r| r.velocity, "velocity")?;
        q.latent.ensure_same_shape(&v)?;
        Ok(v)
    }

    fn encode(&mut self, image: &Grid) -> Result<Grid> {
        let req = Request::Encode {
            id: self.fresh_id(),
            image: WireTensor::from_grid(image),
        };
        self.tensor_call(req, |r| r.latent, "latent")
    }

    fn decode(&mut self, latent: &Grid) -> Result<Grid> {
        let req = Request::Decode {
            id: self.fresh_id(),
            latent: WireTensor::from_grid(latent),
        };
        self.tensor_call(req, |r| r.image, "image")
    }
}
