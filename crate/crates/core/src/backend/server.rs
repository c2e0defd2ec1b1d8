use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread::{self, JoinHandle};

use log::{debug, warn};

use super::wire::{read_frame, send_json, Request, Response, WireTensor};
use super::{Branch, VelocityBackend, VelocityQuery};
use crate::error::Result;

fn handle(backend: &mut dyn VelocityBackend, req: Request) -> Response {
    let id = req.id();
    let result = match req {
        Request::Hello { .. } | Request::Shutdown { .. } => {
            let caps = backend.capabilities();
            let mut resp = Response::ok(id);
            if matches!(req, Request::Hello { .. }) {
                resp.latent_channels = Some(caps.latent_channels);
                resp.downsample_factor = Some(caps.downsample_factor);
                resp.model_id = Some(caps.model_id);
            }
            Ok(resp)
        }
        Request::Encode { image, .. } => image.to_grid().and_then(|g| backend.encode(&g)).map(|z| Response {
            latent: Some(WireTensor::from_grid(&z)),
            ..Response::ok(id)
        }),
        Request::Decode { latent, .. } => latent.to_grid().and_then(|z| backend.decode(&z)).map(|img| Response {
            image: Some(WireTensor::from_grid(&img)),
            ..Response::ok(id)
        }),
        Request::Velocity { latent, t, prompt, .. } => latent.to_grid().and_then(|z| {
            let q = VelocityQuery {
                latent: &z,
                t,
                prompt: &prompt,
                step: 0,
                branch: Branch::Source,
            };
            backend.velocity(&q).map(|v| Response {
                velocity: Some(WireTensor::from_grid(&v)),
                ..Response::ok(id)
            })
        }),
    };
    result.unwrap_or_else(|e| Response::error(Some(id), e.to_string()))
}

/// Serves one connection until the peer disconnects or sends `shutdown`.
///
/// Malformed frames get an error response and the connection stays open.
/// Returns `true` when a shutdown was requested.
pub fn serve_connection(stream: TcpStream, backend: &mut dyn VelocityBackend) -> Result<bool> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(frame) = read_frame(&mut reader)? {
        let resp = match serde_json::from_slice::<Request>(&frame) {
            Ok(req) => {
                let shutdown = matches!(req, Request::Shutdown { .. });
                let resp = handle(backend, req);
                if shutdown {
                    send_json(&mut writer, &resp)?;
                    return Ok(true);
                }
                resp
            }
            Err(e) => {
                let id = serde_json::from_slice::<serde_json::Value>(&frame)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_u64()));
                warn!("malformed request: {e}");
                Response::error(id, format!("malformed request: {e}"))
            }
        };
        send_json(&mut writer, &resp)?;
    }
    Ok(false)
}

/// A single-connection-at-a-time server on `127.0.0.1`, wrapping any backend.
///
/// Used to exercise the remote client against known velocity fields.
pub struct LoopbackServer {
    addr: SocketAddr,
    handle: Option<JoinHandle<()>>,
}

impl LoopbackServer {
    pub fn spawn(mut backend: Box<dyn VelocityBackend + Send>) -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let handle = thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                match serve_connection(stream, backend.as_mut()) {
                    Ok(true) => break,
                    Ok(false) => debug!("loopback client disconnected"),
                    Err(e) => debug!("loopback connection ended: {e}"),
                }
            }
        });
        Ok(Self {
            addr,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Waits for the server thread; returns once a client sent `shutdown`.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
