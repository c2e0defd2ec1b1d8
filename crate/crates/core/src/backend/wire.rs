//! Framed JSON protocol shared with model-server sidecars.
//!
//! Each frame is a 4-byte big-endian payload length followed by UTF-8 JSON.
//! Tensors travel as `{"shape": [C, H, W], "data": <base64 of little-endian
//! f32, row-major>}`. Every response carries `"status"` and echoes the
//! request's `"id"`.

use std::io::{self, Read, Write};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid, Shape};

/// Frames above this size are rejected before allocation.
pub const MAX_FRAME_LEN: usize = 1 << 30;

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|&n| n as usize <= MAX_FRAME_LEN)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream before the header.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut header = [0u8; 4];
    let mut filled = 0;
    while filled < header.len() {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds limit"),
        ));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Some(payload))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireTensor {
    pub shape: [usize; 3],
    pub data: String,
}

impl WireTensor {
    pub fn from_grid(g: &Grid) -> Self {
        let s = g.shape();
        let mut bytes = Vec::with_capacity(s.len() * 4);
        for v in g.to_f32() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            shape: [s.channels, s.height, s.width],
            data: BASE64.encode(bytes),
        }
    }

    pub fn to_grid(&self) -> Result<Grid> {
        let shape = Shape::new(self.shape[0], self.shape[1], self.shape[2]);
        let bytes = BASE64
            .decode(&self.data)
            .map_err(|e| Error::Remote(format!("bad tensor base64: {e}")))?;
        if bytes.len() != shape.len() * 4 {
            return Err(Error::Remote(format!(
                "tensor payload has {} bytes, shape {shape} needs {}",
                bytes.len(),
                shape.len() * 4
            )));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Grid::from_f32(shape, &data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Hello {
        id: u64,
    },
    Encode {
        id: u64,
        image: WireTensor,
    },
    Decode {
        id: u64,
        latent: WireTensor,
    },
    Velocity {
        id: u64,
        latent: WireTensor,
        t: f64,
        prompt: String,
    },
    Shutdown {
        id: u64,
    },
}

impl Request {
    pub fn id(&self) -> u64 {
        match self {
            Request::Hello { id }
            | Request::Encode { id, .. }
            | Request::Decode { id, .. }
            | Request::Velocity { id, .. }
            | Request::Shutdown { id } => *id,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Option<u64>,
    pub status: Option<Status>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downsample_factor: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<WireTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<WireTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<WireTensor>,
}

impl Response {
    pub fn ok(id: u64) -> Self {
        Self {
            id: Some(id),
            status: Some(Status::Ok),
            ..Self::default()
        }
    }

    pub fn error(id: Option<u64>, message: impl Into<String>) -> Self {
        Self {
            id,
            status: Some(Status::Error),
            message: Some(message.into()),
            ..Self::default()
        }
    }
}

pub fn send_json<T: Serialize>(w: &mut impl Write, msg: &T) -> io::Result<()> {
    let bytes = serde_json::to_vec(msg).map_err(io::Error::other)?;
    write_frame(w, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    #[test]
    fn frame_header_is_big_endian() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"{\"op\":\"hello\",\"id\":1}").unwrap();
        assert_eq!(&buf[..4], &[0, 0, 0, 21]);
        let mut r = &buf[..];
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"{\"op\":\"hello\",\"id\":1}");
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn truncated_frame_is_an_error() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"abcdef").unwrap();
        assert!(read_frame(&mut &buf[..7]).is_err());
        assert!(read_frame(&mut &buf[..2]).is_err());
    }

    #[test]
    fn request_json_shape() {
        let g = Grid::filled(Shape::new(1, 1, 1), 1.0).unwrap();
        let req = Request::Velocity {
            id: 9,
            latent: WireTensor::from_grid(&g),
            t: 0.5,
            prompt: "rain".into(),
        };
        let v: serde_json::Value = serde_json::to_value(&req).unwrap();
        assert_eq!(v["op"], "velocity");
        assert_eq!(v["id"], 9);
        assert_eq!(v["latent"]["shape"], serde_json::json!([1, 1, 1]));
        // 1.0f32 little-endian = 00 00 80 3f
        assert_eq!(v["latent"]["data"], "AACAPw==");
        let hello: Request = serde_json::from_str(r#"{"op":"hello","id":3}"#).unwrap();
        assert_eq!(hello, Request::Hello { id: 3 });
    }

    #[test]
    fn tensor_is_f32_exact() {
        let g = oracle::random_grid(Shape::new(2, 3, 5), 12);
        let back = WireTensor::from_grid(&g).to_grid().unwrap();
        assert_eq!(back, g.quantized_f32());
        let bad = WireTensor {
            shape: [2, 2, 2],
            data: BASE64.encode([0u8; 12]),
        };
        assert!(bad.to_grid().is_err());
    }
}
