//! Recorded velocity traces and the `VTRC` file format.
//!
//! ```text
//! "VTRC"  version:u16
//! record* = step:u32 branch:u8 t:f64 channels:u32 height:u32 width:u32 payload:f32[C·H·W]
//! ```
//!
//! All integers and floats are little-endian; payloads are row-major `C,H,W`.
//! Records run to end of file.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::codec::AnalyticCodec;
use super::{latent_hash, Branch, Capabilities, VelocityBackend, VelocityQuery};
use crate::error::{Error, Result};
use crate::field::{Grid, Shape};

pub const TRACE_MAGIC: &[u8; 4] = b"VTRC";
pub const TRACE_VERSION: u16 = 1;
const RECORD_HEADER_LEN: usize = 4 + 1 + 8 + 12;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub step: u32,
    pub branch: Branch,
    pub t: f64,
    /// Hash of the query latent; only known for traces recorded in-process.
    pub latent_hash: Option<u64>,
    pub velocity: Grid,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VelocityTrace {
    records: Vec<TraceRecord>,
}

impl VelocityTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a record; the velocity is stored at `f32` precision.
    pub fn push(&mut self, mut record: TraceRecord) {
        record.velocity = record.velocity.quantized_f32();
        self.records.push(record);
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(TRACE_MAGIC)?;
        w.write_all(&TRACE_VERSION.to_le_bytes())?;
        for r in &self.records {
            let s = r.velocity.shape();
            w.write_all(&r.step.to_le_bytes())?;
            w.write_all(&[r.branch.as_u8()])?;
            w.write_all(&r.t.to_le_bytes())?;
            for d in [s.channels, s.height, s.width] {
                let d = u32::try_from(d).map_err(|_| Error::invalid("trace dimension exceeds u32"))?;
                w.write_all(&d.to_le_bytes())?;
            }
            let mut payload = Vec::with_capacity(s.len() * 4);
            for v in r.velocity.to_f32() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&payload)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != TRACE_MAGIC {
            return Err(Error::parse(0, "missing VTRC magic"));
        }
        let version = u16::from_le_bytes(cur.array("version")?);
        if version != TRACE_VERSION {
            return Err(Error::parse(4, format!("unsupported trace version {version}")));
        }
        let mut records = Vec::new();
        while cur.pos < bytes.len() {
            let start = cur.pos as u64;
            if bytes.len() - cur.pos < RECORD_HEADER_LEN {
                return Err(Error::parse(start, "truncated record header"));
            }
            let step = u32::from_le_bytes(cur.array("step")?);
            let branch_code = cur.array::<1>("branch")?[0];
            let branch = Branch::from_u8(branch_code)
                .ok_or_else(|| Error::parse(start + 4, format!("invalid branch code {branch_code}")))?;
            let t = f64::from_le_bytes(cur.array("t")?);
            let mut dims = [0usize; 3];
            for d in &mut dims {
                *d = u32::from_le_bytes(cur.array("shape")?) as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2]);
            let payload_at = cur.pos as u64;
            let payload = cur.take(shape.len() * 4, "payload")?;
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let velocity = Grid::from_f32(shape, &data).map_err(|e| Error::parse(payload_at, e.to_string()))?;
            records.push(TraceRecord {
                step,
                branch,
                t,
                latent_hash: None,
                velocity,
            });
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// A single-record trace holding one tensor, used for raw latent dumps.
    pub fn single(grid: &Grid) -> Self {
        let mut trace = Self::new();
        trace.push(TraceRecord {
            step: 0,
            branch: Branch::Source,
            t: 0.0,
            latent_hash: None,
            velocity: grid.clone(),
        });
        trace
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

/// Serves velocities from a recorded trace.
///
/// Lookups key on `(step, branch)`; repeated queries for the same key (several
/// pairing draws per step) consume that key's records in recorded order.
/// In strict mode the query time must match bit-for-bit, and so must the latent
/// hash when the trace carries one.
#[derive(Clone, Debug)]
pub struct ReplayBackend {
    codec: AnalyticCodec,
    index: HashMap<(u32, Branch), Vec<usize>>,
    cursors: HashMap<(u32, Branch), usize>,
    trace: VelocityTrace,
    strict: bool,
}

impl ReplayBackend {
    pub fn new(trace: VelocityTrace, codec: AnalyticCodec) -> Self {
        let mut index: HashMap<(u32, Branch), Vec<usize>> = HashMap::new();
        for (i, r) in trace.records.iter().enumerate() {
            index.entry((r.step, r.branch)).or_default().push(i);
        }
        Self {
            codec,
            index,
            cursors: HashMap::new(),
            trace,
            strict: false,
        }
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    /// Rewind every key so the trace can be replayed again.
    pub fn rewind(&mut self) {
        self.cursors.clear();
    }
}

impl VelocityBackend for ReplayBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            latent_channels: self.codec.latent_channels,
            downsample_factor: self.codec.factor,
            model_id: "replay".into(),
        }
    }

    fn velocity(&mut self, q: &VelocityQuery<'_>) -> Result<Grid> {
        let key = (q.step, q.branch);
        let occurrence = *self.cursors.get(&key).unwrap_or(&0);
        let miss = || Error::TraceMiss {
            step: q.step,
            branch: q.branch.name(),
            occurrence,
        };
        let idx = *self.index.get(&key).and_then(|v| v.get(occurrence)).ok_or_else(miss)?;
        let record = &self.trace.records[idx];
        if self.strict {
            if record.t.to_bits() != q.t.to_bits() {
                return Err(Error::TraceMismatch {
                    step: q.step,
                    detail: format!("recorded t = {}, queried t = {}", record.t, q.t),
                });
            }
            if let Some(h) = record.latent_hash {
                if h != latent_hash(q.latent) {
                    return Err(Error::TraceMismatch {
                        step: q.step,
                        detail: format!("{} latent hash differs from recording", q.branch),
                    });
                }
            }
        }
        q.latent.ensure_same_shape(&record.velocity)?;
        self.cursors.insert(key, occurrence + 1);
        Ok(record.velocity.clone())
    }

    fn encode(&mut self, image: &Grid) -> Result<Grid> {
        self.codec.encode(image)
    }

    fn decode(&mut self, latent: &Grid) -> Result<Grid> {
        self.codec.decode(latent)
    }
}

/// Wraps a backend and records every velocity it returns.
///
/// Returned velocities are rounded to `f32` so that a replay of the written
/// trace feeds the editor exactly the values it saw while recording.
#[derive(Debug)]
pub struct RecordingBackend<B> {
    inner: B,
    trace: VelocityTrace,
}

impl<B: VelocityBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            trace: VelocityTrace::new(),
        }
    }

    pub fn trace(&self) -> &VelocityTrace {
        &self.trace
    }

    pub fn into_parts(self) -> (B, VelocityTrace) {
        (self.inner, self.trace)
    }
}

impl<B: VelocityBackend> VelocityBackend for RecordingBackend<B> {
    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn velocity(&mut self, q: &VelocityQuery<'_>) -> Result<Grid> {
        let v = self.inner.velocity(q)?.quantized_f32();
        self.trace.push(TraceRecord {
            step: q.step,
            branch: q.branch,
            t: q.t,
            latent_hash: Some(latent_hash(q.latent)),
            velocity: v.clone(),
        });
        Ok(v)
    }

    fn encode(&mut self, image: &Grid) -> Result<Grid> {
        self.inner.encode(image)
    }

    fn decode(&mut self, latent: &Grid) -> Result<Grid> {
        self.inner.decode(latent)
    }
}
