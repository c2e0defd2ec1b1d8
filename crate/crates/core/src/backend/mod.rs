//! Velocity fields `V(z, t, c)` and the image↔latent codec behind one
//! interface, with analytic, trace-replay and remote implementations.

mod analytic;
mod codec;
mod remote;
mod server;
mod trace;
pub mod wire;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Grid;

pub use analytic::{ChannelMap, LinearBackend, LinearField, PointMassBackend};
pub use codec::AnalyticCodec;
pub use remote::{RemoteBackend, RetryPolicy};
pub use server::{serve_connection, LoopbackServer};
pub use trace::{RecordingBackend, ReplayBackend, TraceRecord, VelocityTrace};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub source: String,
    pub target: String,
}

impl PromptPair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Result<Self> {
        let pair = Self {
            source: source.into(),
            target: target.into(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        if self.source.is_empty() || self.target.is_empty() {
            return Err(Error::invalid("prompts must be non-empty"));
        }
        Ok(())
    }

    pub fn swapped(&self) -> Self {
        Self {
            source: self.target.clone(),
            target: self.source.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Source,
    Target,
}

impl Branch {
    pub fn as_u8(self) -> u8 {
        match self {
            Branch::Source => 0,
            Branch::Target => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Branch::Source),
            1 => Some(Branch::Target),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Source => "src",
            Branch::Target => "tar",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One velocity evaluation. `step` and `branch` identify the call for trace
/// recording and replay; analytic and remote backends ignore them.
#[derive(Clone, Copy, Debug)]
pub struct VelocityQuery<'a> {
    pub latent: &'a Grid,
    pub t: f64,
    pub prompt: &'a str,
    pub step: u32,
    pub branch: Branch,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub latent_channels: usize,
    pub downsample_factor: usize,
    pub model_id: String,
}

pub trait VelocityBackend {
    fn capabilities(&self) -> Capabilities;

    /// `V(latent, t, prompt)`; the result always has the latent's shape.
    fn velocity(&mut self, query: &VelocityQuery<'_>) -> Result<Grid>;

    /// Map a `3×H×W` image in `[0, 1]` to a latent.
    fn encode(&mut self, image: &Grid) -> Result<Grid>;

    fn decode(&mut self, latent: &Grid) -> Result<Grid>;
}

impl<B: VelocityBackend + ?Sized> VelocityBackend for Box<B> {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn velocity(&mut self, query: &VelocityQuery<'_>) -> Result<Grid> {
        (**self).velocity(query)
    }

    fn encode(&mut self, image: &Grid) -> Result<Grid> {
        (**self).encode(image)
    }

    fn decode(&mut self, latent: &Grid) -> Result<Grid> {
        (**self).decode(latent)
    }
}

/// FNV-1a over the little-endian bit patterns of the entries and the shape.
pub fn latent_hash(g: &Grid) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let s = g.shape();
    let dims = [s.channels as u64, s.height as u64, s.width as u64];
    dims.iter()
        .map(|d| d.to_le_bytes())
        .chain(g.data().iter().map(|v| v.to_bits().to_le_bytes()))
        .flatten()
        .fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}
