//! JSON run configuration: the edit settings plus inputs, backend and outputs.
//!
//! Every field has a default, so `{}` is a complete config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{
    AnalyticCodec, LinearBackend, LinearField, PointMassBackend, PromptPair, RemoteBackend, ReplayBackend, RetryPolicy,
    VelocityBackend, VelocityTrace,
};
use crate::editor::EditConfig;
use crate::error::{Error, Result};
use crate::field::{Grid, Shape};
use crate::oracle::random_grid;
use crate::schedule::derive_seed;

/// Which velocity field to edit with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    /// Constant means `μ_src`, `μ_tar` over the whole latent.
    PointMass { mu_src: f64, mu_tar: f64 },
    /// `V = a·z + b` per prompt. `b` is a constant plus a seeded uniform
    /// texture of the given amplitude, so the field has spatial detail.
    Linear {
        scale_src: f64,
        scale_tar: f64,
        bias_src: f64,
        bias_tar: f64,
        texture_seed: u64,
        texture_amplitude: f64,
    },
    Remote {
        address: String,
        #[serde(default)]
        retry: RetryPolicy,
    },
    Replay {
        trace: PathBuf,
        #[serde(default)]
        strict: bool,
    },
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Linear {
            scale_src: 0.5,
            scale_tar: 0.5,
            bias_src: 0.0,
            bias_tar: -0.5,
            texture_seed: 0,
            texture_amplitude: 0.1,
        }
    }
}

impl BackendSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendSpec::PointMass { .. } => "point_mass",
            BackendSpec::Linear { .. } => "linear",
            BackendSpec::Remote { .. } => "remote",
            BackendSpec::Replay { .. } => "replay",
        }
    }

    /// Defaults for a backend named on the command line.
    pub fn for_kind(kind: &str) -> Result<Self> {
        Ok(match kind {
            "point_mass" => BackendSpec::PointMass {
                mu_src: 0.0,
                mu_tar: 1.0,
            },
            "linear" => BackendSpec::default(),
            "remote" => BackendSpec::Remote {
                address: "127.0.0.1:7070".into(),
                retry: RetryPolicy::default(),
            },
            "replay" => BackendSpec::Replay {
                trace: PathBuf::new(),
                strict: false,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown backend {other:?} (expected point_mass, linear, remote or replay)"
                )))
            }
        })
    }

    fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("backend parameter {name} must be finite")))
            }
        };
        match self {
            BackendSpec::PointMass { mu_src, mu_tar } => {
                finite("mu_src", *mu_src)?;
                finite("mu_tar", *mu_tar)
            }
            BackendSpec::Linear {
                scale_src,
                scale_tar,
                bias_src,
                bias_tar,
                texture_amplitude,
                ..
            } => {
                finite("scale_src", *scale_src)?;
                finite("scale_tar", *scale_tar)?;
                finite("bias_src", *bias_src)?;
                finite("bias_tar", *bias_tar)?;
                finite("texture_amplitude", *texture_amplitude)
            }
            BackendSpec::Remote { address, retry } => {
                if address.is_empty() {
                    return Err(Error::Config("remote backend needs an address".into()));
                }
                if retry.max_attempts == 0 {
                    return Err(Error::Config("retry.max_attempts must be at least 1".into()));
                }
                Ok(())
            }
            BackendSpec::Replay { trace, .. } => require_file(trace, "trace"),
        }
    }

    /// Builds the backend for one image and encodes that image.
    ///
    /// Analytic and replay kinds encode with `codec` and size their fields
    /// to the resulting latent; a remote backend encodes itself.
    pub fn open_for_image(
        &self,
        image: &Grid,
        codec: AnalyticCodec,
        prompts: &PromptPair,
    ) -> Result<(Box<dyn VelocityBackend + Send>, Grid)> {
        if let BackendSpec::Remote { address, retry } = self {
            let mut backend = RemoteBackend::connect(address.clone(), retry.clone())?;
            let z0 = backend.encode(image)?;
            return Ok((Box::new(backend), z0));
        }
        let z0 = codec.encode(image)?;
        let backend = self.open_analytic(codec, prompts, z0.shape())?;
        Ok((backend, z0))
    }

    fn open_analytic(
        &self,
        codec: AnalyticCodec,
        prompts: &PromptPair,
        latent: Shape,
    ) -> Result<Box<dyn VelocityBackend + Send>> {
        Ok(match self {
            BackendSpec::PointMass { mu_src, mu_tar } => Box::new(
                PointMassBackend::new(codec)
                    .with_mean(prompts.source.clone(), Grid::filled(latent, *mu_src)?)
                    .with_mean(prompts.target.clone(), Grid::filled(latent, *mu_tar)?),
            ),
            BackendSpec::Linear {
                scale_src,
                scale_tar,
                bias_src,
                bias_tar,
                texture_seed,
                texture_amplitude,
            } => {
                let field = |scale: f64, bias: f64, index: u64| -> Result<LinearField> {
                    let texture = random_grid(latent, derive_seed(*texture_seed, index));
                    Ok(LinearField {
                        map: crate::backend::ChannelMap::PerChannel(vec![scale; latent.channels]),
                        bias: texture.map(|v| bias + texture_amplitude * v),
                    })
                };
                Box::new(
                    LinearBackend::new(codec)
                        .with_field(prompts.source.clone(), field(*scale_src, *bias_src, 0)?)?
                        .with_field(prompts.target.clone(), field(*scale_tar, *bias_tar, 1)?)?,
                )
            }
            BackendSpec::Replay { trace, strict } => {
                Box::new(ReplayBackend::new(VelocityTrace::load(trace)?, codec).strict(*strict))
            }
            BackendSpec::Remote { .. } => unreachable!("remote backends are opened by open_for_image"),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub edit: EditConfig,
    /// Input images (PPM or PNG).
    pub inputs: Vec<PathBuf>,
    /// Box layouts, one per input, or none for empty layouts.
    pub layouts: Vec<PathBuf>,
    pub prompts: PromptPair,
    pub backend: BackendSpec,
    pub codec: AnalyticCodec,
    pub output_dir: PathBuf,
    /// Record every velocity evaluation to this VTRC file (single input only).
    pub trace_record: Option<PathBuf>,
    /// Worker pool width; 0 means one per logical core.
    pub threads: usize,
    /// Clamp decoded images to `[0, 1]`.
    pub clamp: bool,
    /// Also write the edited latent as `<stem>.latent.vtrc`.
    pub dump_latent: bool,
    /// Record wall-clock step timings in the logs.
    pub timing: bool,
    /// Log level when `FLOWFORGE_LOG` is unset.
    pub verbosity: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            edit: EditConfig::default(),
            inputs: Vec::new(),
            layouts: Vec::new(),
            prompts: PromptPair {
                source: "An urban scene on a sunny day".into(),
                target: "An urban scene on a snowy day".into(),
            },
            backend: BackendSpec::default(),
            codec: AnalyticCodec::default(),
            output_dir: PathBuf::from("out"),
            trace_record: None,
            threads: 0,
            clamp: true,
            dump_latent: false,
            timing: false,
            verbosity: "warn".into(),
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

/// True when `dir` exists as a directory or could be created.
fn creatable_dir(dir: &Path) -> bool {
    let mut cur = Some(dir);
    while let Some(p) = cur {
        if p.as_os_str().is_empty() {
            return true;
        }
        if p.exists() {
            return p.is_dir();
        }
        cur = p.parent();
    }
    true
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    /// Settings only; paths are checked by [`RunConfig::validate`].
    pub fn validate_settings(&self) -> Result<()> {
        self.edit.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.prompts.validate().map_err(|e| Error::Config(e.to_string()))?;
        AnalyticCodec::new(self.codec.factor, self.codec.latent_channels).map_err(|e| Error::Config(e.to_string()))?;
        if self.verbosity.parse::<log::LevelFilter>().is_err() {
            return Err(Error::Config(format!("unknown verbosity {:?}", self.verbosity)));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_settings()?;
        self.backend.validate()?;
        if self.inputs.is_empty() {
            return Err(Error::Config("no input images given".into()));
        }
        if !self.layouts.is_empty() && self.layouts.len() != self.inputs.len() {
            return Err(Error::Config(format!(
                "{} layouts for {} inputs (give one per input or none)",
                self.layouts.len(),
                self.inputs.len()
            )));
        }
        if self.trace_record.is_some() && self.inputs.len() != 1 {
            return Err(Error::Config("trace recording needs exactly one input".into()));
        }
        for p in &self.inputs {
            require_file(p, "input")?;
        }
        for p in &self.layouts {
            require_file(p, "layout")?;
        }
        let mut stems = std::collections::HashSet::new();
        for p in &self.inputs {
            if !stems.insert(p.file_stem()) {
                return Err(Error::Config(format!("duplicate input name {}", p.display())));
            }
        }
        if !creatable_dir(&self.output_dir) {
            return Err(Error::Config(format!(
                "output directory {} cannot be created",
                self.output_dir.display()
            )));
        }
        Ok(())
    }

    pub fn worker_count(&self) -> usize {
        if self.threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.threads
        }
    }
}
