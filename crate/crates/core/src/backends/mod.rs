//! Depth estimators behind one contract: given an image crop and output
//! dimensions, return a fully valid grid of exactly those dimensions.
//! Outputs must be deterministic for identical requests.

mod directory;
mod process;
mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

use crate::formats::FormatError;
use crate::grid::{DepthGrid, Image, Rect};

pub use self::directory::{DirectoryBackend, RecordingBackend, DEFAULT_NAMING};
pub use self::process::{ProcessBackend, ProcessPerceptual, InputFormat, DEFAULT_TIMEOUT, TIMEOUT_ENV};
pub use self::synthetic::{Jitter, SceneKind, SyntheticBackend, SyntheticScene};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no precomputed depth for this request (expected {expected})")]
    Missing { expected: PathBuf },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("failed to start {program:?}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("external command timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("external command exited with {}: {stderr}", code.map_or("a signal".to_string(), |c| format!("code {c}")))]
    Exit { code: Option<i32>, stderr: String },
    #[error("malformed backend output: {0}")]
    MalformedOutput(String),
    #[error("backend broke its contract: {0}")]
    Contract(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid backend spec: {0}")]
    Spec(String),
    #[error("{0}")]
    Other(String),
}

/// One inference call. `image` holds only the pixels the backend may see:
/// the crop for a tile, or the resized whole image for a reference pass.
#[derive(Debug, Clone, Copy)]
pub struct DepthRequest<'a> {
    pub image: &'a Image,
    pub image_id: &'a str,
    /// Dimensions of the full source image.
    pub source_dims: (usize, usize),
    /// Area of the source image that `image` depicts.
    pub region: Rect,
    pub out_w: usize,
    pub out_h: usize,
}

pub trait DepthBackend: Send + Sync {
    fn infer(&self, req: &DepthRequest<'_>) -> Result<DepthGrid, BackendError>;

    /// Maximum number of calls the backend accepts at once.
    fn max_concurrency(&self) -> usize {
        1
    }

    /// Preferred longest side for whole-image inference, if the model has one.
    fn native_size(&self) -> Option<usize> {
        None
    }
}

impl<T: DepthBackend + ?Sized> DepthBackend for Box<T> {
    fn infer(&self, req: &DepthRequest<'_>) -> Result<DepthGrid, BackendError> {
        (**self).infer(req)
    }
    fn max_concurrency(&self) -> usize {
        (**self).max_concurrency()
    }
    fn native_size(&self) -> Option<usize> {
        (**self).native_size()
    }
}

/// Parsed form of the backend mini-language:
/// `synthetic:<kind>?key=value&...`, `dir:<path>` or `cmd:<command template>`.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Synthetic(SyntheticScene, SyntheticOptions),
    Directory(PathBuf),
    Command(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticOptions {
    pub concurrency: usize,
    pub native_size: Option<usize>,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            concurrency: 64,
            native_size: None,
        }
    }
}

impl BackendSpec {
    pub fn parse(spec: &str) -> Result<BackendSpec, BackendError> {
        let (scheme, rest) = spec
            .split_once(':')
            .ok_or_else(|| BackendError::Spec(format!("{spec:?} has no scheme (synthetic:, dir: or cmd:)")))?;
        match scheme {
            "synthetic" => parse_synthetic(rest),
            "dir" if !rest.is_empty() => Ok(BackendSpec::Directory(PathBuf::from(rest))),
            "cmd" => {
                let argv = shell_words::split(rest).map_err(|e| BackendError::Spec(e.to_string()))?;
                if argv.is_empty() {
                    return Err(BackendError::Spec("empty command template".into()));
                }
                if !rest.contains("{input}") || !rest.contains("{output}") {
                    return Err(BackendError::Spec(
                        "command template needs {input} and {output} placeholders".into(),
                    ));
                }
                Ok(BackendSpec::Command(rest.to_string()))
            }
            "dir" => Err(BackendError::Spec("dir: needs a path".into())),
            other => Err(BackendError::Spec(format!("unknown backend scheme {other:?}"))),
        }
    }

    /// Instantiates the backend. Command backends exchange files under `io_dir`.
    pub fn build(&self, io_dir: Option<PathBuf>) -> Result<Box<dyn DepthBackend>, BackendError> {
        Ok(match self {
            BackendSpec::Synthetic(scene, opts) => Box::new(
                SyntheticBackend::new(scene.clone())
                    .with_concurrency(opts.concurrency)
                    .with_native_size(opts.native_size),
            ),
            BackendSpec::Directory(root) => Box::new(DirectoryBackend::new(root.clone())),
            BackendSpec::Command(template) => Box::new(ProcessBackend::new(
                template.clone(),
                io_dir.unwrap_or_else(std::env::temp_dir),
            )?),
        })
    }
}

fn parse_synthetic(rest: &str) -> Result<BackendSpec, BackendError> {
    let (kind, query) = rest.split_once('?').unwrap_or((rest, ""));
    let kind = match kind {
        "ramp" => SceneKind::Ramp,
        "radial" => SceneKind::Radial,
        "sinusoid" => SceneKind::Sinusoid,
        other => return Err(BackendError::Spec(format!("unknown synthetic scene {other:?}"))),
    };
    let mut scene = SyntheticScene::new(kind);
    let mut opts = SyntheticOptions::default();
    let mut seed = 0u64;
    let mut jitter = None;
    for kv in query.split('&').filter(|s| !s.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| BackendError::Spec(format!("expected key=value, got {kv:?}")))?;
        let bad = |_| BackendError::Spec(format!("bad value for {k}: {v:?}"));
        match k {
            "seed" => seed = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "jitter" => jitter = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "base" => scene.base = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "amp" => scene.amp = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "freq" => scene.freq = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "tilt" => scene.tilt = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "concurrency" => {
                opts.concurrency = v
                    .parse()
                    .ok()
                    .filter(|&c| c > 0)
                    .ok_or_else(|| bad(String::new()))?
            }
            "native" => {
                opts.native_size = Some(v.parse().ok().filter(|&c| c > 0).ok_or_else(|| bad(String::new()))?)
            }
            other => return Err(BackendError::Spec(format!("unknown synthetic option {other:?}"))),
        }
    }
    if let Some(amplitude) = jitter {
        scene.jitter = Some(Jitter { seed, amplitude });
    }
    scene.validate().map_err(BackendError::Spec)?;
    Ok(BackendSpec::Synthetic(scene, opts))
}
