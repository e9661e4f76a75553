//! Precomputed depth served from a directory of PFM files.

use std::path::{Path, PathBuf};

use super::{BackendError, DepthBackend, DepthRequest};
use crate::formats::{self, FormatError};
use crate::grid::{DepthGrid, Rect};

/// `{size}` expands to nothing when the output matches the crop size and to
/// `_{out_w}x{out_h}` otherwise.
pub const DEFAULT_NAMING: &str = "{id}_crop_{x}_{y}_{w}_{h}{size}.pfm";

fn key(naming: &str, req: &DepthRequest<'_>) -> String {
    let r = req.region;
    let size = if (req.out_w, req.out_h) == (r.w, r.h) {
        String::new()
    } else {
        format!("_{}x{}", req.out_w, req.out_h)
    };
    naming
        .replace("{id}", req.image_id)
        .replace("{x}", &r.x.to_string())
        .replace("{y}", &r.y.to_string())
        .replace("{w}", &r.w.to_string())
        .replace("{h}", &r.h.to_string())
        .replace("{out_w}", &req.out_w.to_string())
        .replace("{out_h}", &req.out_h.to_string())
        .replace("{size}", &size)
}

#[derive(Debug, Clone)]
pub struct DirectoryBackend {
    root: PathBuf,
    naming: String,
    concurrency: usize,
}

impl DirectoryBackend {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirectoryBackend {
            root: root.into(),
            naming: DEFAULT_NAMING.to_string(),
            concurrency: 16,
        }
    }

    pub fn with_naming(mut self, naming: impl Into<String>) -> Self {
        self.naming = naming.into();
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// File that would answer `req`.
    pub fn path_for(&self, req: &DepthRequest<'_>) -> PathBuf {
        self.root.join(key(&self.naming, req))
    }
}

impl DepthBackend for DirectoryBackend {
    fn infer(&self, req: &DepthRequest<'_>) -> Result<DepthGrid, BackendError> {
        let path = self.path_for(req);
        let mut candidates = vec![path.clone()];
        // A whole image at full resolution may also be stored as plain `{id}.pfm`.
        if req.region == Rect::full(req.source_dims.0, req.source_dims.1)
            && (req.out_w, req.out_h) == req.source_dims
        {
            candidates.push(self.root.join(format!("{}.pfm", req.image_id)));
        }
        for p in &candidates {
            match formats::read_depth_file(p) {
                Ok(g) => return Ok(g),
                Err(FormatError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(e.into()),
            }
        }
        Err(BackendError::Missing { expected: path })
    }

    fn max_concurrency(&self) -> usize {
        self.concurrency
    }
}

/// Passes calls through to `inner` and stores every result where a
/// [`DirectoryBackend`] over the same root will find it.
pub struct RecordingBackend<B> {
    inner: B,
    target: DirectoryBackend,
}

impl<B: DepthBackend> RecordingBackend<B> {
    pub fn new(inner: B, root: impl Into<PathBuf>) -> Self {
        RecordingBackend {
            inner,
            target: DirectoryBackend::new(root),
        }
    }

    pub fn with_naming(mut self, naming: impl Into<String>) -> Self {
        self.target = self.target.with_naming(naming);
        self
    }
}

impl<B: DepthBackend> DepthBackend for RecordingBackend<B> {
    fn infer(&self, req: &DepthRequest<'_>) -> Result<DepthGrid, BackendError> {
        let g = self.inner.infer(req)?;
        std::fs::create_dir_all(self.target.root())?;
        formats::write_depth_file(&self.target.path_for(req), &g)?;
        Ok(g)
    }

    fn max_concurrency(&self) -> usize {
        self.inner.max_concurrency()
    }

    fn native_size(&self) -> Option<usize> {
        self.inner.native_size()
    }
}
