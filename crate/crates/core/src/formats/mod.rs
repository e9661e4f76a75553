//! Readers and writers for depth grids, mixture-parameter fields, images,
//! evaluation manifests and ordinal pair labels.
//!
//! Byte-level codecs take and return buffers; the `*_file` helpers add
//! file-system access and pick a codec by extension.

mod image;
mod manifest;
mod pairs;
mod pfm;
mod png16;
mod raw;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::grid::GridError;

pub use self::image::{read_image, read_image_file, write_png8};
pub use self::manifest::{read_manifest, read_manifest_file, write_manifest, Manifest, ManifestEntry};
pub use self::pairs::{read_pairs, write_pairs};
pub use self::pfm::{
    read_bimodal, read_pfm, read_pfm_image, write_bimodal, write_pfm, write_pfm_image,
};
pub use self::png16::{read_png16, write_png16, Png16Sidecar};
pub use self::raw::{read_raw_f32le, write_raw_f32le};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed header: {0}")]
    Header(String),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("3-channel PFM (\"PF\") cannot be read as a depth grid")]
    ColorPfm,
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("PNG error: {0}")]
    Png(String),
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing required field at line {line}, column {column}: {message}")]
    MissingField {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate manifest id {0:?}")]
    DuplicateId(String),
    #[error("manifest entry {0:?} has neither gt_path nor pairs_path")]
    NoTarget(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Bimodal(#[from] crate::bimodal::BimodalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, FormatError>;

/// On-disk encodings for depth grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthFileFormat {
    PfmGray,
    Png16WithSidecar,
    RawF32Le,
}

impl DepthFileFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "pfm" => Ok(DepthFileFormat::PfmGray),
            "png" => Ok(DepthFileFormat::Png16WithSidecar),
            "raw" | "f32" => Ok(DepthFileFormat::RawF32Le),
            _ => Err(FormatError::Unsupported(format!(
                "cannot infer depth format from {}",
                path.display()
            ))),
        }
    }
}

/// Location of the scale/offset sidecar that accompanies a 16-bit PNG depth file.
pub fn sidecar_path(png_path: &Path) -> PathBuf {
    let mut s = png_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| FormatError::Io {
        path: path.to_owned(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_depth_file(path: &Path) -> Result<crate::grid::DepthGrid> {
    let bytes = read_file(path)?;
    match DepthFileFormat::from_path(path)? {
        DepthFileFormat::PfmGray => read_pfm(&bytes),
        DepthFileFormat::RawF32Le => read_raw_f32le(&bytes),
        DepthFileFormat::Png16WithSidecar => {
            let side = sidecar_path(path);
            let text = read_file(&side)?;
            let sidecar: Png16Sidecar = serde_json::from_slice(&text)
                .map_err(|e| FormatError::Invalid(format!("{}: {e}", side.display())))?;
            read_png16(&bytes, &sidecar)
        }
    }
}

pub fn write_depth_file(path: &Path, grid: &crate::grid::DepthGrid) -> Result<()> {
    match DepthFileFormat::from_path(path)? {
        DepthFileFormat::PfmGray => write_file(path, &write_pfm(grid)),
        DepthFileFormat::RawF32Le => write_file(path, &write_raw_f32le(grid)),
        DepthFileFormat::Png16WithSidecar => {
            let (bytes, sidecar) = write_png16(grid)?;
            write_file(path, &bytes)?;
            let json = serde_json::to_vec_pretty(&sidecar)
                .map_err(|e| FormatError::Invalid(e.to_string()))?;
            write_file(&sidecar_path(path), &json)
        }
    }
}
