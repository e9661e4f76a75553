//! Training-objective terms evaluated on depth grids: shift/scale-invariant
//! absolute error, Laplacian edge error, and a perceptual distance over
//! min-max normalized maps, plus their weighted combination.

use thiserror::Error;

use crate::grid::{self, DepthGrid, GridError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("grid of {0}x{1} is smaller than the 3x3 kernel")]
    TooSmall(usize, usize),
    #[error("perceptual backend failed: {0}")]
    Perceptual(String),
    #[error("perceptual backend returned an invalid distance {0}")]
    InvalidDistance(f64),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Relative weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub alpha_l: f64,
    pub alpha_edge: f64,
    pub alpha_lpips: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_l: 0.4,
            alpha_edge: 0.2,
            alpha_lpips: 0.4,
        }
    }
}

impl LossWeights {
    pub fn new(alpha_l: f64, alpha_edge: f64, alpha_lpips: f64) -> Option<Self> {
        let all = [alpha_l, alpha_edge, alpha_lpips];
        all.iter()
            .all(|w| w.is_finite() && *w >= 0.0)
            .then_some(LossWeights {
                alpha_l,
                alpha_edge,
                alpha_lpips,
            })
    }
}

/// Perceptual distance between two maps already scaled to `[-1, 1]`.
///
/// Implementations must return 0 for identical inputs and a finite,
/// nonnegative value otherwise.
pub trait PerceptualBackend {
    fn distance(&self, a: &DepthGrid, b: &DepthGrid) -> std::result::Result<f64, String>;
}

/// Mean absolute difference over jointly valid pixels. A stand-in for a
/// learned perceptual metric.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanAbsDiff;

impl PerceptualBackend for MeanAbsDiff {
    fn distance(&self, a: &DepthGrid, b: &DepthGrid) -> std::result::Result<f64, String> {
        let mask = a.joint_mask(b).map_err(|e| e.to_string())?;
        let mut sum = 0.0;
        let mut n = 0usize;
        for (i, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
            if mask.as_ref().is_none_or(|m| m[i]) {
                sum += (*x as f64 - *y as f64).abs();
                n += 1;
            }
        }
        if n == 0 {
            return Err("no jointly valid pixels".into());
        }
        Ok(sum / n as f64)
    }
}

/// Values of each term plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossBreakdown {
    pub ssi: f64,
    pub edge: f64,
    pub lpips: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_components(ssi: f64, edge: f64, lpips: f64, w: &LossWeights) -> Self {
        LossBreakdown {
            ssi,
            edge,
            lpips,
            total: w.alpha_l * ssi + w.alpha_edge * edge + w.alpha_lpips * lpips,
        }
    }
}

/// `(v - t) / s` for the given values, rejecting zero scale.
fn ssi_normalized(values: &[f64]) -> Result<Vec<f64>> {
    let st = grid::ssi_stats(values)?;
    if st.s <= 0.0 {
        return Err(GridError::DegenerateScale.into());
    }
    Ok(values.iter().map(|v| (v - st.t) / st.s).collect())
}

/// Mean absolute difference of the two independently normalized maps, both
/// normalized over the joint valid mask.
pub fn loss_ssi(pred: &DepthGrid, gt: &DepthGrid) -> Result<f64> {
    let mask = pred.joint_mask(gt)?;
    let pick = |g: &DepthGrid| -> Vec<f64> {
        g.values()
            .iter()
            .enumerate()
            .filter(|(i, _)| mask.as_ref().is_none_or(|m| m[*i]))
            .map(|(_, &v)| v as f64)
            .collect()
    };
    let (p, g) = (pick(pred), pick(gt));
    if p.is_empty() {
        return Err(GridError::EmptyInput.into());
    }
    let (p, g) = (ssi_normalized(&p)?, ssi_normalized(&g)?);
    Ok(p.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64)
}

const LAPLACIAN: [[f64; 3]; 3] = [[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]];

fn laplacian_f64(values: &[f64], w: usize, h: usize) -> Vec<f64> {
    let at = |x: isize, y: isize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        values[yc * w + xc]
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (ky, row) in LAPLACIAN.iter().enumerate() {
                for (kx, k) in row.iter().enumerate() {
                    acc += k * at(x + kx as isize - 1, y + ky as isize - 1);
                }
            }
            out.push(acc);
        }
    }
    out
}

fn ensure_kernel_fits(g: &DepthGrid) -> Result<()> {
    if g.width() < 3 || g.height() < 3 {
        return Err(LossError::TooSmall(g.width(), g.height()));
    }
    if !g.is_fully_valid() {
        return Err(GridError::Unsupported("laplacian of a grid with invalid pixels").into());
    }
    Ok(())
}

/// 3×3 Laplacian (8-neighbour) with replicate padding.
pub fn laplacian(g: &DepthGrid) -> Result<DepthGrid> {
    ensure_kernel_fits(g)?;
    let v: Vec<f64> = g.values().iter().map(|&x| x as f64).collect();
    let out = laplacian_f64(&v, g.width(), g.height());
    Ok(DepthGrid::new(
        g.width(),
        g.height(),
        out.into_iter().map(|x| x as f32).collect(),
    )?)
}

/// RMS difference of the Laplacians of the shift/scale-normalized maps.
pub fn loss_edge(pred: &DepthGrid, gt: &DepthGrid) -> Result<f64> {
    pred.ensure_same_dims(gt)?;
    ensure_kernel_fits(pred)?;
    ensure_kernel_fits(gt)?;
    let (w, h) = pred.dims();
    let p = ssi_normalized(&pred.valid_values())?;
    let g = ssi_normalized(&gt.valid_values())?;
    let (lp, lg) = (laplacian_f64(&p, w, h), laplacian_f64(&g, w, h));
    let mse = lp.iter().zip(&lg).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / lp.len() as f64;
    Ok(mse.sqrt())
}

pub fn loss_lpips(
    pred: &DepthGrid,
    gt: &DepthGrid,
    backend: &dyn PerceptualBackend,
) -> Result<f64> {
    pred.ensure_same_dims(gt)?;
    let p = grid::normalize_minmax(pred)?;
    let g = grid::normalize_minmax(gt)?;
    let d = backend.distance(&p, &g).map_err(LossError::Perceptual)?;
    if !d.is_finite() || d < 0.0 {
        return Err(LossError::InvalidDistance(d));
    }
    Ok(d)
}

pub fn loss_total(
    pred: &DepthGrid,
    gt: &DepthGrid,
    backend: &dyn PerceptualBackend,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let ssi = loss_ssi(pred, gt)?;
    let edge = loss_edge(pred, gt)?;
    let lpips = loss_lpips(pred, gt, backend)?;
    Ok(LossBreakdown::from_components(ssi, edge, lpips, weights))
}
