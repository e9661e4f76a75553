//! Dense scalar grids, RGB/gray images, and the resampling and normalization
//! primitives the rest of the pipeline is built on.
//!
//! Values are stored as `f32`; every reduction (sums, medians, deviations) is
//! carried out in `f64`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("expected {expected} values for a {width}x{height} grid, got {actual}")]
    LengthMismatch {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value at valid pixel ({x}, {y})")]
    NonFinite { x: usize, y: usize },
    #[error("rectangle {rect:?} does not fit inside a {width}x{height} grid")]
    OutOfBounds { rect: Rect, width: usize, height: usize },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("unsupported input: {0}")]
    Unsupported(&'static str),
    #[error("no valid pixels")]
    EmptyInput,
    #[error("degenerate scale: valid values are constant")]
    DegenerateScale,
    #[error("degenerate range: fewer than two distinct valid values")]
    DegenerateRange,
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
}

pub type Result<T, E = GridError> = std::result::Result<T, E>;

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }

    pub const fn full(width: usize, height: usize) -> Self {
        Rect::new(0, 0, width, height)
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.right() <= width && self.bottom() <= height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }
}

/// Median and mean absolute deviation of a grid's valid values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationStats {
    /// Median.
    pub t: f64,
    /// Mean absolute deviation around the median.
    pub s: f64,
}

/// Row-major grid of inverse-depth scalars with an optional validity mask.
#[derive(Debug, Clone)]
pub struct DepthGrid {
    width: usize,
    height: usize,
    values: Vec<f32>,
    mask: Option<Vec<bool>>,
}

impl DepthGrid {
    /// Builds a fully valid grid. Every value must be finite.
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        Self::with_mask(width, height, values, None)
    }

    /// Builds a grid with an optional mask (`true` = valid). Values at
    /// invalid positions may be anything, including NaN.
    pub fn with_mask(
        width: usize,
        height: usize,
        values: Vec<f32>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some(m) = &mask {
            check_dims(width, height, m.len())?;
        }
        for (i, v) in values.iter().enumerate() {
            let valid = mask.as_ref().is_none_or(|m| m[i]);
            if valid && !v.is_finite() {
                return Err(GridError::NonFinite {
                    x: i % width,
                    y: i / width,
                });
            }
        }
        // An all-true mask carries no information.
        let mask = mask.filter(|m| m.iter().any(|&b| !b));
        Ok(DepthGrid {
            width,
            height,
            values,
            mask,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width.saturating_mul(height)])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.is_valid_index(y * self.width + x)
    }

    pub fn is_valid_index(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
    }

    pub fn is_fully_valid(&self) -> bool {
        self.mask.is_none()
    }

    pub fn valid_count(&self) -> usize {
        match &self.mask {
            None => self.values.len(),
            Some(m) => m.iter().filter(|&&b| b).count(),
        }
    }

    /// Valid values widened to `f64`, in row-major order.
    pub fn valid_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.is_valid_index(*i))
            .map(|(_, &v)| v as f64)
            .collect()
    }

    /// Applies `f` to every value, keeping the mask. Invalid pixels are left untouched.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Result<Self> {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.is_valid_index(i) { f(v) } else { v })
            .collect();
        Self::with_mask(self.width, self.height, values, self.mask.clone())
    }

    /// Elementwise AND of both grids' masks; `None` when both are fully valid.
    pub fn joint_mask(&self, other: &DepthGrid) -> Result<Option<Vec<bool>>> {
        self.ensure_same_dims(other)?;
        Ok(match (&self.mask, &other.mask) {
            (None, None) => None,
            (Some(a), None) | (None, Some(a)) => Some(a.clone()),
            (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(&x, &y)| x && y).collect()),
        })
    }

    pub fn ensure_same_dims(&self, other: &DepthGrid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(GridError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Replaces the mask; the result must still satisfy the finiteness invariant.
    pub fn with_replaced_mask(self, mask: Option<Vec<bool>>) -> Result<Self> {
        Self::with_mask(self.width, self.height, self.values, mask)
    }
}

impl PartialEq for DepthGrid {
    /// Equal dims, equal validity, and equal values at valid pixels.
    fn eq(&self, other: &Self) -> bool {
        self.dims() == other.dims()
            && (0..self.values.len()).all(|i| {
                let va = self.is_valid_index(i);
                va == other.is_valid_index(i) && (!va || self.values[i] == other.values[i])
            })
    }
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(GridError::EmptyDimensions { width, height });
    }
    let expected = width
        .checked_mul(height)
        .ok_or(GridError::EmptyDimensions { width, height })?;
    if len != expected {
        return Err(GridError::LengthMismatch {
            width,
            height,
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// Interleaved 1- or 3-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(GridError::Channels(channels));
        }
        check_dims(width, height, data.len() / channels)?;
        if !data.len().is_multiple_of(channels) {
            return Err(GridError::LengthMismatch {
                width,
                height,
                expected: width * height * channels,
                actual: data.len(),
            });
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn crop(&self, r: Rect) -> Result<Image> {
        if !r.fits_within(self.width, self.height) {
            return Err(GridError::OutOfBounds {
                rect: r,
                width: self.width,
                height: self.height,
            });
        }
        let data = crop_plane(&self.data, self.width, self.channels, r);
        Image::new(r.w, r.h, self.channels, data)
    }

    pub fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Result<Image> {
        check_dims(new_w, new_h, new_w.saturating_mul(new_h))?;
        let data = resample_bilinear(
            &self.data,
            self.width,
            self.height,
            self.channels,
            new_w,
            new_h,
        );
        Image::new(new_w, new_h, self.channels, data)
    }
}

fn crop_plane<T: Copy>(src: &[T], src_w: usize, channels: usize, r: Rect) -> Vec<T> {
    let mut out = Vec::with_capacity(r.w * r.h * channels);
    for y in r.y..r.bottom() {
        let start = (y * src_w + r.x) * channels;
        out.extend_from_slice(&src[start..start + r.w * channels]);
    }
    out
}

/// Source coordinate and blend weight along one axis under half-pixel-centered
/// mapping, clamped to the edge samples.
fn axis_taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src_len - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

fn resample_bilinear(
    src: &[f32],
    w: usize,
    h: usize,
    channels: usize,
    new_w: usize,
    new_h: usize,
) -> Vec<f32> {
    let xs = axis_taps(w, new_w);
    let ys = axis_taps(h, new_h);
    let mut out = Vec::with_capacity(new_w * new_h * channels);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..channels {
                let at = |x: usize, y: usize| src[(y * w + x) * channels + c] as f64;
                let top = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * fx;
                let bot = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * fx;
                out.push((top + (bot - top) * fy) as f32);
            }
        }
    }
    out
}

/// Extracts the sub-grid under `r`; the mask is cropped identically.
pub fn crop(grid: &DepthGrid, r: Rect) -> Result<DepthGrid> {
    if !r.fits_within(grid.width, grid.height) {
        return Err(GridError::OutOfBounds {
            rect: r,
            width: grid.width,
            height: grid.height,
        });
    }
    let values = crop_plane(&grid.values, grid.width, 1, r);
    let mask = grid.mask.as_ref().map(|m| crop_plane(m, grid.width, 1, r));
    DepthGrid::with_mask(r.w, r.h, values, mask)
}

/// Bilinear resampling with half-pixel centers. Requires a fully valid grid.
pub fn resize_bilinear(grid: &DepthGrid, new_w: usize, new_h: usize) -> Result<DepthGrid> {
    if !grid.is_fully_valid() {
        return Err(GridError::Unsupported("resampling a grid with invalid pixels"));
    }
    check_dims(new_w, new_h, new_w.saturating_mul(new_h))?;
    let values = resample_bilinear(&grid.values, grid.width, grid.height, 1, new_w, new_h);
    DepthGrid::new(new_w, new_h, values)
}

/// Median of `values`; the mean of the two middle order statistics for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(GridError::EmptyInput);
    }
    let mut v = values.to_vec();
    let n = v.len();
    let mid = n / 2;
    let (lower, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        Ok(upper)
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(0.5 * (lower_max + upper))
    }
}

/// Median / mean-absolute-deviation statistics of `values`.
pub fn ssi_stats(values: &[f64]) -> Result<NormalizationStats> {
    let t = median(values)?;
    let s = values.iter().map(|v| (v - t).abs()).sum::<f64>() / values.len() as f64;
    Ok(NormalizationStats { t, s })
}

/// Shift/scale normalization `(v - median) / MAD` over valid pixels.
pub fn normalize_ssi(grid: &DepthGrid) -> Result<(DepthGrid, NormalizationStats)> {
    let stats = ssi_stats(&grid.valid_values())?;
    if stats.s <= 0.0 {
        return Err(GridError::DegenerateScale);
    }
    let out = grid.map(|v| ((v as f64 - stats.t) / stats.s) as f32)?;
    Ok((out, stats))
}

/// Maps valid values linearly onto `[-1, 1]`.
pub fn normalize_minmax(grid: &DepthGrid) -> Result<DepthGrid> {
    let (lo, hi) = valid_range(grid).ok_or(GridError::DegenerateRange)?;
    if hi <= lo {
        return Err(GridError::DegenerateRange);
    }
    let span = hi - lo;
    grid.map(|v| (2.0 * (v as f64 - lo) / span - 1.0) as f32)
}

/// `(min, max)` over valid pixels, or `None` when nothing is valid.
pub fn valid_range(grid: &DepthGrid) -> Option<(f64, f64)> {
    grid.values
        .iter()
        .enumerate()
        .filter(|(i, _)| grid.is_valid_index(*i))
        .map(|(_, &v)| v as f64)
        .fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
}
