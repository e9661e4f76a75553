//! High-resolution depth by patch inference: tile the image, run the backend
//! on every tile, fit each tile's scale and offset to a low-resolution
//! whole-image reference, and blend the aligned tiles with linear ramps.
//!
//! The reference only fixes each tile's affine gauge; it never contributes
//! pixels to the output.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::backends::{BackendError, DepthBackend, DepthRequest};
use crate::grid::{self, DepthGrid, GridError, Image, Rect};

pub const DEFAULT_PATCH: usize = 640;
pub const DEFAULT_OVERLAP: usize = 320;
pub const DEFAULT_REFERENCE_SIZE: usize = 518;
pub const DEFAULT_PASSTHROUGH_MAX_SIDE: usize = 960;
pub const DEFAULT_DEGENERATE_VARIANCE_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum BoostError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("no jointly valid pixels to align")]
    EmptyAlignment,
    #[error("expected {expected} patches for the tile plan, got {actual}")]
    PatchCount { expected: usize, actual: usize },
    #[error("patch {index} is {actual:?}, tile is {expected:?}")]
    PatchDims {
        index: usize,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("patch {0} has invalid pixels")]
    PatchHoles(usize),
    #[error("reference inference failed: {0}")]
    Reference(#[source] BackendError),
    #[error("tile {index} failed: {source}")]
    Tile {
        index: usize,
        #[source]
        source: BackendError,
    },
    #[error("full-image inference failed: {0}")]
    Passthrough(#[source] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoostConfig {
    pub patch: usize,
    pub overlap: usize,
    /// Longest side of the whole-image reference inference.
    pub reference_size: usize,
    /// Images whose longest side is at most this are inferred in one call.
    pub passthrough_max_side: usize,
    pub degenerate_variance_eps: f64,
    /// Upper bound on concurrent tile inferences; the backend's own limit also applies.
    pub jobs: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            patch: DEFAULT_PATCH,
            overlap: DEFAULT_OVERLAP,
            reference_size: DEFAULT_REFERENCE_SIZE,
            passthrough_max_side: DEFAULT_PASSTHROUGH_MAX_SIDE,
            degenerate_variance_eps: DEFAULT_DEGENERATE_VARIANCE_EPS,
            jobs: 1,
        }
    }
}

impl BoostConfig {
    /// Defaults, with the reference size taken from the backend when it declares one.
    pub fn for_backend(backend: &dyn DepthBackend) -> Self {
        BoostConfig {
            reference_size: backend.native_size().unwrap_or(DEFAULT_REFERENCE_SIZE),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), BoostError> {
        if self.overlap == 0 || self.overlap >= self.patch {
            return Err(BoostError::Config(format!(
                "overlap must satisfy 0 < overlap < patch (got overlap {} with patch {})",
                self.overlap, self.patch
            )));
        }
        if self.reference_size == 0 {
            return Err(BoostError::Config("reference size must be at least 1".into()));
        }
        if !(self.degenerate_variance_eps >= 0.0) {
            return Err(BoostError::Config("variance epsilon must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Scale and offset taking one grid's values onto another's range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineAlignment {
    pub s: f64,
    pub o: f64,
}

impl AffineAlignment {
    pub const IDENTITY: AffineAlignment = AffineAlignment { s: 1.0, o: 0.0 };

    pub fn apply(&self, grid: &DepthGrid) -> Result<DepthGrid, GridError> {
        grid.map(|v| (self.s * v as f64 + self.o) as f32)
    }
}

/// Tile placement along one image axis, with the blend weight of every tile
/// at every covered coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisPlan {
    pub starts: Vec<usize>,
    pub tile_len: usize,
    /// `weights[i][u]` is tile `i`'s weight at coordinate `starts[i] + u`.
    weights: Vec<Vec<f64>>,
}

impl AxisPlan {
    fn new(len: usize, patch: usize, overlap: usize) -> AxisPlan {
        if len <= patch {
            return AxisPlan {
                starts: vec![0],
                tile_len: len,
                weights: vec![vec![1.0; len]],
            };
        }
        let span = len - patch;
        let stride = patch - overlap;
        let n = span.div_ceil(stride) + 1;
        let starts: Vec<usize> = (0..n)
            .map(|i| (2 * i * span + (n - 1)) / (2 * (n - 1)))
            .collect();

        // Linear ramps across the overlap with each neighbour.
        let raw: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let (s, e) = (starts[i], starts[i] + patch);
                (s..e)
                    .map(|x| {
                        let c = x as f64 + 0.5;
                        let rise = if i > 0 {
                            let prev_end = starts[i - 1] + patch;
                            ((c - s as f64) / (prev_end - s) as f64).min(1.0)
                        } else {
                            1.0
                        };
                        let fall = if i + 1 < n {
                            let next = starts[i + 1];
                            ((e as f64 - c) / (e - next) as f64).min(1.0)
                        } else {
                            1.0
                        };
                        rise.min(fall)
                    })
                    .collect()
            })
            .collect();
        let mut total = vec![0.0; len];
        for (i, w) in raw.iter().enumerate() {
            for (u, v) in w.iter().enumerate() {
                total[starts[i] + u] += v;
            }
        }
        let weights = raw
            .into_iter()
            .enumerate()
            .map(|(i, w)| {
                w.into_iter()
                    .enumerate()
                    .map(|(u, v)| v / total[starts[i] + u])
                    .collect()
            })
            .collect();
        AxisPlan {
            starts,
            tile_len: patch,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Weight of tile `i` at absolute coordinate `x`; zero outside the tile.
    pub fn weight(&self, i: usize, x: usize) -> f64 {
        let s = self.starts[i];
        if x < s || x >= s + self.tile_len {
            0.0
        } else {
            self.weights[i][x - s]
        }
    }
}

/// Row-major tiling of an image plus separable blend weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TilePlan {
    pub image_w: usize,
    pub image_h: usize,
    pub patch: usize,
    pub overlap: usize,
    pub cols: AxisPlan,
    pub rows: AxisPlan,
    pub tiles: Vec<Rect>,
}

impl TilePlan {
    /// Blend weight of `tile` at pixel `(x, y)`.
    pub fn weight(&self, tile: usize, x: usize, y: usize) -> f64 {
        let (r, c) = (tile / self.cols.len(), tile % self.cols.len());
        self.cols.weight(c, x) * self.rows.weight(r, y)
    }
}

/// Evenly distributes tiles along each axis: `n = ceil((L - patch) / (patch - overlap)) + 1`
/// tiles starting at `round(i * (L - patch) / (n - 1))`.
pub fn plan_tiles(image_w: usize, image_h: usize, cfg: &BoostConfig) -> TilePlan {
    let patch = cfg.patch.max(1);
    let overlap = cfg.overlap.min(patch - 1);
    let cols = AxisPlan::new(image_w.max(1), patch, overlap);
    let rows = AxisPlan::new(image_h.max(1), patch, overlap);
    let mut tiles = Vec::with_capacity(cols.len() * rows.len());
    for &y in &rows.starts {
        for &x in &cols.starts {
            tiles.push(Rect::new(x, y, cols.tile_len, rows.tile_len));
        }
    }
    TilePlan {
        image_w: image_w.max(1),
        image_h: image_h.max(1),
        patch,
        overlap,
        cols,
        rows,
        tiles,
    }
}

pub fn solve_alignment(reference: &DepthGrid, patch: &DepthGrid) -> Result<AffineAlignment, BoostError> {
    solve_alignment_with(reference, patch, DEFAULT_DEGENERATE_VARIANCE_EPS)
}

/// Least-squares `(s, o)` minimizing `sum (ref - (s * patch + o))^2` over jointly
/// valid pixels. A patch whose variance is below `eps` gets `s = 1` and a
/// mean-matching offset.
pub fn solve_alignment_with(
    reference: &DepthGrid,
    patch: &DepthGrid,
    eps: f64,
) -> Result<AffineAlignment, BoostError> {
    let mask = reference.joint_mask(patch)?;
    let pairs: Vec<(f64, f64)> = reference
        .values()
        .iter()
        .zip(patch.values())
        .enumerate()
        .filter(|(i, _)| mask.as_ref().is_none_or(|m| m[*i]))
        .map(|(_, (&r, &p))| (r as f64, p as f64))
        .collect();
    if pairs.is_empty() {
        return Err(BoostError::EmptyAlignment);
    }
    let n = pairs.len() as f64;
    let mean_r = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_p = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut var_p, mut cov) = (0.0, 0.0);
    for &(r, p) in &pairs {
        let dp = p - mean_p;
        var_p += dp * dp;
        cov += dp * (r - mean_r);
    }
    var_p /= n;
    cov /= n;
    if var_p < eps {
        return Ok(AffineAlignment {
            s: 1.0,
            o: mean_r - mean_p,
        });
    }
    let s = cov / var_p;
    Ok(AffineAlignment {
        s,
        o: mean_r - s * mean_p,
    })
}

/// Weighted sum of the patches under the plan's blend weights.
pub fn blend(plan: &TilePlan, patches: &[DepthGrid]) -> Result<DepthGrid, BoostError> {
    if patches.len() != plan.tiles.len() {
        return Err(BoostError::PatchCount {
            expected: plan.tiles.len(),
            actual: patches.len(),
        });
    }
    let (w, h) = (plan.image_w, plan.image_h);
    let mut acc = vec![0.0f64; w * h];
    let ncols = plan.cols.len();
    for (index, (tile, patch)) in plan.tiles.iter().zip(patches).enumerate() {
        if patch.dims() != (tile.w, tile.h) {
            return Err(BoostError::PatchDims {
                index,
                expected: (tile.w, tile.h),
                actual: patch.dims(),
            });
        }
        if !patch.is_fully_valid() {
            return Err(BoostError::PatchHoles(index));
        }
        let (r, c) = (index / ncols, index % ncols);
        let wx = &plan.cols.weights[c];
        let wy = &plan.rows.weights[r];
        for (v, &wyv) in wy.iter().enumerate() {
            let src = &patch.values()[v * tile.w..(v + 1) * tile.w];
            let dst = &mut acc[(tile.y + v) * w + tile.x..(tile.y + v) * w + tile.x + tile.w];
            for ((d, &s), &wxv) in dst.iter_mut().zip(src).zip(wx) {
                *d += wxv * wyv * s as f64;
            }
        }
    }
    Ok(DepthGrid::new(w, h, acc.into_iter().map(|v| v as f32).collect())?)
}

/// Reference resolution: longest side becomes `reference_size`, aspect preserved.
pub fn reference_dims(w: usize, h: usize, reference_size: usize) -> (usize, usize) {
    let long = w.max(h) as f64;
    let scale = |v: usize| ((v as f64 * reference_size as f64 / long).round() as usize).max(1);
    if w >= h {
        (reference_size, scale(h))
    } else {
        (scale(w), reference_size)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TileReport {
    pub rect: [usize; 4],
    pub alignment: AffineAlignment,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoostReport {
    pub passthrough: bool,
    pub backend_calls: usize,
    pub reference_dims: Option<(usize, usize)>,
    pub tiles: Vec<TileReport>,
    #[serde(serialize_with = "as_secs")]
    pub elapsed: Duration,
}

fn as_secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

#[derive(Debug, Clone)]
pub struct BoostOutput {
    pub depth: DepthGrid,
    pub report: BoostReport,
}

/// Runs the backend once and checks the output honours the request.
type TileResult = Result<(DepthGrid, AffineAlignment), BackendError>;

pub(crate) fn infer_checked(
    backend: &dyn DepthBackend,
    req: &DepthRequest<'_>,
) -> Result<DepthGrid, BackendError> {
    let out = backend.infer(req)?;
    if out.dims() != (req.out_w, req.out_h) {
        return Err(BackendError::Contract(format!(
            "requested {}x{}, backend returned {}x{}",
            req.out_w,
            req.out_h,
            out.width(),
            out.height()
        )));
    }
    if !out.is_fully_valid() {
        return Err(BackendError::Contract("backend returned invalid pixels".into()));
    }
    Ok(out)
}

fn variance(g: &DepthGrid) -> f64 {
    let v = g.values();
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n
}

/// Tile inference and alignment against the upsampled reference.
fn process_tile(
    image: &Image,
    image_id: &str,
    reference_up: &DepthGrid,
    tile: Rect,
    backend: &dyn DepthBackend,
    cfg: &BoostConfig,
) -> Result<(DepthGrid, AffineAlignment), BackendError> {
    let crop = image.crop(tile).map_err(|e| BackendError::Other(e.to_string()))?;
    let req = DepthRequest {
        image: &crop,
        image_id,
        source_dims: image.dims(),
        region: tile,
        out_w: tile.w,
        out_h: tile.h,
    };
    let patch = infer_checked(backend, &req)?;
    let target = grid::crop(reference_up, tile).map_err(|e| BackendError::Other(e.to_string()))?;
    let alignment = if variance(&target) < cfg.degenerate_variance_eps {
        // Flat reference: keep the patch's own relief and match means only.
        solve_alignment_with(&target, &patch, f64::INFINITY)
    } else {
        solve_alignment_with(&target, &patch, cfg.degenerate_variance_eps)
    }
    .map_err(|e| BackendError::Other(e.to_string()))?;
    let aligned = alignment
        .apply(&patch)
        .map_err(|e| BackendError::Other(e.to_string()))?;
    Ok((aligned, alignment))
}

/// Full pipeline. Images at or under the pass-through size go through a single
/// backend call unchanged.
pub fn simple_boost(
    image: &Image,
    image_id: &str,
    backend: &dyn DepthBackend,
    cfg: &BoostConfig,
) -> Result<BoostOutput, BoostError> {
    cfg.validate()?;
    let started = Instant::now();
    let (w, h) = image.dims();
    let full = Rect::full(w, h);

    if w.max(h) <= cfg.passthrough_max_side {
        let req = DepthRequest {
            image,
            image_id,
            source_dims: (w, h),
            region: full,
            out_w: w,
            out_h: h,
        };
        let depth = infer_checked(backend, &req).map_err(BoostError::Passthrough)?;
        return Ok(BoostOutput {
            depth,
            report: BoostReport {
                passthrough: true,
                backend_calls: 1,
                reference_dims: None,
                tiles: Vec::new(),
                elapsed: started.elapsed(),
            },
        });
    }

    let (rw, rh) = reference_dims(w, h, cfg.reference_size);
    let small = if (rw, rh) == (w, h) {
        image.clone()
    } else {
        image.resize_bilinear(rw, rh)?
    };
    let req = DepthRequest {
        image: &small,
        image_id,
        source_dims: (w, h),
        region: full,
        out_w: rw,
        out_h: rh,
    };
    let reference = infer_checked(backend, &req).map_err(BoostError::Reference)?;
    let reference_up = grid::resize_bilinear(&reference, w, h)?;

    let plan = plan_tiles(w, h, cfg);
    let n = plan.tiles.len();
    let workers = cfg.jobs.max(1).min(backend.max_concurrency().max(1)).min(n);
    let slots: Mutex<Vec<Option<TileResult>>> =
        Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = process_tile(image, image_id, &reference_up, plan.tiles[i], backend, cfg);
                if r.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });

    let mut patches = Vec::with_capacity(n);
    let mut tiles = Vec::with_capacity(n);
    let slots = slots.into_inner().unwrap();
    // Lowest failing index wins so errors are reported deterministically.
    if let Some((index, Some(Err(_)))) = slots
        .iter()
        .enumerate()
        .find(|(_, s)| matches!(s, Some(Err(_))))
    {
        let source = slots.into_iter().nth(index).flatten().unwrap().unwrap_err();
        return Err(BoostError::Tile { index, source });
    }
    for (i, slot) in slots.into_iter().enumerate() {
        let (patch, alignment) = slot
            .expect("every tile is processed when none failed")
            .expect("failures handled above");
        let r = plan.tiles[i];
        tiles.push(TileReport {
            rect: [r.x, r.y, r.w, r.h],
            alignment,
        });
        patches.push(patch);
    }
    let depth = blend(&plan, &patches)?;
    Ok(BoostOutput {
        depth,
        report: BoostReport {
            passthrough: false,
            backend_calls: n + 1,
            reference_dims: Some((rw, rh)),
            tiles,
            elapsed: started.elapsed(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};

    fn cfg() -> BoostConfig {
        BoostConfig::default()
    }

    #[test]
    fn exact_fit_single_tile() {
        let p = plan_tiles(640, 640, &cfg());
        assert_eq!(p.tiles, vec![Rect::new(0, 0, 640, 640)]);
    }

    #[test]
    fn starts_for_1024() {
        let a = AxisPlan::new(1024, 640, 320);
        assert_eq!(a.starts, vec![0, 192, 384]);
    }

    #[test]
    fn fig_size_plan() {
        let p = plan_tiles(2048, 1024, &cfg());
        assert_eq!(p.tiles.len(), 18);
        assert_eq!(p.cols.starts, vec![0, 282, 563, 845, 1126, 1408]);
        assert_eq!(p.rows.starts, vec![0, 192, 384]);
    }

    #[test]
    fn small_axis_shrinks_tile() {
        let p = plan_tiles(2000, 300, &cfg());
        assert!(p.tiles.iter().all(|t| t.h == 300 && t.y == 0 && t.w == 640));
    }

    #[test]
    fn config_validation() {
        let bad = BoostConfig { overlap: 700, ..cfg() };
        assert!(matches!(bad.validate(), Err(BoostError::Config(_))));
        let bad = BoostConfig { overlap: 0, ..cfg() };
        assert!(bad.validate().is_err());
        let bad = BoostConfig { reference_size: 0, ..cfg() };
        assert!(bad.validate().is_err());
        cfg().validate().unwrap();
    }

    #[test]
    fn reference_dims_keep_aspect() {
        assert_eq!(reference_dims(1920, 1280, 518), (518, 345));
        assert_eq!(reference_dims(1024, 2048, 518), (259, 518));
        assert_eq!(reference_dims(5000, 1, 518), (518, 1));
    }

    fn random_grid(w: usize, h: usize, seed: u64) -> DepthGrid {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DepthGrid::from_fn(w, h, |_, _| rng.random_range(-3.0f32..3.0)).unwrap()
    }

    #[test]
    fn alignment_examples() {
        let p = random_grid(8, 8, 1);
        assert_eq!(solve_alignment(&p, &p).unwrap(), AffineAlignment { s: 1.0, o: 0.0 });
        let target = p.map(|v| 2.0 * v + 3.0).unwrap();
        let a = solve_alignment(&target, &p).unwrap();
        assert!((a.s - 2.0).abs() < 1e-9 && (a.o - 3.0).abs() < 1e-9, "{a:?}");
    }

    #[test]
    fn alignment_fallback_and_errors() {
        let flat = DepthGrid::filled(3, 3, 2.0).unwrap();
        let r = random_grid(3, 3, 2);
        let a = solve_alignment(&r, &flat).unwrap();
        let mean = r.values().iter().map(|&v| v as f64).sum::<f64>() / 9.0;
        assert_eq!(a.s, 1.0);
        assert!((a.o - (mean - 2.0)).abs() < 1e-12);
        let none = DepthGrid::with_mask(1, 1, vec![0.0], Some(vec![false])).unwrap();
        let one = DepthGrid::new(1, 1, vec![0.0]).unwrap();
        assert!(matches!(solve_alignment(&none, &one), Err(BoostError::EmptyAlignment)));
        assert!(matches!(solve_alignment(&r, &random_grid(2, 2, 3)), Err(BoostError::Grid(_))));
    }

    #[test]
    fn alignment_matches_normal_equations() {
        let (r, p) = (random_grid(8, 8, 4), random_grid(8, 8, 5));
        // Raw (uncentered) 2x2 normal equations.
        let (mut spp, mut sp, mut spr, mut sr) = (0.0f64, 0.0, 0.0, 0.0);
        for (&a, &b) in r.values().iter().zip(p.values()) {
            let (a, b) = (a as f64, b as f64);
            spp += b * b;
            sp += b;
            spr += b * a;
            sr += a;
        }
        let n = 64.0;
        let det = spp * n - sp * sp;
        let s = (spr * n - sp * sr) / det;
        let o = (spp * sr - sp * spr) / det;
        let a = solve_alignment(&r, &p).unwrap();
        assert!((a.s - s).abs() <= 1e-9 * s.abs().max(1.0));
        assert!((a.o - o).abs() <= 1e-9 * o.abs().max(1.0));
    }

    #[test]
    fn blend_single_and_constant() {
        let plan = plan_tiles(5, 4, &cfg());
        let g = random_grid(5, 4, 6);
        assert_eq!(blend(&plan, std::slice::from_ref(&g)).unwrap(), g);

        let c = BoostConfig { patch: 8, overlap: 4, ..cfg() };
        let plan = plan_tiles(12, 3, &c);
        assert_eq!(plan.tiles.len(), 2);
        let patches = vec![DepthGrid::filled(8, 3, 4.5).unwrap(); 2];
        let out = blend(&plan, &patches).unwrap();
        assert!(out.values().iter().all(|&v| v == 4.5));
    }

    #[test]
    fn blend_ramp_across_overlap() {
        let c = BoostConfig { patch: 8, overlap: 4, ..cfg() };
        let plan = plan_tiles(12, 1, &c);
        assert_eq!(plan.cols.starts, vec![0, 4]);
        let patches = vec![DepthGrid::filled(8, 1, 0.0).unwrap(), DepthGrid::filled(8, 1, 10.0).unwrap()];
        let out = blend(&plan, &patches).unwrap();
        // Scalar oracle: overlap [4, 8), rising weight (x + 0.5 - 4) / 4 for the right tile.
        for x in 0..12 {
            let w_right = ((x as f64 + 0.5 - 4.0) / 4.0).clamp(0.0, 1.0);
            let expect = if x < 4 { 0.0 } else if x >= 8 { 10.0 } else { 10.0 * w_right };
            assert!((out.get(x, 0) as f64 - expect).abs() < 1e-6, "x={x}");
        }
        let overlap: Vec<f32> = (4..8).map(|x| out.get(x, 0)).collect();
        assert!(overlap.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn blend_rejects_mismatches() {
        let plan = plan_tiles(5, 4, &cfg());
        assert!(matches!(blend(&plan, &[]), Err(BoostError::PatchCount { .. })));
        assert!(matches!(
            blend(&plan, &[random_grid(4, 4, 1)]),
            Err(BoostError::PatchDims { .. })
        ));
    }

    proptest! {
        #[test]
        fn partition_of_unity(w in 1usize..3000, h in 1usize..40, patch in 4usize..700, ov_frac in 0.05f64..0.95) {
            let overlap = ((patch as f64 * ov_frac) as usize).clamp(1, patch - 1);
            let c = BoostConfig { patch, overlap, ..cfg() };
            let plan = plan_tiles(w, h, &c);
            for x in 0..w {
                let s: f64 = (0..plan.cols.len()).map(|i| plan.cols.weight(i, x)).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            let starts = &plan.cols.starts;
            prop_assert_eq!(starts[0], 0);
            prop_assert_eq!(starts.last().unwrap() + plan.cols.tile_len, w);
            for pair in starts.windows(2) {
                prop_assert!(pair[0] + plan.cols.tile_len - pair[1] >= overlap);
            }
        }

        #[test]
        fn alignment_equivariance(seed in 0u64..500, a in 0.2f64..5.0, b in -4.0f64..4.0) {
            let (r, p) = (random_grid(6, 5, seed), random_grid(6, 5, seed + 10_000));
            let moved = p.map(|v| (a * v as f64 + b) as f32).unwrap();
            let base = solve_alignment(&r, &p).unwrap();
            let got = solve_alignment(&r, &moved).unwrap();
            let (es, eo) = (base.s / a, base.o - base.s * b / a);
            prop_assert!((got.s - es).abs() <= 1e-6 * es.abs().max(1.0));
            prop_assert!((got.o - eo).abs() <= 1e-6 * eo.abs().max(1.0));
        }
    }
}
