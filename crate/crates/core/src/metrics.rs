//! Zero-shot evaluation: AbsRel, `100 * (1 - delta1)` and WHDR.
//!
//! Predictions and ground truth are inverse-depth grids. Predictions are
//! aligned to ground truth by least squares in inverse-depth space, then
//! both are converted to depth for the dense metrics.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boost::{solve_alignment_with, AffineAlignment};
use crate::formats::{self, FormatError, Manifest};
use crate::grid::{DepthGrid, GridError};

/// Floor applied to aligned inverse depth before inversion.
pub const INV_DEPTH_FLOOR: f32 = 1e-8;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("need at least {needed} valid pixels, found {found}")]
    TooFewPixels { needed: usize, found: usize },
    #[error("prediction is constant over the valid pixels")]
    DegeneratePrediction,
    #[error("no ordinal pairs")]
    EmptyPairs,
    #[error("pair {index} references pixel ({x}, {y}), outside or invalid in a {w}x{h} prediction")]
    PairOutOfBounds {
        index: usize,
        x: usize,
        y: usize,
        w: usize,
        h: usize,
    },
    #[error("entry has no prediction path")]
    NoPrediction,
    #[error("invalid evaluation config: {0}")]
    Config(String),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    ACloser,
    BCloser,
}

/// Ordinal label: which of two pixels `(x, y)` is closer to the camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrdinalPair {
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub relation: Relation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    LeastSquaresInvDepth,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalConfig {
    pub delta_threshold: f64,
    /// Ground-truth pixels deeper than this are ignored.
    pub depth_cap: Option<f64>,
    pub align: AlignMode,
    /// Relative inverse-depth gap under which a pair is predicted "equal".
    pub whdr_margin: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            delta_threshold: 1.25,
            depth_cap: None,
            align: AlignMode::LeastSquaresInvDepth,
            whdr_margin: 0.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_threshold > 1.0 && self.delta_threshold.is_finite()) {
            return Err(MetricsError::Config("delta threshold must exceed 1".into()));
        }
        if !(self.whdr_margin >= 0.0 && self.whdr_margin.is_finite()) {
            return Err(MetricsError::Config("WHDR margin must be nonnegative".into()));
        }
        if let Some(c) = self.depth_cap {
            if !(c > 0.0) {
                return Err(MetricsError::Config("depth cap must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub abs_rel: Option<f64>,
    pub one_minus_delta1_pct: Option<f64>,
    pub whdr: Option<f64>,
    pub n_valid: usize,
    pub alignment: Option<AffineAlignment>,
}

fn to_depth(inv: f32) -> f64 {
    (1.0f32 / inv.max(INV_DEPTH_FLOOR)) as f64
}

/// Pixels usable for dense metrics: valid in both grids, positive ground
/// truth, and within the depth cap.
fn eval_mask(pred: &DepthGrid, gt: &DepthGrid, cfg: &EvalConfig) -> Result<Vec<bool>> {
    pred.ensure_same_dims(gt)?;
    Ok((0..gt.len())
        .map(|i| {
            let g = gt.values()[i];
            pred.is_valid_index(i)
                && gt.is_valid_index(i)
                && g > 0.0
                && cfg.depth_cap.is_none_or(|c| to_depth(g) <= c)
        })
        .collect())
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&m| m).count()
}

/// Returns the prediction mapped onto the ground truth's inverse-depth scale,
/// floored at [`INV_DEPTH_FLOOR`], together with the fitted transform.
pub fn align_prediction(
    pred: &DepthGrid,
    gt: &DepthGrid,
    cfg: &EvalConfig,
) -> Result<(DepthGrid, Option<AffineAlignment>)> {
    if cfg.align == AlignMode::None {
        return Ok((pred.clone(), None));
    }
    let mask = eval_mask(pred, gt, cfg)?;
    let n = count(&mask);
    if n < 2 {
        return Err(MetricsError::TooFewPixels { needed: 2, found: n });
    }
    let sel: Vec<f64> = pred
        .values()
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v as f64)
        .collect();
    let mean = sel.iter().sum::<f64>() / n as f64;
    let var = sel.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if !(var > 1e-12 * mean * mean) || var == 0.0 {
        return Err(MetricsError::DegeneratePrediction);
    }
    let target = gt.clone().with_replaced_mask(Some(mask))?;
    let a = solve_alignment_with(&target, pred, 0.0).map_err(|_| MetricsError::TooFewPixels {
        needed: 2,
        found: 0,
    })?;
    let aligned = pred.map(|v| ((a.s * v as f64 + a.o) as f32).max(INV_DEPTH_FLOOR))?;
    Ok((aligned, Some(a)))
}

fn depth_pairs(pred: &DepthGrid, gt: &DepthGrid, cfg: &EvalConfig) -> Result<Vec<(f64, f64)>> {
    let mask = eval_mask(pred, gt, cfg)?;
    let v: Vec<(f64, f64)> = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| (to_depth(pred.values()[i]), to_depth(gt.values()[i])))
        .collect();
    if v.is_empty() {
        return Err(MetricsError::TooFewPixels { needed: 1, found: 0 });
    }
    Ok(v)
}

/// Mean of `|d_pred - d_gt| / d_gt` over valid pixels.
pub fn abs_rel(pred_aligned: &DepthGrid, gt: &DepthGrid, cfg: &EvalConfig) -> Result<f64> {
    let v = depth_pairs(pred_aligned, gt, cfg)?;
    Ok(neumaier_sum(v.iter().map(|(p, g)| (p - g).abs() / g)) / v.len() as f64)
}

/// `100 * (1 - delta1)`, where delta1 is the fraction of pixels with depth
/// ratio under the threshold.
pub fn delta1(pred_aligned: &DepthGrid, gt: &DepthGrid, cfg: &EvalConfig) -> Result<f64> {
    let v = depth_pairs(pred_aligned, gt, cfg)?;
    let good = v
        .iter()
        .filter(|(p, g)| (p / g).max(g / p) < cfg.delta_threshold)
        .count();
    Ok(100.0 * (1.0 - good as f64 / v.len() as f64))
}

/// Fraction of pairs whose predicted ordering disagrees with the label.
/// Pairs predicted "equal" (within the margin) always disagree.
pub fn whdr(pred: &DepthGrid, pairs: &[OrdinalPair], cfg: &EvalConfig) -> Result<f64> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyPairs);
    }
    let (w, h) = pred.dims();
    let fetch = |index: usize, (x, y): (usize, usize)| -> Result<f64> {
        if x < w && y < h && pred.is_valid(x, y) {
            Ok(pred.get(x, y) as f64)
        } else {
            Err(MetricsError::PairOutOfBounds { index, x, y, w, h })
        }
    };
    let mut wrong = 0usize;
    for (i, p) in pairs.iter().enumerate() {
        let (ia, ib) = (fetch(i, p.a)?, fetch(i, p.b)?);
        let predicted = if ia - ib > cfg.whdr_margin * ib.abs() {
            Some(Relation::ACloser)
        } else if ib - ia > cfg.whdr_margin * ia.abs() {
            Some(Relation::BCloser)
        } else {
            None
        };
        if predicted != Some(p.relation) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / pairs.len() as f64)
}

/// Metrics for one sample; dense metrics need `gt`, WHDR needs `pairs`.
pub fn evaluate_sample(
    pred: &DepthGrid,
    gt: Option<&DepthGrid>,
    pairs: Option<&[OrdinalPair]>,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let mut report = MetricsReport {
        abs_rel: None,
        one_minus_delta1_pct: None,
        whdr: None,
        n_valid: 0,
        alignment: None,
    };
    if let Some(gt) = gt {
        let (aligned, alignment) = align_prediction(pred, gt, cfg)?;
        report.abs_rel = Some(abs_rel(&aligned, gt, cfg)?);
        report.one_minus_delta1_pct = Some(delta1(&aligned, gt, cfg)?);
        report.n_valid = count(&eval_mask(&aligned, gt, cfg)?);
        report.alignment = alignment;
    }
    if let Some(pairs) = pairs {
        report.whdr = Some(whdr(pred, pairs, cfg)?);
        if gt.is_none() {
            report.n_valid = pairs.len();
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleResult {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Unweighted means over the samples that produced each metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    pub abs_rel: Option<f64>,
    pub one_minus_delta1_pct: Option<f64>,
    pub whdr: Option<f64>,
    pub n_samples: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetReport {
    pub samples: Vec<SampleResult>,
    pub aggregate: AggregateReport,
}

impl DatasetReport {
    pub fn has_failures(&self) -> bool {
        self.aggregate.n_failed > 0
    }
}

/// Compensated sum; keeps dataset means independent of accumulation order
/// far below the reporting precision.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn mean_of(values: Vec<f64>) -> Option<f64> {
    (!values.is_empty()).then(|| neumaier_sum(values.iter().copied()) / values.len() as f64)
}

pub fn aggregate(samples: &[SampleResult]) -> AggregateReport {
    let reports: Vec<&MetricsReport> = samples.iter().filter_map(|s| s.report.as_ref()).collect();
    AggregateReport {
        abs_rel: mean_of(reports.iter().filter_map(|r| r.abs_rel).collect()),
        one_minus_delta1_pct: mean_of(reports.iter().filter_map(|r| r.one_minus_delta1_pct).collect()),
        whdr: mean_of(reports.iter().filter_map(|r| r.whdr).collect()),
        n_samples: reports.len(),
        n_failed: samples.len() - reports.len(),
    }
}

fn evaluate_entry(manifest: &Manifest, idx: usize, cfg: &EvalConfig) -> Result<MetricsReport> {
    let e = &manifest.entries[idx];
    let cfg = EvalConfig {
        depth_cap: e.depth_cap.or(cfg.depth_cap),
        ..*cfg
    };
    let pred_path = e.pred_path.as_ref().ok_or(MetricsError::NoPrediction)?;
    let pred = formats::read_depth_file(&manifest.resolve(pred_path))?;
    let gt = match &e.gt_path {
        Some(p) => Some(formats::read_depth_file(&manifest.resolve(p))?),
        None => None,
    };
    let pairs = match &e.pairs_path {
        Some(p) => {
            let path = manifest.resolve(p);
            let bytes = std::fs::read(&path).map_err(|source| FormatError::Io { path, source })?;
            Some(formats::read_pairs(&bytes)?)
        }
        None => None,
    };
    evaluate_sample(&pred, gt.as_ref(), pairs.as_deref(), &cfg)
}

/// Evaluates every manifest entry on up to `jobs` threads. Per-sample
/// failures are recorded and excluded from the aggregate; results keep
/// manifest order.
pub fn evaluate_dataset(manifest: &Manifest, cfg: &EvalConfig, jobs: usize) -> Result<DatasetReport> {
    cfg.validate()?;
    manifest.validate_for_eval()?;
    let n = manifest.entries.len();
    let slots: Mutex<Vec<Option<Result<MetricsReport>>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(n.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = evaluate_entry(manifest, i, cfg);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let samples: Vec<SampleResult> = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .zip(&manifest.entries)
        .map(|(r, e)| match r.expect("every entry evaluated") {
            Ok(report) => SampleResult {
                id: e.id.clone(),
                report: Some(report),
                error: None,
            },
            Err(err) => SampleResult {
                id: e.id.clone(),
                report: None,
                error: Some(err.to_string()),
            },
        })
        .collect();
    let aggregate = aggregate(&samples);
    Ok(DatasetReport { samples, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};

    fn inv(depths: &[f32]) -> DepthGrid {
        DepthGrid::new(depths.len(), 1, depths.iter().map(|d| 1.0 / d).collect()).unwrap()
    }

    fn no_align() -> EvalConfig {
        EvalConfig {
            align: AlignMode::None,
            ..Default::default()
        }
    }

    fn random_inv(w: usize, h: usize, seed: u64) -> DepthGrid {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DepthGrid::from_fn(w, h, |_, _| rng.random_range(0.05f32..1.0)).unwrap()
    }

    #[test]
    fn identical_prediction() {
        let g = random_inv(7, 5, 1);
        let (a, al) = align_prediction(&g, &g, &EvalConfig::default()).unwrap();
        let al = al.unwrap();
        assert!((al.s - 1.0).abs() < 1e-9 && al.o.abs() < 1e-9);
        for (x, y) in a.values().iter().zip(g.values()) {
            assert!((*x as f64 - *y as f64).abs() < 1e-9);
        }
        let r = evaluate_sample(&g, Some(&g), None, &EvalConfig::default()).unwrap();
        assert_eq!(r.abs_rel, Some(0.0));
        assert_eq!(r.one_minus_delta1_pct, Some(0.0));
    }

    #[test]
    fn half_prediction_aligns() {
        let g = random_inv(6, 6, 2);
        let half = g.map(|v| 0.5 * v).unwrap();
        let (a, _) = align_prediction(&half, &g, &EvalConfig::default()).unwrap();
        for (x, y) in a.values().iter().zip(g.values()) {
            assert!((*x as f64 - *y as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn abs_rel_examples() {
        let gt = inv(&[10.0; 6]);
        let pred = inv(&[11.0; 6]);
        assert!((abs_rel(&pred, &gt, &no_align()).unwrap() - 0.1).abs() < 1e-9);
        let v = abs_rel(&inv(&[2.0, 3.0, 5.0, 8.0]), &inv(&[2.0, 4.0, 5.0, 10.0]), &no_align()).unwrap();
        assert_eq!(v, 0.1125);
    }

    #[test]
    fn delta_examples() {
        let gt = inv(&[10.0; 4]);
        assert_eq!(delta1(&inv(&[13.0; 4]), &gt, &no_align()).unwrap(), 100.0);
        assert_eq!(delta1(&gt, &gt, &no_align()).unwrap(), 0.0);
        let mixed = inv(&[10.0, 12.0, 13.0, 20.0]);
        assert_eq!(delta1(&mixed, &gt, &no_align()).unwrap(), 50.0);
    }

    fn pair(a: (usize, usize), b: (usize, usize), relation: Relation) -> OrdinalPair {
        OrdinalPair { a, b, relation }
    }

    #[test]
    fn whdr_examples() {
        let p = DepthGrid::new(4, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let cfg = EvalConfig::default();
        let right = [
            pair((1, 0), (0, 0), Relation::ACloser),
            pair((0, 0), (3, 0), Relation::BCloser),
            pair((3, 0), (2, 0), Relation::ACloser),
            pair((1, 0), (2, 0), Relation::BCloser),
        ];
        assert_eq!(whdr(&p, &right, &cfg).unwrap(), 0.0);
        let flipped: Vec<_> = right
            .iter()
            .map(|q| pair(q.a, q.b, if q.relation == Relation::ACloser { Relation::BCloser } else { Relation::ACloser }))
            .collect();
        assert_eq!(whdr(&p, &flipped, &cfg).unwrap(), 1.0);
        let mut one_wrong = right;
        one_wrong[2] = flipped[2];
        assert_eq!(whdr(&p, &one_wrong, &cfg).unwrap(), 0.25);
        // Equal predictions always disagree.
        let flat = DepthGrid::filled(4, 1, 0.5).unwrap();
        assert_eq!(whdr(&flat, &right, &cfg).unwrap(), 1.0);
        let wide = EvalConfig { whdr_margin: 10.0, ..cfg };
        assert_eq!(whdr(&p, &right, &wide).unwrap(), 1.0);
        assert!(matches!(
            whdr(&p, &[pair((4, 0), (0, 0), Relation::ACloser)], &cfg),
            Err(MetricsError::PairOutOfBounds { index: 0, .. })
        ));
        assert!(matches!(whdr(&p, &[], &cfg), Err(MetricsError::EmptyPairs)));
    }

    #[test]
    fn depth_cap_masks_far_pixels() {
        let gt = inv(&[10.0, 100.0]);
        let pred = inv(&[10.0, 50.0]);
        let cfg = EvalConfig { depth_cap: Some(80.0), ..no_align() };
        assert_eq!(abs_rel(&pred, &gt, &cfg).unwrap(), 0.0);
        assert!(abs_rel(&pred, &gt, &no_align()).unwrap() > 0.2);
    }

    #[test]
    fn degenerate_and_empty() {
        let gt = random_inv(3, 3, 4);
        let flat = DepthGrid::filled(3, 3, 0.3).unwrap();
        assert!(matches!(
            align_prediction(&flat, &gt, &EvalConfig::default()),
            Err(MetricsError::DegeneratePrediction)
        ));
        let holes = DepthGrid::with_mask(2, 1, vec![0.5, 0.5], Some(vec![true, false])).unwrap();
        let two = random_inv(2, 1, 5);
        assert!(matches!(
            align_prediction(&two, &holes, &EvalConfig::default()),
            Err(MetricsError::TooFewPixels { .. })
        ));
        assert!(EvalConfig { delta_threshold: 1.0, ..Default::default() }.validate().is_err());
        assert!(EvalConfig { whdr_margin: -0.1, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn neumaier_beats_naive() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(neumaier_sum(v), 2.0);
    }

    proptest! {
        #[test]
        fn affine_invariance(seed in 0u64..10_000, a in 0.1f64..10.0, b in -0.5f64..2.0) {
            let gt = random_inv(9, 7, seed);
            let pred = random_inv(9, 7, seed + 1);
            let moved = pred.map(|v| (a * v as f64 + b) as f32).unwrap();
            let cfg = EvalConfig::default();
            let r0 = evaluate_sample(&pred, Some(&gt), None, &cfg).unwrap();
            let r1 = evaluate_sample(&moved, Some(&gt), None, &cfg).unwrap();
            prop_assert!((r0.abs_rel.unwrap() - r1.abs_rel.unwrap()).abs() < 1e-6);
            prop_assert!((r0.one_minus_delta1_pct.unwrap() - r1.one_minus_delta1_pct.unwrap()).abs() < 1e-6);
        }

        #[test]
        fn whdr_monotone_invariance(seed in 0u64..10_000, k in 0.5f32..3.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = random_inv(8, 8, seed);
            let pairs: Vec<OrdinalPair> = (0..30)
                .map(|_| {
                    let a = (rng.random_range(0..8usize), rng.random_range(0..8usize));
                    let mut b = (rng.random_range(0..8usize), rng.random_range(0..8usize));
                    if a == b { b = ((a.0 + 1) % 8, a.1); }
                    pair(a, b, if rng.random::<bool>() { Relation::ACloser } else { Relation::BCloser })
                })
                .collect();
            let cfg = EvalConfig::default();
            let m = p.map(|v| v.powf(k) + 3.0).unwrap();
            let (w0, w1) = (whdr(&p, &pairs, &cfg).unwrap(), whdr(&m, &pairs, &cfg).unwrap());
            prop_assert_eq!(w0, w1);
            prop_assert!((0.0..=1.0).contains(&w0));
        }

        #[test]
        fn reports_in_range(seed in 0u64..10_000) {
            let gt = random_inv(5, 5, seed);
            let pred = random_inv(5, 5, seed ^ 0xABCD);
            let r = evaluate_sample(&pred, Some(&gt), None, &EvalConfig::default()).unwrap();
            prop_assert!(r.abs_rel.unwrap() >= 0.0);
            let d = r.one_minus_delta1_pct.unwrap();
            prop_assert!((0.0..=100.0).contains(&d));
        }
    }
}
