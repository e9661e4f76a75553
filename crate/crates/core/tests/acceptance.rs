//! Acceptance checks. Each test prints one PASS/FAIL line with its timing and
//! then asserts both the tolerance and the time limit.

use std::time::{Duration, Instant};

use effdepth_core::backends::{DepthBackend, DepthRequest, SceneKind, SyntheticBackend, SyntheticScene};
use effdepth_core::bimodal::BimodalParams;
use effdepth_core::boost::{blend, plan_tiles, simple_boost, solve_alignment, BoostConfig};
use effdepth_core::formats;
use effdepth_core::grid::{self, DepthGrid, Image, Rect};
use effdepth_core::losses::{laplacian, loss_ssi, LossBreakdown, LossWeights};
use effdepth_core::metrics::{self, EvalConfig, OrdinalPair, Relation};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: u32, title: &str, ok: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let pass = ok && elapsed < limit;
    println!(
        "[{}] criterion {id:>2}: {title} ({:.3}s / limit {:.0}s) {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    assert!(ok, "criterion {id} tolerance not met: {detail}");
    assert!(elapsed < limit, "criterion {id} took {elapsed:?}, limit {limit:?}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative error with an absolute floor of one unit for values near zero.
fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

#[test]
fn criterion_01_alignment_oracle() {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for case in 0..1000 {
        let (w, h) = (r.random_range(2..=64usize), r.random_range(2..=64usize));
        // Values are k / 2^16 with |k| < 2^22: exact in f32, and the normal
        // equations can be solved exactly in integer arithmetic.
        let mut kr = Vec::with_capacity(w * h);
        let mut kp = Vec::with_capacity(w * h);
        for _ in 0..w * h {
            kr.push(r.random_range(-(1i64 << 22) + 1..(1i64 << 22)));
            kp.push(r.random_range(-(1i64 << 22) + 1..(1i64 << 22)));
        }
        let mask: Option<Vec<bool>> = (case % 2 == 1).then(|| {
            let mut m: Vec<bool> = (0..w * h).map(|_| r.random::<f64>() > 0.2).collect();
            m[0] = true;
            m[1] = true;
            m
        });
        let to_f32 = |k: &[i64]| k.iter().map(|&v| v as f32 / 65536.0).collect::<Vec<f32>>();
        let reference = DepthGrid::with_mask(w, h, to_f32(&kr), mask.clone()).unwrap();
        let patch = DepthGrid::new(w, h, to_f32(&kp)).unwrap();

        let (mut n, mut sp, mut sr, mut spp, mut spr) = (0i128, 0i128, 0i128, 0i128, 0i128);
        for i in 0..w * h {
            if mask.as_ref().is_some_and(|m| !m[i]) {
                continue;
            }
            let (p, q) = (kp[i] as i128, kr[i] as i128);
            n += 1;
            sp += p;
            sr += q;
            spp += p * p;
            spr += p * q;
        }
        let det = n * spp - sp * sp;
        if det == 0 {
            continue;
        }
        let s_want = (n * spr - sp * sr) as f64 / det as f64;
        let o_want = (spp * sr - sp * spr) as f64 / det as f64 / 65536.0;
        let got = solve_alignment(&reference, &patch).unwrap();
        worst = worst.max(rel_err(got.s, s_want)).max(rel_err(got.o, o_want));
        checked += 1;
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "closed-form alignment vs exact normal equations",
        worst <= 1e-9 && checked >= 990,
        elapsed,
        Duration::from_secs(5),
        &format!("{checked} pairs, worst relative error {worst:.3e}"),
    );
}

#[test]
fn criterion_02_affine_invariance() {
    let start = Instant::now();
    let mut r = rng(202);
    let (mut worst_loss, mut worst_metric) = (0.0f64, 0.0f64);
    let cfg = EvalConfig::default();
    for _ in 0..200 {
        let (w, h) = (r.random_range(3..=40usize), r.random_range(3..=40usize));
        let g = DepthGrid::from_fn(w, h, |_, _| r.random_range(2.0f32..100.0)).unwrap();
        let (a, b) = (r.random_range(0.1f64..10.0), r.random_range(-5.0f64..5.0));
        let moved = g.map(|v| (a * v as f64 + b) as f32).unwrap();
        worst_loss = worst_loss.max(loss_ssi(&moved, &g).unwrap());

        let gt = DepthGrid::from_fn(w, h, |_, _| r.random_range(0.05f32..1.0)).unwrap();
        let pred = DepthGrid::from_fn(w, h, |_, _| r.random_range(0.05f32..1.0)).unwrap();
        let (a, b) = (r.random_range(0.1f64..10.0), r.random_range(-0.5f64..2.0));
        let pred2 = pred.map(|v| (a * v as f64 + b) as f32).unwrap();
        let r0 = metrics::evaluate_sample(&pred, Some(&gt), None, &cfg).unwrap();
        let r1 = metrics::evaluate_sample(&pred2, Some(&gt), None, &cfg).unwrap();
        worst_metric = worst_metric
            .max((r0.abs_rel.unwrap() - r1.abs_rel.unwrap()).abs())
            .max((r0.one_minus_delta1_pct.unwrap() - r1.one_minus_delta1_pct.unwrap()).abs());
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        "loss_ssi and AbsRel/delta1 invariant under positive affine maps",
        worst_loss < 1e-6 && worst_metric < 1e-6,
        elapsed,
        Duration::from_secs(5),
        &format!("max loss_ssi {worst_loss:.3e}, max metric change {worst_metric:.3e}"),
    );
}

fn naive_laplacian(g: &DepthGrid) -> Vec<f64> {
    let (w, h) = g.dims();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    let k = if dx == 0 && dy == 0 { 8.0 } else { -1.0 };
                    acc += k * g.get(xx, yy) as f64;
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

#[test]
fn criterion_03_laplacian_oracle() {
    let start = Instant::now();
    let mut r = rng(303);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (w, h) = (r.random_range(3..=32usize), r.random_range(3..=32usize));
        let g = DepthGrid::from_fn(w, h, |_, _| r.random::<f32>()).unwrap();
        let got = laplacian(&g).unwrap();
        for (a, b) in got.values().iter().zip(naive_laplacian(&g)) {
            worst = worst.max((*a as f64 - b).abs());
        }
    }
    let mut impulse = DepthGrid::filled(5, 5, 0.0).unwrap().into_values();
    impulse[12] = 1.0;
    let got = laplacian(&DepthGrid::new(5, 5, impulse).unwrap()).unwrap();
    let impulse_ok = (0..5usize).all(|y| {
        (0..5usize).all(|x| {
            let want = match (x.abs_diff(2), y.abs_diff(2)) {
                (0, 0) => 8.0,
                (dx, dy) if dx <= 1 && dy <= 1 => -1.0,
                _ => 0.0,
            };
            got.get(x, y) == want
        })
    });
    let constant_ok = laplacian(&DepthGrid::filled(7, 4, 3.25).unwrap())
        .unwrap()
        .values()
        .iter()
        .all(|&v| v == 0.0);
    let elapsed = start.elapsed();
    verdict(
        3,
        "Laplacian vs nested-loop convolution with replicate padding",
        worst <= 1e-6 && impulse_ok && constant_ok,
        elapsed,
        Duration::from_secs(2),
        &format!("max abs error {worst:.3e}, impulse exact {impulse_ok}, constant exact {constant_ok}"),
    );
}

fn mixture(pi: f64, mu1: f64, b1: f64, mu2: f64, b2: f64, d: f64) -> f64 {
    let l1 = (-(d - mu1).abs() / b1).exp() / (2.0 * b1);
    let l2 = (-(d - mu2).abs() / b2).exp() / (2.0 * b2);
    pi * l1 + (1.0 - pi) * l2
}

#[test]
fn criterion_04_bimodal_decode() {
    let start = Instant::now();
    let mut r = rng(404);
    let (mut agree, mut ambiguous) = (0, 0);
    for _ in 0..10_000 {
        let v = [
            r.random::<f32>(),
            r.random_range(-10.0f32..10.0),
            r.random_range(0.01f32..5.0),
            r.random_range(-10.0f32..10.0),
            r.random_range(0.01f32..5.0),
        ];
        let p = BimodalParams::from_array(v).unwrap();
        let [pi, mu1, b1, mu2, b2] = v.map(|x| x as f64);
        let (d1, d2) = (mixture(pi, mu1, b1, mu2, b2, mu1), mixture(pi, mu1, b1, mu2, b2, mu2));
        // Rounding-level differences between two formula orderings are not decidable.
        if (d1 - d2).abs() <= 1e-12 * d1.max(d2) {
            ambiguous += 1;
            continue;
        }
        let want = if d2 > d1 { v[3] } else { v[1] };
        if p.decode() == want {
            agree += 1;
        }
    }
    let mut ties = 0;
    let mut ties_ok = 0;
    for k in 0..12 {
        let b = 0.1 + 0.4 * k as f32;
        let (mu1, mu2) = (k as f32 - 3.0, 7.5 - 2.0 * k as f32);
        let p = BimodalParams::new(0.5, mu1, b, mu2, b).unwrap();
        assert_eq!(p.density(mu1 as f64), p.density(mu2 as f64));
        ties += 1;
        if p.decode() == mu1 {
            ties_ok += 1;
        }
    }
    let decided = 10_000 - ambiguous;
    let elapsed = start.elapsed();
    verdict(
        4,
        "bimodal decode vs brute-force mixture argmax",
        agree == decided && ambiguous <= 10 && ties >= 10 && ties_ok == ties,
        elapsed,
        Duration::from_secs(2),
        &format!("{agree}/{decided} agree ({ambiguous} rounding ties skipped), {ties_ok}/{ties} symmetric ties pick mu1"),
    );
}

fn axis_covers(starts: &[usize], len: usize, extent: usize) -> bool {
    let mut reach = 0;
    for &s in starts {
        if s > reach || s + len > extent {
            return false;
        }
        reach = reach.max(s + len);
    }
    reach == extent
}

#[test]
fn criterion_05_tile_plan() {
    let start = Instant::now();
    let mut r = rng(505);
    let cfg = BoostConfig::default();
    let mut failures = Vec::new();
    let mut worst_sum = 0.0f64;
    for case in 0..500 {
        let (w, h) = (r.random_range(1..=4096usize), r.random_range(1..=4096usize));
        let plan = plan_tiles(w, h, &cfg);
        let cols = &plan.cols.starts;
        let rows = &plan.rows.starts;
        let product_ok = plan.tiles.len() == cols.len() * rows.len()
            && plan.tiles.iter().all(|t| t.fits_within(w, h));
        let cover_ok = axis_covers(cols, plan.cols.tile_len, w) && axis_covers(rows, plan.rows.tile_len, h);
        let overlap_ok = [(cols, plan.cols.tile_len), (rows, plan.rows.tile_len)]
            .iter()
            .all(|(s, len)| s.windows(2).all(|p| p[0] + len >= p[1] + cfg.overlap));
        if !(product_ok && cover_ok && overlap_ok) {
            failures.push((w, h));
        }
        if case < 20 {
            let mut sum = vec![0.0f64; w * h];
            for (t, rect) in plan.tiles.iter().enumerate() {
                for y in rect.y..rect.bottom() {
                    for x in rect.x..rect.right() {
                        sum[y * w + x] += plan.weight(t, x, y);
                    }
                }
            }
            for s in sum {
                worst_sum = worst_sum.max((s - 1.0).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        5,
        "tile coverage, overlap and partition of unity",
        failures.is_empty() && worst_sum <= 1e-6,
        elapsed,
        Duration::from_secs(30),
        &format!("{} bad plans {:?}, max |sum w - 1| {worst_sum:.3e}", failures.len(), failures.first()),
    );
}

fn rmse_after_global_alignment(pred: &DepthGrid, truth: &DepthGrid) -> f64 {
    let a = solve_alignment(truth, pred).unwrap();
    let n = truth.len() as f64;
    let sse: f64 = pred
        .values()
        .iter()
        .zip(truth.values())
        .map(|(&p, &t)| (a.s * p as f64 + a.o - t as f64).powi(2))
        .sum();
    (sse / n).sqrt()
}

#[test]
fn criterion_06_boost_fidelity() {
    let (w, h) = (1920usize, 1280usize);
    let scene = SyntheticScene::new(SceneKind::Sinusoid).with_jitter(42, 0.5);
    let backend = SyntheticBackend::new(scene.clone());
    let image = Image::gray(w, h, vec![0.5; w * h]).unwrap();
    let cfg = BoostConfig {
        jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
        ..BoostConfig::default()
    };

    let start = Instant::now();
    let out = simple_boost(&image, "scene", &backend, &cfg).unwrap();
    let elapsed = start.elapsed();

    let truth = scene.ground_truth(w, h);
    let (lo, hi) = grid::valid_range(&truth).unwrap();
    let range = hi - lo;
    let boosted = rmse_after_global_alignment(&out.depth, &truth);

    // Same tiles, blended without per-tile alignment.
    let plan = plan_tiles(w, h, &cfg);
    let raw: Vec<DepthGrid> = plan
        .tiles
        .iter()
        .map(|&t| {
            let crop = image.crop(t).unwrap();
            backend
                .infer(&DepthRequest {
                    image: &crop,
                    image_id: "scene",
                    source_dims: (w, h),
                    region: t,
                    out_w: t.w,
                    out_h: t.h,
                })
                .unwrap()
        })
        .collect();
    let naive = rmse_after_global_alignment(&blend(&plan, &raw).unwrap(), &truth);

    verdict(
        6,
        "boosted RMSE <= 1e-3 range and naive mosaic > 1e-1 range on a 1920x1280 scene",
        boosted <= 1e-3 * range && naive > 1e-1 * range && out.report.tiles.len() == plan.tiles.len(),
        elapsed,
        Duration::from_secs(60),
        &format!(
            "{} tiles, boosted {:.3e} range, naive {:.3e} range",
            plan.tiles.len(),
            boosted / range,
            naive / range
        ),
    );
}

#[test]
fn criterion_07_passthrough() {
    let start = Instant::now();
    let mut r = rng(707);
    let backend = SyntheticBackend::new(SyntheticScene::new(SceneKind::Radial).with_jitter(7, 0.3));
    let cfg = BoostConfig::default();
    let mut sizes: Vec<(usize, usize)> = vec![(960, 960), (1, 1), (960, 17)];
    while sizes.len() < 20 {
        sizes.push((r.random_range(1..=960usize), r.random_range(1..=960usize)));
    }
    let mut bad = Vec::new();
    for &(w, h) in &sizes {
        let image = Image::gray(w, h, vec![0.25; w * h]).unwrap();
        let out = simple_boost(&image, "p", &backend, &cfg).unwrap();
        let single = backend
            .infer(&DepthRequest {
                image: &image,
                image_id: "p",
                source_dims: (w, h),
                region: Rect::full(w, h),
                out_w: w,
                out_h: h,
            })
            .unwrap();
        let same = out.depth.dims() == single.dims()
            && out
                .depth
                .values()
                .iter()
                .zip(single.values())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !(same && out.report.passthrough && out.report.backend_calls == 1) {
            bad.push((w, h));
        }
    }
    let elapsed = start.elapsed();
    verdict(
        7,
        "images up to 960 px pass through bit-identically",
        bad.is_empty(),
        elapsed,
        Duration::from_secs(10),
        &format!("{} sizes, mismatches {bad:?}", sizes.len()),
    );
}

fn inv_depth(depths: &[f32]) -> DepthGrid {
    DepthGrid::new(depths.len(), 1, depths.iter().map(|d| 1.0 / d).collect()).unwrap()
}

#[test]
fn criterion_08_metric_examples() {
    let start = Instant::now();
    let no_align = EvalConfig {
        align: metrics::AlignMode::None,
        ..EvalConfig::default()
    };
    let abs_rel = metrics::abs_rel(
        &inv_depth(&[2.0, 3.0, 5.0, 8.0]),
        &inv_depth(&[2.0, 4.0, 5.0, 10.0]),
        &no_align,
    )
    .unwrap();
    let delta = metrics::delta1(
        &inv_depth(&[10.0, 12.0, 13.0, 20.0]),
        &inv_depth(&[10.0; 4]),
        &no_align,
    )
    .unwrap();
    let pred = DepthGrid::new(4, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let pair = |a, b, relation| OrdinalPair { a, b, relation };
    let pairs = [
        pair((1, 0), (0, 0), Relation::ACloser),
        pair((0, 0), (3, 0), Relation::BCloser),
        pair((3, 0), (2, 0), Relation::BCloser),
        pair((1, 0), (2, 0), Relation::BCloser),
    ];
    let whdr = metrics::whdr(&pred, &pairs, &EvalConfig::default()).unwrap();
    let elapsed = start.elapsed();
    verdict(
        8,
        "AbsRel, delta1 and WHDR hand examples",
        abs_rel == 0.1125 && delta == 50.0 && whdr == 0.25,
        elapsed,
        Duration::from_secs(1),
        &format!("AbsRel {abs_rel}, 100(1-d1) {delta}, WHDR {whdr}"),
    );
}

#[test]
fn criterion_09_format_roundtrips() {
    let start = Instant::now();
    let mut r = rng(909);
    let (mut exact_fail, mut png_fail) = (0, 0);
    let mut worst_png = 0.0f64;
    for case in 0..1000 {
        let (w, h) = (r.random_range(1..=24usize), r.random_range(1..=24usize));
        // Arbitrary finite bit patterns, negatives and subnormals included.
        let vals: Vec<f32> = (0..w * h)
            .map(|_| loop {
                let v = f32::from_bits(r.random::<u32>());
                if v.is_finite() {
                    break v;
                }
            })
            .collect();
        let mask = (case % 3 == 0 && w * h > 1).then(|| {
            let mut m = vec![true; w * h];
            m[r.random_range(0..w * h)] = false;
            m
        });
        let g = DepthGrid::with_mask(w, h, vals, mask).unwrap();
        let same_bits = |b: &DepthGrid| {
            b.dims() == g.dims()
                && b.mask() == g.mask()
                && (0..g.len()).all(|i| !g.is_valid_index(i) || b.values()[i].to_bits() == g.values()[i].to_bits())
        };
        let pfm = formats::read_pfm(&formats::write_pfm(&g)).unwrap();
        let raw = formats::read_raw_f32le(&formats::write_raw_f32le(&g)).unwrap();
        if !(same_bits(&pfm) && same_bits(&raw)) {
            exact_fail += 1;
        }

        let scale = 10f32.powi(r.random_range(-3..4));
        let q = DepthGrid::with_mask(
            w,
            h,
            (0..w * h).map(|_| r.random_range(-1.0f32..1.0) * scale).collect(),
            g.mask().map(<[bool]>::to_vec),
        )
        .unwrap();
        let (bytes, side) = formats::write_png16(&q).unwrap();
        let back = formats::read_png16(&bytes, &side).unwrap();
        let (lo, hi) = grid::valid_range(&q).unwrap();
        let bound = (hi - lo) / 65535.0;
        for i in 0..q.len() {
            if q.is_valid_index(i) {
                let e = (back.values()[i] as f64 - q.values()[i] as f64).abs();
                if hi > lo {
                    worst_png = worst_png.max(e / (hi - lo));
                }
                if e > bound {
                    png_fail += 1;
                }
            }
        }
        if back.mask() != q.mask() {
            png_fail += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        9,
        "PFM/RAW bit-exact and PNG16 within (max-min)/65535",
        exact_fail == 0 && png_fail == 0,
        elapsed,
        Duration::from_secs(10),
        &format!("{exact_fail} lossless failures, {png_fail} PNG16 violations, worst PNG16 error {worst_png:.3e} range"),
    );
}

#[test]
fn criterion_10_loss_combination() {
    let start = Instant::now();
    let w = LossWeights::default();
    let total = LossBreakdown::from_components(1.0, 2.0, 0.5, &w).total;
    let defaults = (w.alpha_l, w.alpha_edge, w.alpha_lpips) == (0.4, 0.2, 0.4);
    let elapsed = start.elapsed();
    verdict(
        10,
        "weighted loss combination and default weights",
        total == 1.0 && defaults,
        elapsed,
        Duration::from_secs(1),
        &format!("total {total}, weights ({}, {}, {})", w.alpha_l, w.alpha_edge, w.alpha_lpips),
    );
}
