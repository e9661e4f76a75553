//! Analytic scenes. The image pixels are ignored; inverse depth is evaluated
//! in closed form at the source-image coordinate of every output pixel centre.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BackendError, DepthBackend, DepthRequest};
use crate::grid::{DepthGrid, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// `base + amp * x / W + tilt * y / H`
    Ramp,
    /// `base + amp * exp(-r^2 / 2 sigma^2)` around the image centre, `sigma = min(W, H) / (4 freq)`
    Radial,
    /// `base + amp * sin(2 pi freq x / W) * cos(2 pi freq y / H)`
    Sinusoid,
}

/// Per-call affine corruption `s * truth + o`, keyed by the request rectangle,
/// output size and seed. `s` lies in `[1 - a, 1 + a]` and `o` in `[-a, a]`,
/// both multiples of 1/1024.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub seed: u64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub kind: SceneKind,
    pub base: f64,
    pub amp: f64,
    pub freq: f64,
    pub tilt: f64,
    pub jitter: Option<Jitter>,
}

impl SyntheticScene {
    pub fn new(kind: SceneKind) -> Self {
        let base = match kind {
            SceneKind::Ramp => 1.0,
            _ => 2.0,
        };
        SyntheticScene {
            kind,
            base,
            amp: 1.0,
            freq: 1.0,
            tilt: 0.0,
            jitter: None,
        }
    }

    pub fn with_jitter(mut self, seed: u64, amplitude: f64) -> Self {
        self.jitter = Some(Jitter { seed, amplitude });
        self
    }

    /// Checks the scene stays finite and positive everywhere.
    pub fn validate(&self) -> Result<(), String> {
        let finite = [self.base, self.amp, self.freq, self.tilt].iter().all(|v| v.is_finite());
        if !finite {
            return Err("scene parameters must be finite".into());
        }
        if !(self.freq > 0.0) {
            return Err("freq must be positive".into());
        }
        let positive = match self.kind {
            SceneKind::Ramp => self.base > 0.0 && self.base + self.amp.min(0.0) + self.tilt.min(0.0) > 0.0,
            _ => self.base > self.amp.abs(),
        };
        if !positive {
            return Err("scene inverse depth must stay positive (raise base)".into());
        }
        if let Some(j) = self.jitter {
            if !(0.0..1.0).contains(&j.amplitude) {
                return Err("jitter amplitude must lie in [0, 1)".into());
            }
        }
        Ok(())
    }

    /// Inverse depth at source coordinate `(u, v)` of a `w x h` image.
    pub fn value(&self, u: f64, v: f64, w: usize, h: usize) -> f64 {
        let (wf, hf) = (w as f64, h as f64);
        match self.kind {
            SceneKind::Ramp => self.base + self.amp * u / wf + self.tilt * v / hf,
            SceneKind::Radial => {
                let (cx, cy) = ((wf - 1.0) / 2.0, (hf - 1.0) / 2.0);
                let sigma = wf.min(hf) / (4.0 * self.freq);
                let r2 = (u - cx).powi(2) + (v - cy).powi(2);
                self.base + self.amp * (-r2 / (2.0 * sigma * sigma)).exp()
            }
            SceneKind::Sinusoid => {
                let tau = std::f64::consts::TAU * self.freq;
                self.base + self.amp * (tau * u / wf).sin() * (tau * v / hf).cos()
            }
        }
    }

    /// Uncorrupted rendering of `region` at `out_w x out_h`.
    pub fn render(&self, source: (usize, usize), region: Rect, out_w: usize, out_h: usize) -> DepthGrid {
        let sx = region.w as f64 / out_w as f64;
        let sy = region.h as f64 / out_h as f64;
        DepthGrid::from_fn(out_w, out_h, |i, j| {
            let u = region.x as f64 + (i as f64 + 0.5) * sx - 0.5;
            let v = region.y as f64 + (j as f64 + 0.5) * sy - 0.5;
            self.value(u, v, source.0, source.1) as f32
        })
        .expect("analytic scene is finite")
    }

    /// Full-resolution truth for a `w x h` image.
    pub fn ground_truth(&self, w: usize, h: usize) -> DepthGrid {
        self.render((w, h), Rect::full(w, h), w, h)
    }

    /// The `(s, o)` applied to a request, or identity without jitter.
    pub fn jitter_for(&self, region: Rect, out_w: usize, out_h: usize) -> (f64, f64) {
        let Some(j) = self.jitter else {
            return (1.0, 0.0);
        };
        let key = [region.x, region.y, region.w, region.h, out_w, out_h]
            .iter()
            .fold(splitmix64(j.seed), |acc, &v| splitmix64(acc ^ v as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let q = |v: f64| (v * 1024.0).round() / 1024.0;
        (
            q(1.0 + j.amplitude * (2.0 * r1 - 1.0)),
            q(j.amplitude * (2.0 * r2 - 1.0)),
        )
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    scene: SyntheticScene,
    concurrency: usize,
    native_size: Option<usize>,
}

impl SyntheticBackend {
    /// Panics on an invalid scene; use [`SyntheticScene::validate`] first for untrusted input.
    pub fn new(scene: SyntheticScene) -> Self {
        if let Err(e) = scene.validate() {
            panic!("invalid synthetic scene: {e}");
        }
        SyntheticBackend {
            scene,
            concurrency: 64,
            native_size: None,
        }
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.concurrency = n.max(1);
        self
    }

    pub fn with_native_size(mut self, n: Option<usize>) -> Self {
        self.native_size = n;
        self
    }

    pub fn scene(&self) -> &SyntheticScene {
        &self.scene
    }
}

impl DepthBackend for SyntheticBackend {
    fn infer(&self, req: &DepthRequest<'_>) -> Result<DepthGrid, BackendError> {
        if req.out_w == 0 || req.out_h == 0 || req.region.w == 0 || req.region.h == 0 {
            return Err(BackendError::Contract("empty request".into()));
        }
        let truth = self.scene.render(req.source_dims, req.region, req.out_w, req.out_h);
        let (s, o) = self.scene.jitter_for(req.region, req.out_w, req.out_h);
        if (s, o) == (1.0, 0.0) {
            return Ok(truth);
        }
        truth
            .map(|v| (s * v as f64 + o) as f32)
            .map_err(|e| BackendError::Other(e.to_string()))
    }

    fn max_concurrency(&self) -> usize {
        self.concurrency
    }

    fn native_size(&self) -> Option<usize> {
        self.native_size
    }
}
